//! Cyclic coordinate descent for the LASSO
//!
//! ```text
//! minimize (1/2n) ||y - X b||^2 + lambda ||b||_1
//! ```
//!
//! The solver works on the Gram form `G = X'X/n`, `c = X'y/n`, so one Gram
//! matrix serves every target sharing the same design (the 24 hourly
//! regressions of a window) and every point of a regularization path.
//! No intercept is fitted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LassoError {
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("penalty must be finite and nonnegative, got {0}")]
    BadLambda(f64),
    #[error("no rows")]
    NoRows,
    #[error("need at least one candidate penalty")]
    EmptyGrid,
    #[error("coordinate descent did not converge in {sweeps} sweeps (last change {last_change:e})")]
    NotConverged { coef: Vec<f64>, sweeps: usize, last_change: f64 },
    #[error("every candidate penalty produced a degenerate fit")]
    AllDegenerate,
}

const ANDERSON_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSettings {
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    pub sweeps: usize,
}

#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Gram-form view of a design matrix.
#[derive(Debug, Clone)]
pub struct GramDesign {
    gram: DMatrix<f64>,
    x: DMatrix<f64>,
    n: usize,
}

/// Gram-form view of one response against a [`GramDesign`].
#[derive(Debug, Clone)]
pub struct Response {
    xty: Vec<f64>,
    yty: f64,
}

impl Response {
    pub(crate) fn xty(&self) -> &[f64] {
        &self.xty
    }
}

impl GramDesign {
    pub fn new(x: &DMatrix<f64>) -> Result<Self, LassoError> {
        if x.nrows() == 0 {
            return Err(LassoError::NoRows);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LassoError::NonFinite("design matrix"));
        }
        let n = x.nrows();
        let gram = x.tr_mul(x) / n as f64;
        Ok(Self { gram, x: x.clone(), n })
    }

    pub(crate) fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.gram.ncols()
    }

    pub fn response(&self, y: &[f64]) -> Result<Response, LassoError> {
        if y.len() != self.n {
            return Err(LassoError::Dimension(format!("{} rows but {} targets", self.n, y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LassoError::NonFinite("target"));
        }
        let yv = DVector::from_column_slice(y);
        let xty = (self.x.tr_mul(&yv) / self.n as f64).as_slice().to_vec();
        let yty = yv.dot(&yv) / self.n as f64;
        Ok(Response { xty, yty })
    }

    /// Smallest penalty at which the solution is identically zero.
    pub fn lambda_max(&self, r: &Response) -> f64 {
        r.xty.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Residual sum of squares divided by n.
    pub fn mean_rss(&self, r: &Response, coef: &[f64]) -> f64 {
        let b = DVector::from_column_slice(coef);
        let gb = &self.gram * &b;
        let c = DVector::from_column_slice(&r.xty);
        (r.yty - 2.0 * b.dot(&c) + b.dot(&gb)).max(0.0)
    }

    pub fn objective(&self, r: &Response, coef: &[f64], lambda: f64) -> f64 {
        0.5 * self.mean_rss(r, coef) + lambda * coef.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Solves from `warm` (or zero) at penalty `lambda`. When `trace` is given,
    /// the objective after each sweep is appended to it.
    pub fn solve(
        &self,
        r: &Response,
        lambda: f64,
        warm: Option<&[f64]>,
        settings: &LassoSettings,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<LassoFit, LassoError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(LassoError::BadLambda(lambda));
        }
        let p = self.n_cols();
        // The zero vector is optimal from lambda_max up. The slack absorbs
        // rounding when the caller computed lambda_max with another
        // summation order.
        if lambda >= self.lambda_max(r) * (1.0 - 1e-12) {
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(r, &vec![0.0; p], lambda));
            }
            return Ok(LassoFit { coef: vec![0.0; p], sweeps: 0 });
        }
        let mut coef = match warm {
            Some(w) if w.len() == p => w.to_vec(),
            Some(w) => return Err(LassoError::Dimension(format!("warm start of length {}", w.len()))),
            None => vec![0.0; p],
        };
        // q = G b, kept current as coordinates move
        let mut q: Vec<f64> = if coef.iter().all(|&b| b == 0.0) {
            vec![0.0; p]
        } else {
            (&self.gram * DVector::from_column_slice(&coef)).as_slice().to_vec()
        };

        let all: Vec<usize> = (0..p).collect();
        let mut sweeps = 0;
        let mut full_pass = true;
        let mut last_change = f64::INFINITY;
        let mut active = Vec::with_capacity(p);
        let mut history: Vec<Vec<f64>> = Vec::with_capacity(ANDERSON_DEPTH + 1);

        while sweeps < settings.max_sweeps {
            let coords: &[usize] = if full_pass { &all } else { &active };
            let change = self.sweep(r, lambda, coords, &mut coef, &mut q);
            sweeps += 1;
            last_change = change;
            if change < settings.tol {
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.objective(r, &coef, lambda));
                }
                if full_pass {
                    return Ok(LassoFit { coef, sweeps });
                }
                full_pass = true;
                history.clear();
                continue;
            }
            if full_pass {
                active.clear();
                active.extend((0..p).filter(|&j| coef[j] != 0.0));
                full_pass = active.is_empty();
                history.clear();
            } else {
                history.push(coef.clone());
                if history.len() == ANDERSON_DEPTH + 1 {
                    self.try_extrapolate(r, lambda, &history, &mut coef, &mut q);
                    history.clear();
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(r, &coef, lambda));
            }
        }
        Err(LassoError::NotConverged { coef, sweeps, last_change })
    }

    /// Anderson extrapolation over the last sweeps of an active-set pass.
    /// The extrapolated point replaces the iterate only if it lowers the
    /// objective.
    fn try_extrapolate(&self, r: &Response, lambda: f64, history: &[Vec<f64>], coef: &mut Vec<f64>, q: &mut Vec<f64>) {
        let m = history.len() - 1;
        let p = coef.len();
        let u = DMatrix::from_fn(p, m, |i, k| history[k + 1][i] - history[k][i]);
        let utu = u.tr_mul(&u);
        let Some(z) = utu.lu().solve(&DVector::from_element(m, 1.0)) else {
            return;
        };
        let total: f64 = z.iter().sum();
        if !total.is_finite() || total == 0.0 {
            return;
        }
        let mut extrapolated = vec![0.0; p];
        for k in 0..m {
            let c = z[k] / total;
            for (e, h) in extrapolated.iter_mut().zip(&history[k + 1]) {
                *e += c * h;
            }
        }
        if extrapolated.iter().any(|v| !v.is_finite()) {
            return;
        }
        if self.objective(r, &extrapolated, lambda) < self.objective(r, coef, lambda) {
            *q = (&self.gram * DVector::from_column_slice(&extrapolated)).as_slice().to_vec();
            *coef = extrapolated;
        }
    }

    fn sweep(&self, r: &Response, lambda: f64, coords: &[usize], coef: &mut [f64], q: &mut [f64]) -> f64 {
        let mut max_change: f64 = 0.0;
        for &j in coords {
            let gjj = self.gram[(j, j)];
            let old = coef[j];
            let new = if gjj > 0.0 {
                let rho = r.xty[j] - (q[j] - gjj * old);
                soft_threshold(rho, lambda) / gjj
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                coef[j] = new;
                let col = self.gram.column(j);
                for (qk, gk) in q.iter_mut().zip(col.iter()) {
                    *qk += delta * gk;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Runs the path over `grid` from the largest penalty down and returns the
    /// candidate minimizing `criterion`, where k counts nonzero coefficients.
    /// Ties go to the larger penalty.
    ///
    /// Each candidate is solved by coordinate descent, warm started from the
    /// exact homotopy path where available and from the previous candidate
    /// otherwise.
    pub fn select(
        &self,
        r: &Response,
        grid: &[f64],
        criterion: Criterion,
        settings: &LassoSettings,
    ) -> Result<Selection, LassoError> {
        if grid.is_empty() {
            return Err(LassoError::EmptyGrid);
        }
        if let Some(&bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(LassoError::BadLambda(bad));
        }
        let mut order: Vec<f64> = grid.to_vec();
        order.sort_by(|a, b| b.total_cmp(a));

        let n = self.n as f64;
        let mut best: Option<Selection> = None;
        let path = super::path::homotopy_path(self, r, &order);
        let mut warm: Option<Vec<f64>> = None;
        for (&lambda, start) in order.iter().zip(path) {
            let start = start.or(warm);
            let fit = self.solve(r, lambda, start.as_deref(), settings, None)?;
            let rss = self.mean_rss(r, &fit.coef) * n;
            let k = fit.coef.iter().filter(|b| **b != 0.0).count();
            let score = criterion.score(n, rss, k);
            if score.is_finite() && best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(Selection { lambda, coef: fit.coef.clone(), score, support: k });
            }
            warm = Some(fit.coef);
        }
        best.ok_or(LassoError::AllDegenerate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub lambda: f64,
    pub coef: Vec<f64>,
    pub score: f64,
    pub support: usize,
}

/// In-sample information criterion for choosing the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// `n ln(RSS/n) + 2k`.
    Aic,
    /// AIC plus `2k(k+1)/(n-k-1)`; candidates with `k >= n-1` are excluded.
    /// Plain AIC keeps rewarding fit as k approaches n, which picks
    /// near-interpolating models when there are more regressors than rows.
    Aicc,
}

impl Criterion {
    pub fn score(self, n: f64, rss: f64, k: usize) -> f64 {
        let k = k as f64;
        let aic = n * (rss / n).ln() + 2.0 * k;
        match self {
            Criterion::Aic => aic,
            Criterion::Aicc if k + 1.0 >= n => f64::INFINITY,
            Criterion::Aicc => aic + 2.0 * k * (k + 1.0) / (n - k - 1.0),
        }
    }
}

/// `count` log-spaced penalties from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (count - 1) as f64;
    (0..count).map(|i| lambda_max * (step * i as f64).exp()).collect()
}

/// Fits a single LASSO problem from a zero start.
pub fn fit_lasso(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    settings: &LassoSettings,
) -> Result<LassoFit, LassoError> {
    let design = GramDesign::new(x)?;
    let r = design.response(y)?;
    design.solve(&r, lambda, None, settings, None)
}

/// Selects a penalty from `grid` by an in-sample information criterion.
pub fn select_lambda(
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
    criterion: Criterion,
    settings: &LassoSettings,
) -> Result<f64, LassoError> {
    let design = GramDesign::new(x)?;
    let r = design.response(y)?;
    Ok(design.select(&r, grid, criterion, settings)?.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        (x, y)
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn lambda_max_gives_exact_zero() {
        let (x, y) = random_problem(1, 30, 6);
        let d = GramDesign::new(&x).unwrap();
        let r = d.response(&y).unwrap();
        let fit = d.solve(&r, d.lambda_max(&r), None, &LassoSettings::default(), None).unwrap();
        assert!(fit.coef.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = lambda_grid(2.0, 100, 1e-4);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 2.0);
        assert!((g[99] - 2e-4).abs() < 1e-15);
        assert!((g[1] / g[0] - g[2] / g[1]).abs() < 1e-12);
        assert_eq!(lambda_grid(3.0, 1, 1e-4), vec![3.0]);
    }

    #[test]
    fn pure_noise_picks_empty_model() {
        // y independent of X and n large: every added variable costs 2 in AIC
        // but buys almost nothing in RSS.
        let mut empties = 0;
        for seed in 0..20 {
            let (x, y) = random_problem(100 + seed, 400, 5);
            let d = GramDesign::new(&x).unwrap();
            let r = d.response(&y).unwrap();
            let grid = lambda_grid(d.lambda_max(&r), 100, 1e-4);
            let sel = d.select(&r, &grid, Criterion::Aic, &LassoSettings::default()).unwrap();
            if sel.support == 0 {
                assert_eq!(sel.lambda, grid[0]);
                empties += 1;
            }
        }
        assert!(empties >= 10, "empty model chosen only {empties}/20 times");
    }

    #[test]
    fn corrected_criterion_stays_sparse_on_wide_designs() {
        // 40 rows, 80 columns, three true regressors
        let (x, _) = random_problem(9, 40, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y: Vec<f64> = (0..40)
            .map(|i| 3.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 1.5 * x[(i, 2)] + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let d = GramDesign::new(&x).unwrap();
        let r = d.response(&y).unwrap();
        let grid = lambda_grid(d.lambda_max(&r), 100, 1e-4);
        let aicc = d.select(&r, &grid, Criterion::Aicc, &LassoSettings::default()).unwrap();
        let aic = d.select(&r, &grid, Criterion::Aic, &LassoSettings::default()).unwrap();
        assert!((0..3).all(|j| aicc.coef[j] != 0.0));
        assert!(aicc.support <= 15, "AICc support {}", aicc.support);
        assert!(aic.support > 30, "AIC support {}", aic.support);
    }

    #[test]
    fn single_candidate_returned() {
        let (x, y) = random_problem(3, 20, 3);
        assert_eq!(select_lambda(&x, &y, &[0.37], Criterion::Aicc, &LassoSettings::default()).unwrap(), 0.37);
        assert_eq!(select_lambda(&x, &y, &[], Criterion::Aicc, &LassoSettings::default()), Err(LassoError::EmptyGrid));
    }

    #[test]
    fn non_finite_and_nonconvergence_reported() {
        let (mut x, y) = random_problem(4, 10, 3);
        x[(0, 0)] = f64::NAN;
        assert_eq!(fit_lasso(&x, &y, 0.1, &LassoSettings::default()).unwrap_err(), LassoError::NonFinite("design matrix"));
        let (x, y) = random_problem(4, 10, 3);
        let tight = LassoSettings { tol: 0.0, max_sweeps: 3 };
        match fit_lasso(&x, &y, 0.0, &tight) {
            Err(LassoError::NotConverged { coef, sweeps, .. }) => {
                assert_eq!(sweeps, 3);
                assert_eq!(coef.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn objective_non_increasing(seed in 0u64..1000, frac in 0.0f64..1.0) {
            let (x, y) = random_problem(seed, 25, 8);
            let d = GramDesign::new(&x).unwrap();
            let r = d.response(&y).unwrap();
            let lambda = frac * d.lambda_max(&r);
            let mut trace = vec![d.objective(&r, &[0.0; 8], lambda)];
            d.solve(&r, lambda, None, &LassoSettings::default(), Some(&mut trace)).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
        }

        #[test]
        fn support_shrinks_as_lambda_grows(seed in 0u64..1000) {
            // Monotone support is guaranteed for orthogonal designs; general
            // designs may drop variables along the path.
            let (x, y) = random_problem(seed, 40, 6);
            let q = x.qr().q() * (40f64).sqrt();
            let d = GramDesign::new(&q).unwrap();
            let r = d.response(&y).unwrap();
            let grid = lambda_grid(d.lambda_max(&r), 20, 1e-3);
            let mut prev = 0usize;
            let mut warm: Option<Vec<f64>> = None;
            for &l in &grid {
                let fit = d.solve(&r, l, warm.as_deref(), &LassoSettings::default(), None).unwrap();
                let k = fit.coef.iter().filter(|b| **b != 0.0).count();
                prop_assert!(k >= prev, "support went from {} to {} at lambda {}", prev, k, l);
                prev = k;
                warm = Some(fit.coef);
            }
        }
    }
}
