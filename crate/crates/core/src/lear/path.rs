//! Exact LASSO regularization path by homotopy (LARS with the lasso
//! modification), in the same Gram form as the coordinate-descent solver.
//!
//! The path is piecewise linear in the penalty; between events (a variable
//! joining or leaving the active set) the active coefficients move along
//! `G_AA^{-1} s_A`. Solutions at requested penalties are read off by linear
//! interpolation inside a segment.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::lasso::{GramDesign, Response};

/// Relative pivot below which a joining column counts as collinear with the
/// active set.
const PIVOT_EPS: f64 = 1e-10;

/// Path solutions at each penalty of `grid_desc` (sorted in decreasing
/// order). Entries past the point where the active Gram block becomes
/// singular are `None`.
pub(crate) fn homotopy_path(design: &GramDesign, r: &Response, grid_desc: &[f64]) -> Vec<Option<Vec<f64>>> {
    let gram = design.gram();
    let xty = r.xty();
    let p = design.n_cols();
    let mut out = vec![None; grid_desc.len()];
    let mut beta = vec![0.0; p];

    let correlations = |beta: &[f64], active: &[usize]| -> Vec<f64> {
        let mut c = xty.to_vec();
        for &k in active {
            let b = beta[k];
            for (cj, g) in c.iter_mut().zip(gram.column(k).iter()) {
                *cj -= b * g;
            }
        }
        c
    };

    let mut c = xty.to_vec();
    let (first, mut lambda) =
        c.iter().enumerate().fold((0, 0.0f64), |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) });

    let mut gi = 0;
    while gi < grid_desc.len() && grid_desc[gi] >= lambda {
        out[gi] = Some(beta.clone());
        gi += 1;
    }
    if lambda == 0.0 || gram[(first, first)] <= 0.0 {
        return out;
    }

    let mut active = vec![first];
    let mut signs = vec![c[first].signum()];
    let mut in_active = vec![false; p];
    in_active[first] = true;
    let mut chol = Cholesky::new(DMatrix::from_element(1, 1, gram[(first, first)])).expect("positive diagonal");
    let mut last_dropped: Option<usize> = None;

    let max_steps = 8 * p + 16;
    for _ in 0..max_steps {
        if gi == grid_desc.len() {
            break;
        }
        let d = chol.solve(&DVector::from_column_slice(&signs));
        let mut a = vec![0.0; p];
        for (idx, &k) in active.iter().enumerate() {
            let dk = d[idx];
            for (aj, g) in a.iter_mut().zip(gram.column(k).iter()) {
                *aj += dk * g;
            }
        }

        let tiny = 1e-14 * lambda;
        let mut step = lambda;
        let mut event: Option<Event> = None;
        for j in 0..p {
            if in_active[j] || gram[(j, j)] <= 0.0 {
                continue;
            }
            for (num, den) in [(lambda - c[j], 1.0 - a[j]), (lambda + c[j], 1.0 + a[j])] {
                if den > 1e-12 {
                    let t = num / den;
                    let skip = last_dropped == Some(j) && t <= 1e-9 * lambda;
                    if t > tiny && t < step && !skip {
                        step = t;
                        event = Some(Event::Join(j));
                    }
                }
            }
        }
        for (idx, &k) in active.iter().enumerate() {
            if d[idx] != 0.0 {
                let t = -beta[k] / d[idx];
                if t > tiny && t < step {
                    step = t;
                    event = Some(Event::Drop(idx));
                }
            }
        }

        while gi < grid_desc.len() && grid_desc[gi] >= lambda - step {
            let t = lambda - grid_desc[gi];
            let mut b = beta.clone();
            for (idx, &k) in active.iter().enumerate() {
                b[k] += t * d[idx];
            }
            out[gi] = Some(b);
            gi += 1;
        }

        for (idx, &k) in active.iter().enumerate() {
            beta[k] += step * d[idx];
        }
        lambda -= step;
        last_dropped = None;

        match event {
            None => break,
            Some(Event::Drop(idx)) => {
                let k = active.remove(idx);
                signs.remove(idx);
                in_active[k] = false;
                beta[k] = 0.0;
                last_dropped = Some(k);
                if active.is_empty() {
                    break;
                }
                chol = chol.remove_column(idx);
            }
            Some(Event::Join(j)) => {
                let col = DVector::from_iterator(active.len(), active.iter().map(|&k| gram[(k, j)]));
                let w = chol.l_dirty().solve_lower_triangular(&col).expect("nonsingular factor");
                let pivot = gram[(j, j)] - w.norm_squared();
                if pivot <= PIVOT_EPS * gram[(j, j)] {
                    break;
                }
                let mut full = DVector::zeros(active.len() + 1);
                full.rows_mut(0, active.len()).copy_from(&col);
                full[active.len()] = gram[(j, j)];
                chol = insert_last(&chol, &full);
                active.push(j);
                in_active[j] = true;
                c = correlations(&beta, &active);
                signs.push(c[j].signum());
                continue;
            }
        }
        c = correlations(&beta, &active);
    }
    out
}

enum Event {
    Join(usize),
    Drop(usize),
}

fn insert_last(chol: &Cholesky<f64, Dyn>, col: &DVector<f64>) -> Cholesky<f64, Dyn> {
    chol.insert_column(col.len() - 1, col.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lear::lasso::{lambda_grid, LassoSettings};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn correlated_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_fn(n, p, |i, j| base[(i, j % 3)] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|i| 2.0 * x[(i, 0)] - x[(i, 4)] + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        (x, y)
    }

    #[test]
    fn path_matches_coordinate_descent() {
        for seed in 0..5 {
            let (x, y) = correlated_problem(seed, 60, 12);
            let d = GramDesign::new(&x).unwrap();
            let r = d.response(&y).unwrap();
            let grid = lambda_grid(d.lambda_max(&r), 30, 1e-3);
            let path = homotopy_path(&d, &r, &grid);
            let tight = LassoSettings { tol: 1e-12, max_sweeps: 1_000_000 };
            for (l, sol) in grid.iter().zip(&path) {
                let sol = sol.as_ref().expect("full-rank path reaches every grid point");
                let cd = d.solve(&r, *l, None, &tight, None).unwrap();
                let err = sol.iter().zip(&cd.coef).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-7, "seed {seed} lambda {l}: {err}");
            }
        }
    }

    #[test]
    fn wide_design_stops_before_singularity() {
        let (x, y) = correlated_problem(9, 10, 30);
        let d = GramDesign::new(&x).unwrap();
        let r = d.response(&y).unwrap();
        let grid = lambda_grid(d.lambda_max(&r), 50, 1e-6);
        let path = homotopy_path(&d, &r, &grid);
        assert!(path[0].is_some());
        for sol in path.iter().flatten() {
            assert!(sol.iter().filter(|b| **b != 0.0).count() <= 10);
        }
    }
}
