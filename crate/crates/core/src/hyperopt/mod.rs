//! Tree-structured Parzen estimator search.
//!
//! After a random start-up phase, finished trials are split at the
//! `gamma`-quantile of their objectives into a good and a bad group. Each
//! dimension gets an independent density per group (a truncated Gaussian
//! mixture for numeric dimensions, smoothed frequencies for discrete ones),
//! candidates are drawn from the good density, and the candidate with the
//! largest `l(x) / g(x)` is returned.

pub mod dnn;

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use thiserror::Error;

pub use dnn::{decode_dnn, dnn_space, evaluate_dnn_point, search_dnn, SpacePreset};

#[derive(Debug, Error)]
pub enum HyperoptError {
    #[error("every one of the {0} trials failed")]
    AllFailed(usize),
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("trial log: {0}")]
    Log(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DimensionKind {
    /// Log-uniform prior; densities are modeled on the log scale.
    LogUniform { low: f64, high: f64 },
    Uniform { low: f64, high: f64 },
    /// Inclusive integer range.
    Integer { low: i64, high: i64 },
    Categorical { choices: usize },
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimensionKind,
}

impl Dimension {
    pub fn new(name: impl Into<String>, kind: DimensionKind) -> Self {
        Self { name: name.into(), kind }
    }

    /// Whether `v` is a legal value of this dimension.
    pub fn contains(&self, v: f64) -> bool {
        match self.kind {
            DimensionKind::LogUniform { low, high } | DimensionKind::Uniform { low, high } => (low..=high).contains(&v),
            DimensionKind::Integer { low, high } => v.fract() == 0.0 && (low as f64..=high as f64).contains(&v),
            DimensionKind::Categorical { choices } => v.fract() == 0.0 && v >= 0.0 && v < choices as f64,
            DimensionKind::Binary => v == 0.0 || v == 1.0,
        }
    }

    /// Numeric dimensions as an interval in modeling coordinates.
    fn interval(&self) -> Option<(f64, f64)> {
        match self.kind {
            DimensionKind::LogUniform { low, high } => Some((low.ln(), high.ln())),
            DimensionKind::Uniform { low, high } => Some((low, high)),
            DimensionKind::Integer { low, high } => Some((low as f64 - 0.5, high as f64 + 0.5)),
            _ => None,
        }
    }

    fn to_model(&self, v: f64) -> f64 {
        match self.kind {
            DimensionKind::LogUniform { .. } => v.ln(),
            _ => v,
        }
    }

    fn to_value(&self, u: f64) -> f64 {
        match self.kind {
            DimensionKind::LogUniform { low, high } => u.exp().clamp(low, high),
            DimensionKind::Uniform { low, high } => u.clamp(low, high),
            DimensionKind::Integer { low, high } => u.round().clamp(low as f64, high as f64),
            _ => u,
        }
    }

    fn choices(&self) -> usize {
        match self.kind {
            DimensionKind::Categorical { choices } => choices,
            DimensionKind::Binary => 2,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    pub dimensions: Vec<Dimension>,
}

impl HyperSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self, HyperoptError> {
        for d in &dimensions {
            let ok = match d.kind {
                DimensionKind::LogUniform { low, high } => low > 0.0 && high > low && high.is_finite(),
                DimensionKind::Uniform { low, high } => low.is_finite() && high.is_finite() && high > low,
                DimensionKind::Integer { low, high } => high >= low,
                DimensionKind::Categorical { choices } => choices >= 1,
                DimensionKind::Binary => true,
            };
            if !ok {
                return Err(HyperoptError::Space(format!("dimension {} has bad bounds {:?}", d.name, d.kind)));
            }
        }
        Ok(Self { dimensions })
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.len() && self.dimensions.iter().zip(point).all(|(d, v)| d.contains(*v))
    }

    pub fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.dimensions
            .iter()
            .map(|d| match d.kind {
                DimensionKind::Categorical { .. } | DimensionKind::Binary => rng.random_range(0..d.choices()) as f64,
                DimensionKind::Integer { low, high } => rng.random_range(low..=high) as f64,
                _ => {
                    let (lo, hi) = d.interval().expect("numeric");
                    d.to_value(rng.random_range(lo..=hi))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub point: Vec<f64>,
    /// NaN for failed trials.
    pub objective: f64,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeSettings {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
}

impl Default for TpeSettings {
    fn default() -> Self {
        Self { gamma: 0.25, n_startup: 20, n_candidates: 24 }
    }
}

/// Truncated Gaussian mixture on an interval, with equal component weights.
struct Parzen {
    lo: f64,
    hi: f64,
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    /// Probability mass of each component inside the interval.
    mass: Vec<f64>,
}

impl Parzen {
    /// Components at each observation plus one wide prior component at the
    /// interval center. Bandwidths are the distance to the nearest other
    /// observation, clipped to `[range / min(100, n + 1), range]`.
    fn fit(lo: f64, hi: f64, obs: &[f64]) -> Self {
        let range = hi - lo;
        let floor = range / (obs.len() as f64 + 1.0).min(100.0);
        let mut sorted = obs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut mus = vec![0.5 * (lo + hi)];
        let mut sigmas = vec![range];
        for (i, &m) in sorted.iter().enumerate() {
            let left = if i > 0 { m - sorted[i - 1] } else { f64::INFINITY };
            let right = if i + 1 < sorted.len() { sorted[i + 1] - m } else { f64::INFINITY };
            let nn = left.min(right);
            let s = if nn.is_finite() { nn.clamp(floor, range) } else { range };
            mus.push(m);
            sigmas.push(s);
        }
        let mass = mus
            .iter()
            .zip(&sigmas)
            .map(|(&m, &s)| {
                let n = NormalDist::new(m, s).expect("positive bandwidth");
                (n.cdf(hi) - n.cdf(lo)).max(1e-300)
            })
            .collect();
        Self { lo, hi, mus, sigmas, mass }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let k = rng.random_range(0..self.mus.len());
        let n = Normal::new(self.mus[k], self.sigmas[k]).expect("positive bandwidth");
        for _ in 0..100 {
            let x = n.sample(rng);
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        self.mus[k].clamp(self.lo, self.hi)
    }

    /// Log-probability of the bin `[a, b]` (integers) or log-density at `a`.
    fn log_prob(&self, a: f64, b: Option<f64>) -> f64 {
        let w = 1.0 / self.mus.len() as f64;
        let mut total = 0.0;
        for ((&m, &s), &z) in self.mus.iter().zip(&self.sigmas).zip(&self.mass) {
            let n = NormalDist::new(m, s).expect("positive bandwidth");
            let p = match b {
                Some(b) => n.cdf(b.min(self.hi)) - n.cdf(a.max(self.lo)),
                None => (-0.5 * ((a - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()),
            };
            total += w * p / z;
        }
        total.max(1e-300).ln()
    }
}

/// Smoothed category frequencies: `(count + 1) / (n + K)`.
fn category_probs(choices: usize, obs: &[f64]) -> Vec<f64> {
    let mut counts = vec![1.0; choices];
    for &v in obs {
        counts[v as usize] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

enum DimModel {
    Numeric { good: Parzen, bad: Parzen, integer: bool },
    Discrete { good: Vec<f64>, bad: Vec<f64> },
}

/// Random generator for one suggestion: the base seed with the history
/// length as the stream, so a given history always yields the same point.
fn suggestion_rng(seed: u64, history_len: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(history_len as u64);
    rng
}

/// Next point to evaluate.
pub fn suggest(space: &HyperSpace, history: &[Trial], settings: &TpeSettings, seed: u64) -> Vec<f64> {
    let mut rng = suggestion_rng(seed, history.len());
    let mut ok: Vec<&Trial> = history.iter().filter(|t| t.status == TrialStatus::Ok).collect();
    if history.len() < settings.n_startup || ok.is_empty() {
        return space.sample_uniform(&mut rng);
    }
    ok.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.id.cmp(&b.id)));
    let n_good = ((settings.gamma * ok.len() as f64).ceil() as usize).clamp(1, ok.len());
    let (good, bad) = ok.split_at(n_good);

    let models: Vec<DimModel> = space
        .dimensions
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let g: Vec<f64> = good.iter().map(|t| d.to_model(t.point[j])).collect();
            let b: Vec<f64> = bad.iter().map(|t| d.to_model(t.point[j])).collect();
            match d.interval() {
                Some((lo, hi)) => DimModel::Numeric {
                    good: Parzen::fit(lo, hi, &g),
                    bad: Parzen::fit(lo, hi, &b),
                    integer: matches!(d.kind, DimensionKind::Integer { .. }),
                },
                None => DimModel::Discrete { good: category_probs(d.choices(), &g), bad: category_probs(d.choices(), &b) },
            }
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..settings.n_candidates.max(1) {
        let mut score = 0.0;
        let mut point = Vec::with_capacity(space.len());
        for (d, m) in space.dimensions.iter().zip(&models) {
            match m {
                DimModel::Numeric { good, bad, integer } => {
                    let v = d.to_value(good.sample(&mut rng));
                    let u = d.to_model(v);
                    let bin = integer.then_some(u + 0.5);
                    let a = if *integer { u - 0.5 } else { u };
                    score += good.log_prob(a, bin) - bad.log_prob(a, bin);
                    point.push(v);
                }
                DimModel::Discrete { good, bad } => {
                    let k = WeightedIndex::new(good).expect("positive weights").sample(&mut rng);
                    score += good[k].ln() - bad[k].ln();
                    point.push(k as f64);
                }
            }
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, point));
        }
    }
    best.expect("at least one candidate").1
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Sequential search. `history` holds trials from an earlier, interrupted
/// run of the same search and is continued rather than repeated. Objective
/// errors and non-finite values mark a trial as failed; `on_trial` sees
/// every new trial as soon as it finishes.
pub fn run_search<E>(
    space: &HyperSpace,
    mut objective: impl FnMut(&[f64]) -> Result<f64, E>,
    n_trials: usize,
    settings: &TpeSettings,
    seed: u64,
    history: Vec<Trial>,
    mut on_trial: impl FnMut(&Trial) -> Result<(), HyperoptError>,
) -> Result<SearchResult, HyperoptError> {
    let mut trials = history;
    while trials.len() < n_trials {
        let point = suggest(space, &trials, settings, seed);
        let (objective, status) = match objective(&point) {
            Ok(v) if v.is_finite() => (v, TrialStatus::Ok),
            _ => (f64::NAN, TrialStatus::Failed),
        };
        let trial = Trial { id: trials.len(), point, objective, status };
        on_trial(&trial)?;
        trials.push(trial);
    }
    let best = best_trial(&trials).ok_or(HyperoptError::AllFailed(trials.len()))?.clone();
    Ok(SearchResult { best, trials })
}

/// Lowest-objective successful trial; ties go to the earlier trial.
pub fn best_trial(trials: &[Trial]) -> Option<&Trial> {
    trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.id.cmp(&b.id)))
}

/// Append-only trial log: `trial,status,objective,<dimension names>`.
pub struct TrialLogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrialLogWriter<W> {
    pub fn new(writer: W, space: &HyperSpace, write_header: bool) -> Result<Self, HyperoptError> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        if write_header {
            inner.write_record(trial_log_header(space))?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    pub fn append(&mut self, trial: &Trial) -> Result<(), HyperoptError> {
        let status = match trial.status {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
        };
        let objective = if trial.status == TrialStatus::Ok { trial.objective.to_string() } else { String::new() };
        let mut rec = vec![trial.id.to_string(), status.to_string(), objective];
        rec.extend(trial.point.iter().map(|v| v.to_string()));
        self.inner.write_record(rec)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn trial_log_header(space: &HyperSpace) -> Vec<String> {
    ["trial", "status", "objective"]
        .into_iter()
        .map(str::to_owned)
        .chain(space.dimensions.iter().map(|d| d.name.clone()))
        .collect()
}

/// Reads a trial log written by [`TrialLogWriter`] for the same space.
pub fn read_trial_log<R: Read>(reader: R, space: &HyperSpace) -> Result<Vec<Trial>, HyperoptError> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != trial_log_header(space) {
        return Err(HyperoptError::Log("header does not match the search space".into()));
    }
    let mut trials = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| HyperoptError::Log(format!("trial {}: bad {what}", trials.len()));
        let id: usize = rec[0].parse().map_err(|_| bad("id"))?;
        if id != trials.len() {
            return Err(bad("id sequence"));
        }
        let (status, objective) = match &rec[1] {
            "ok" => (TrialStatus::Ok, rec[2].parse::<f64>().map_err(|_| bad("objective"))?),
            "failed" => (TrialStatus::Failed, f64::NAN),
            _ => return Err(bad("status")),
        };
        let point: Vec<f64> = (3..rec.len()).map(|i| rec[i].parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad("point"))?;
        if !space.contains(&point) {
            return Err(bad("point"));
        }
        trials.push(Trial { id, point, objective, status });
    }
    Ok(trials)
}
