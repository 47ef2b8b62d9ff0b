//! Rolling out-of-sample experiment: hyperparameter search once before the
//! test period, daily recalibration, forecasts, metrics and pairwise tests.
//!
//! Run directory layout:
//!
//! - `manifest.json`: configuration, dataset fingerprint, fixed constants
//! - `hyperparams_<model>.json`, `trials_<model>[_h<hour>].csv`: search results
//! - `forecasts_<model>.csv`: one row per completed test day (append-only;
//!   doubles as the checkpoint)
//! - `metrics.csv`, `gw_matrix.csv`: written once every model is complete
//! - `models/`: optional per-window coefficient and network dumps

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{load_dataset, rolling_windows, DataError, DayVector, MarketDataset, WindowSplit, HOURS};
use crate::eval::{
    forecast_header, forecast_record, naive_forecast, naive_series, pvalue_matrix, rmae_table, write_gw_matrix,
    write_metrics, EvalError, ForecastSeries, GwResult, MetricRow,
};
use crate::hyperopt::{
    decode_dnn, dnn_space, read_trial_log, search_dnn, HyperoptError, SpacePreset, TpeSettings, Trial, TrialLogWriter,
};
use crate::lear::{fit_lear, LearError, LearModel, LearSettings};
use crate::features::{Encoding, FeatureSpec};
use crate::neural::{
    fit_network, split_train_validation, DnnForecaster, DnnHyperparams, NeuralError, SplitMode, TrainSettings,
};
use crate::transform::z75;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Lear(#[from] LearError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Hyperopt(#[from] HyperoptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("run directory belongs to a different configuration: {0}")]
    ManifestMismatch(String),
    #[error("corrupt checkpoint {file}: {reason}")]
    CorruptCheckpoint { file: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run is incomplete: {0}")]
    Incomplete(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Naive,
    Lear,
    Dnn24,
    Dnn1,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Naive => "naive",
            ModelKind::Lear => "lear",
            ModelKind::Dnn24 => "dnn24",
            ModelKind::Dnn1 => "dnn1",
        }
    }

    pub fn is_network(self) -> bool {
        matches!(self, ModelKind::Dnn24 | ModelKind::Dnn1)
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(ModelKind::Naive),
            "lear" => Ok(ModelKind::Lear),
            "dnn24" => Ok(ModelKind::Dnn24),
            "dnn1" => Ok(ModelKind::Dnn1),
            other => Err(format!("unknown model {other:?} (expected naive, lear, dnn24 or dnn1)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub market: String,
    pub models: Vec<ModelKind>,
    pub calibration_days: usize,
    pub test_days: usize,
    /// Search budget per network (per hour for DNN1).
    pub hyperopt_trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub space: SpacePreset,
    /// Refit every this many test days; 1 refits daily.
    pub recalibration_interval: usize,
    pub gw_lags: usize,
    pub train: TrainSettings,
    pub tpe: TpeSettings,
    pub lear: LearSettings,
    /// Write per-window coefficients and networks under `models/`.
    pub save_models: bool,
    /// Stop each model after this many test days; a later run with the
    /// same configuration continues from there. Not part of the run
    /// identity.
    #[serde(skip)]
    pub window_limit: Option<usize>,
}

impl RunConfig {
    pub fn new(data: impl Into<PathBuf>, market: impl Into<String>, out: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            market: market.into(),
            models: vec![ModelKind::Naive, ModelKind::Lear, ModelKind::Dnn24, ModelKind::Dnn1],
            calibration_days: crate::data::DEFAULT_CALIBRATION_DAYS,
            test_days: crate::data::DEFAULT_TEST_DAYS,
            hyperopt_trials: 100,
            seed: 0,
            out: out.into(),
            space: SpacePreset::Default,
            recalibration_interval: 1,
            gw_lags: 1,
            train: TrainSettings::default(),
            tpe: TpeSettings::default(),
            lear: LearSettings::default(),
            save_models: false,
            window_limit: None,
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.models.is_empty() {
            return bad("no models selected".into());
        }
        let mut sorted = self.models.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.models.len() {
            return bad("a model is listed twice".into());
        }
        if self.recalibration_interval == 0 {
            return bad("recalibration interval must be positive".into());
        }
        if self.models.iter().any(|m| m.is_network()) {
            if !self.calibration_days.is_multiple_of(7) {
                return bad(format!("networks need whole calibration weeks, got {} days", self.calibration_days));
            }
            if self.hyperopt_trials == 0 {
                return bad("networks need at least one search trial".into());
            }
        }
        Ok(())
    }

    /// The fields that identify a run; output location and the interruption
    /// limit are excluded.
    fn identity(&self) -> RunConfig {
        RunConfig { out: PathBuf::new(), window_limit: None, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub market: String,
    pub days: usize,
    pub first_date: String,
    pub last_date: String,
    /// SHA-256 over dates and all hourly values.
    pub fingerprint: String,
}

impl DatasetSummary {
    pub fn of(ds: &MarketDataset) -> Self {
        let mut h = Sha256::new();
        for d in 0..ds.len() {
            h.update(ds.date(d).to_string().as_bytes());
            for series in [ds.prices(), ds.exog1(), ds.exog2()] {
                for v in &series[d] {
                    h.update(v.to_le_bytes());
                }
            }
        }
        let fingerprint = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            market: ds.market_id().to_string(),
            days: ds.len(),
            first_date: ds.date(0).to_string(),
            last_date: ds.date(ds.len() - 1).to_string(),
            fingerprint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub first_test_date: String,
    pub last_test_date: String,
    /// Fixed modeling constants, recorded for reference.
    pub constants: serde_json::Value,
}

fn constants() -> serde_json::Value {
    use crate::neural::{mlp, train};
    serde_json::json!({
        "hours": HOURS,
        "lag_days": crate::features::MAX_LAG,
        "dnn_features": FeatureSpec::all(Encoding::DnnMultiValue).len(),
        "lear_features": FeatureSpec::all(Encoding::LearOneHot).len(),
        "z75": z75(),
        "dst": "duplicated hour averaged, missing hour interpolated",
        "lear_transform": "median/MAD + asinh per column; weekday dummies untransformed",
        "lear_selection": "information criterion (config.lear.criterion) over a log grid, no intercept, larger penalty on ties",
        "network_loss": "mean absolute error on normalized targets + l1 * sum|W|",
        "adam": { "beta1": train::ADAM_BETA1, "beta2": train::ADAM_BETA2, "epsilon": train::ADAM_EPSILON },
        "batch_norm": { "momentum": mlp::BN_MOMENTUM, "epsilon": mlp::BN_EPSILON },
        "leaky_relu_slope": mlp::LEAKY_SLOPE,
        "validation_weeks": { "ratio": [crate::neural::model::VALIDATION_WEEKS, crate::neural::model::REFERENCE_WEEKS],
                              "search": "most recent", "final": "random weeks" },
        "gw": { "norm_order": 1, "covariance": "sample covariance of moment vectors" },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub run_dir: PathBuf,
    /// All models covered every test day and the metrics were written.
    pub complete: bool,
    pub models: Vec<String>,
    /// Completed test days per model, in `models` order.
    pub rows: Vec<usize>,
    pub metrics: Vec<MetricRow>,
    pub gw: Vec<Vec<Option<GwResult>>>,
}

impl EvaluationReport {
    pub fn rmae(&self, model: &str, scope: &str) -> Option<f64> {
        self.metrics.iter().find(|r| r.model == model && r.scope == scope).map(|r| r.rmae)
    }

    /// Test of `row` (A) against `col` (B).
    pub fn gw(&self, row: &str, col: &str) -> Option<&GwResult> {
        let i = self.models.iter().position(|m| m == row)?;
        let j = self.models.iter().position(|m| m == col)?;
        self.gw.get(i)?.get(j)?.as_ref()
    }
}

/// Seed for one sub-task, independent of how many other sub-tasks run.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

const SEARCH_STREAM: u64 = 100;

fn forecasts_path(dir: &Path, model: ModelKind) -> PathBuf {
    dir.join(format!("forecasts_{}.csv", model.name()))
}

fn hyperparams_path(dir: &Path, model: ModelKind) -> PathBuf {
    dir.join(format!("hyperparams_{}.json", model.name()))
}

fn trials_path(dir: &Path, model: ModelKind, hour: Option<usize>) -> PathBuf {
    match hour {
        None => dir.join(format!("trials_{}.csv", model.name())),
        Some(h) => dir.join(format!("trials_{}_h{h}.csv", model.name())),
    }
}

/// Writes the manifest, or checks an existing one against `config`.
fn open_run(config: &RunConfig, ds: &MarketDataset, windows: &[WindowSplit]) -> Result<(), ExperimentError> {
    fs::create_dir_all(&config.out)?;
    let path = config.out.join("manifest.json");
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: config.identity(),
        dataset: DatasetSummary::of(ds),
        first_test_date: ds.date(windows[0].target_day).to_string(),
        last_test_date: ds.date(windows[windows.len() - 1].target_day).to_string(),
        constants: constants(),
    };
    if path.exists() {
        let old: Manifest = serde_json::from_reader(File::open(&path)?)?;
        if old.version != manifest.version {
            return Err(ExperimentError::ManifestMismatch(format!("manifest version {}", old.version)));
        }
        if old.config.identity() != manifest.config {
            return Err(ExperimentError::ManifestMismatch(describe_difference(&old.config, config)));
        }
        if old.dataset != manifest.dataset {
            return Err(ExperimentError::ManifestMismatch("dataset differs".into()));
        }
        return Ok(());
    }
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn describe_difference(old: &RunConfig, new: &RunConfig) -> String {
    let (a, b) = (serde_json::to_value(old.identity()), serde_json::to_value(new.identity()));
    if let (Ok(serde_json::Value::Object(a)), Ok(serde_json::Value::Object(b))) = (a, b) {
        let fields: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
        if !fields.is_empty() {
            return format!("fields {fields:?} differ");
        }
    }
    "configuration differs".into()
}

/// Runs (or continues) the experiment described by `config`.
pub fn run_experiment(config: &RunConfig) -> Result<EvaluationReport, ExperimentError> {
    config.validate()?;
    let ds = load_dataset(&config.data, &config.market)?;
    let windows = rolling_windows(&ds, config.calibration_days, config.test_days)?;
    open_run(config, &ds, &windows)?;

    let mut rows = Vec::new();
    for &model in &config.models {
        let done = run_model(config, &ds, &windows, model)?;
        rows.push(done);
    }
    let models: Vec<String> = config.models.iter().map(|m| m.name().to_string()).collect();
    if rows.iter().any(|&r| r < windows.len()) {
        return Ok(EvaluationReport {
            run_dir: config.out.clone(),
            complete: false,
            models,
            rows,
            metrics: Vec::new(),
            gw: Vec::new(),
        });
    }
    evaluate_with(config, &ds, &windows)
}

/// Continues the run stored in `run_dir`, using its manifest.
pub fn resume(run_dir: impl AsRef<Path>) -> Result<EvaluationReport, ExperimentError> {
    resume_with_limit(run_dir, None)
}

pub fn resume_with_limit(run_dir: impl AsRef<Path>, window_limit: Option<usize>) -> Result<EvaluationReport, ExperimentError> {
    let config = load_manifest(run_dir.as_ref())?.config;
    run_experiment(&RunConfig { out: run_dir.as_ref().to_path_buf(), window_limit, ..config })
}

pub fn load_manifest(run_dir: &Path) -> Result<Manifest, ExperimentError> {
    let path = run_dir.join("manifest.json");
    if !path.exists() {
        return Err(ExperimentError::Incomplete(format!("no manifest in {}", run_dir.display())));
    }
    let f = File::open(&path)?;
    serde_json::from_reader(f).map_err(|e| ExperimentError::CorruptCheckpoint {
        file: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Recomputes `metrics.csv` and `gw_matrix.csv` from the forecasts of a
/// finished run.
pub fn evaluate_run(run_dir: impl AsRef<Path>) -> Result<EvaluationReport, ExperimentError> {
    let config = RunConfig { out: run_dir.as_ref().to_path_buf(), ..load_manifest(run_dir.as_ref())?.config };
    let ds = load_dataset(&config.data, &config.market)?;
    let windows = rolling_windows(&ds, config.calibration_days, config.test_days)?;
    evaluate_with(&config, &ds, &windows)
}

fn evaluate_with(config: &RunConfig, ds: &MarketDataset, windows: &[WindowSplit]) -> Result<EvaluationReport, ExperimentError> {
    let days: Vec<usize> = windows.iter().map(|w| w.target_day).collect();
    let naive = naive_series(ds, &days)?;
    let mut series = Vec::new();
    for &model in &config.models {
        let s = load_checkpoint(&forecasts_path(&config.out, model), model, ds, &days)?;
        if s.len() < days.len() {
            return Err(ExperimentError::Incomplete(format!("{model}: {} of {} test days", s.len(), days.len())));
        }
        series.push(s);
    }

    let mut metrics = Vec::new();
    for s in &series {
        for (scope, value) in rmae_table(ds, s, &naive)? {
            metrics.push(MetricRow { model: s.model_id.clone(), scope: scope.to_string(), rmae: value });
        }
    }
    let models: Vec<String> = series.iter().map(|s| s.model_id.clone()).collect();
    let gw = if series.len() < 2 {
        Vec::new()
    } else {
        match pvalue_matrix(ds, &series, 1, config.gw_lags) {
            Ok(m) => m,
            Err(EvalError::TooShort { n, lags }) => {
                log::warn!("{n} test days are too few for the pairwise test with {lags} lag(s); matrix left empty");
                vec![vec![None; series.len()]; series.len()]
            }
            Err(e) => return Err(e.into()),
        }
    };

    write_atomic(&config.out.join("metrics.csv"), |w| Ok(write_metrics(&metrics, w)?))?;
    write_atomic(&config.out.join("gw_matrix.csv"), |w| Ok(write_gw_matrix(&models, &gw, w)?))?;
    Ok(EvaluationReport {
        run_dir: config.out.clone(),
        complete: true,
        rows: vec![days.len(); models.len()],
        models,
        metrics,
        gw,
    })
}

/// Writes through a temporary file and renames, so readers never see a
/// half-written file.
fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), ExperimentError>,
) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads the completed prefix of a forecast file. A trailing partial line
/// (from an interrupted write) is cut off; anything else that does not
/// match the expected test days is an error.
fn load_checkpoint(
    path: &Path,
    model: ModelKind,
    ds: &MarketDataset,
    days: &[usize],
) -> Result<ForecastSeries, ExperimentError> {
    let corrupt = |reason: String| ExperimentError::CorruptCheckpoint { file: path.display().to_string(), reason };
    if !path.exists() {
        return Ok(ForecastSeries { model_id: model.name().to_string(), days: Vec::new(), values: Vec::new() });
    }
    let mut text = fs::read_to_string(path)?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        fs::write(path, &text)?;
    }
    if text.is_empty() {
        return Ok(ForecastSeries { model_id: model.name().to_string(), days: Vec::new(), values: Vec::new() });
    }
    let series = ForecastSeries::read_csv(model.name(), ds, text.as_bytes()).map_err(|e| corrupt(e.to_string()))?;
    if series.len() > days.len() || series.days[..] != days[..series.len()] {
        return Err(corrupt("rows do not match the test days".into()));
    }
    Ok(series)
}

/// Append-only forecast writer; each row is flushed before the next window.
struct ForecastAppender {
    inner: csv::Writer<File>,
}

impl ForecastAppender {
    fn open(path: &Path) -> Result<Self, ExperimentError> {
        let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            inner.write_record(forecast_header()).map_err(EvalError::from)?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    fn append(&mut self, ds: &MarketDataset, day: usize, values: &DayVector) -> Result<(), ExperimentError> {
        self.inner.write_record(forecast_record(ds.date(day), values)).map_err(EvalError::from)?;
        self.inner.flush()?;
        Ok(())
    }
}

enum Fitted {
    Naive,
    Lear(Box<LearModel>),
    Dnn(Box<DnnForecaster>),
}

/// Forecasts the remaining test days of one model; returns the number of
/// completed days.
fn run_model(
    config: &RunConfig,
    ds: &MarketDataset,
    windows: &[WindowSplit],
    model: ModelKind,
) -> Result<usize, ExperimentError> {
    let days: Vec<usize> = windows.iter().map(|w| w.target_day).collect();
    let path = forecasts_path(&config.out, model);
    let done = load_checkpoint(&path, model, ds, &days)?.len();
    let stop = config.window_limit.map_or(windows.len(), |l| l.min(windows.len()));
    if done >= stop {
        return Ok(done);
    }

    let hyper = match model {
        ModelKind::Dnn24 => vec![ensure_hyperparams(config, ds, windows, model)?.remove(0)],
        ModelKind::Dnn1 => ensure_hyperparams(config, ds, windows, model)?,
        _ => Vec::new(),
    };
    if config.save_models {
        fs::create_dir_all(config.out.join("models"))?;
    }
    let mut appender = ForecastAppender::open(&path)?;
    let mut fitted: Option<(usize, Fitted)> = None;
    for (i, w) in windows.iter().enumerate().take(stop).skip(done) {
        let refit_at = i - i % config.recalibration_interval;
        if fitted.as_ref().is_none_or(|(at, _)| *at != refit_at) {
            let fit_window = windows[refit_at];
            let seed = derive_seed(config.seed, model.stream(), refit_at as u64);
            fitted = Some((refit_at, fit_model(config, ds, &fit_window, model, &hyper, seed)?));
        }
        let (_, m) = fitted.as_ref().expect("fitted above");
        let forecast = match m {
            Fitted::Naive => naive_forecast(ds, w.target_day)?,
            Fitted::Lear(lear) => lear.forecast(ds, w.target_day)?,
            Fitted::Dnn(net) => net.predict_day(ds, w.target_day)?,
        };
        appender.append(ds, w.target_day, &forecast)?;
        if (i + 1) % 25 == 0 || i + 1 == windows.len() {
            log::info!("{model}: {} of {} test days", i + 1, windows.len());
        }
    }
    Ok(stop)
}

fn fit_model(
    config: &RunConfig,
    ds: &MarketDataset,
    window: &WindowSplit,
    model: ModelKind,
    hyper: &[DnnHyperparams],
    seed: u64,
) -> Result<Fitted, ExperimentError> {
    let date = ds.date(window.target_day);
    match model {
        ModelKind::Naive => Ok(Fitted::Naive),
        ModelKind::Lear => {
            let m = fit_lear(ds, window, &FeatureSpec::all(Encoding::LearOneHot), &config.lear)?;
            if config.save_models {
                let f = File::create(config.out.join("models").join(format!("lear_{date}.csv")))?;
                m.write_coefficients(BufWriter::new(f))?;
            }
            Ok(Fitted::Lear(Box::new(m)))
        }
        ModelKind::Dnn24 | ModelKind::Dnn1 => {
            let split = split_train_validation(window, SplitMode::RandomWeeks, seed)?;
            let forecaster = if model == ModelKind::Dnn24 {
                DnnForecaster::Multi(fit_network(ds, &split, &hyper[0], None, seed, &config.train)?)
            } else {
                let nets = hyper
                    .iter()
                    .enumerate()
                    .map(|(h, hp)| {
                        fit_network(ds, &split, hp, Some(h + 1), derive_seed(seed, model.stream(), h as u64), &config.train)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                DnnForecaster::PerHour(nets)
            };
            if config.save_models {
                let f = File::create(config.out.join("models").join(format!("{model}_{date}.json")))?;
                serde_json::to_writer(BufWriter::new(f), &forecaster)?;
            }
            Ok(Fitted::Dnn(Box::new(forecaster)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// 1-based hour for single-output networks.
    pub hour: Option<usize>,
    pub hyperparams: DnnHyperparams,
    pub best_trial: Trial,
}

/// Search result for a network model, searched once on the calibration
/// window preceding the first test day (validation on its most recent
/// weeks). Cached in `hyperparams_<model>.json`; an interrupted search
/// continues from its trial log. DNN24 yields one entry, DNN1 one per hour.
pub fn ensure_hyperparams(
    config: &RunConfig,
    ds: &MarketDataset,
    windows: &[WindowSplit],
    model: ModelKind,
) -> Result<Vec<DnnHyperparams>, ExperimentError> {
    let path = hyperparams_path(&config.out, model);
    if path.exists() {
        let outcomes: Vec<SearchOutcome> = serde_json::from_reader(File::open(&path)?).map_err(|e| {
            ExperimentError::CorruptCheckpoint { file: path.display().to_string(), reason: e.to_string() }
        })?;
        return Ok(outcomes.into_iter().map(|o| o.hyperparams).collect());
    }
    let hours: Vec<Option<usize>> = match model {
        ModelKind::Dnn24 => vec![None],
        ModelKind::Dnn1 => (1..=HOURS).map(Some).collect(),
        _ => return Err(ExperimentError::Config(format!("{model} has no hyperparameters"))),
    };
    let window = windows[0];
    let space = dnn_space(config.space);
    let mut outcomes = Vec::new();
    for hour in hours {
        let log_path = trials_path(&config.out, model, hour);
        let history = if log_path.exists() && fs::metadata(&log_path)?.len() > 0 {
            read_trial_log(File::open(&log_path)?, &space)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let mut log = TrialLogWriter::new(file, &space, history.is_empty())?;
        let seed = derive_seed(config.seed, SEARCH_STREAM + model.stream(), hour.unwrap_or(0) as u64);
        let result = search_dnn(
            ds,
            &window,
            config.space,
            hour,
            config.hyperopt_trials,
            &config.tpe,
            seed,
            &config.train,
            history,
            |t| {
                log::debug!("{model} trial {}: {:?} {}", t.id, t.status, t.objective);
                log.append(t)
            },
        )?;
        log::info!("{model} search{}: best validation MAE {}", hour.map_or(String::new(), |h| format!(" h{h}")), result.best.objective);
        outcomes.push(SearchOutcome { hour, hyperparams: decode_dnn(&result.best.point), best_trial: result.best });
    }
    write_atomic(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &outcomes)?;
        Ok(())
    })?;
    Ok(outcomes.into_iter().map(|o| o.hyperparams).collect())
}

/// Runs only the hyperparameter search for a network model.
pub fn run_hyperopt(config: &RunConfig, model: ModelKind) -> Result<Vec<DnnHyperparams>, ExperimentError> {
    if !model.is_network() {
        return Err(ExperimentError::Config(format!("{model} has no hyperparameters")));
    }
    let config = RunConfig { models: vec![model], ..config.clone() };
    config.validate()?;
    let ds = load_dataset(&config.data, &config.market)?;
    let windows = rolling_windows(&ds, config.calibration_days, config.test_days)?;
    open_run(&config, &ds, &windows)?;
    ensure_hyperparams(&config, &ds, &windows, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_roundtrip() {
        for m in [ModelKind::Naive, ModelKind::Lear, ModelKind::Dnn24, ModelKind::Dnn1] {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert!("lstm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 1, 3), derive_seed(7, 1, 3));
        let mut all: Vec<u64> = (0..50).flat_map(|i| (1..4).map(move |s| derive_seed(7, s, i))).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 150);
    }

    #[test]
    fn network_models_need_whole_weeks() {
        let mut c = RunConfig::new("x.csv", "m", "out");
        c.calibration_days = 180;
        c.models = vec![ModelKind::Lear];
        assert!(c.validate().is_ok());
        c.models.push(ModelKind::Dnn24);
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
    }
}
