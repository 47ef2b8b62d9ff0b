//! LASSO-estimated autoregressive model: 24 hourly linear regressions sharing
//! the full 247-column regressor set, fitted on asinh-stabilized data.
//!
//! Inputs and targets are median/MAD normalized column by column over the
//! calibration rows and passed through `asinh`; weekday dummies are left as
//! 0/1. Forecasts are mapped back with `sinh` and denormalized.

pub mod lasso;
mod path;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{MarketDataset, WindowSplit, HOURS};
use crate::features::{build_design_matrix, build_features, Encoding, FeatureError, FeatureSpec, TargetHours, MAX_LAG};
use crate::transform::{NormMethod, NormalizationParams, TransformError};

pub use lasso::{fit_lasso, lambda_grid, select_lambda, Criterion, GramDesign, LassoError, LassoFit, LassoSettings};

#[derive(Debug, Error)]
pub enum LearError {
    #[error("LEAR needs all 11 feature blocks with one-hot weekday encoding, got {0}")]
    BadSpec(String),
    #[error("calibration window leaves no rows after the {MAX_LAG} lag days")]
    WindowTooShort,
    #[error("hour {hour}: {source}")]
    Lasso { hour: usize, source: LassoError },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearSettings {
    pub grid_size: usize,
    /// Smallest grid penalty as a fraction of the largest.
    pub grid_ratio: f64,
    pub criterion: Criterion,
    pub lasso: LassoSettings,
}

impl Default for LearSettings {
    fn default() -> Self {
        Self { grid_size: 100, grid_ratio: 1e-4, criterion: Criterion::Aicc, lasso: LassoSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourFit {
    pub lambda: f64,
    pub coef: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearModel {
    pub spec: FeatureSpec,
    pub window: WindowSplit,
    pub input_norm: NormalizationParams,
    /// One feature per hour of the day.
    pub target_norm: NormalizationParams,
    pub hours: Vec<HourFit>,
}

/// Calibration rows of a window: every day whose lags fall inside it.
pub fn calibration_rows(window: &WindowSplit) -> Vec<usize> {
    window.calibration_days().skip(MAX_LAG).collect()
}

/// Fits the 24 hourly regressions on one calibration window.
pub fn fit_lear(
    dataset: &MarketDataset,
    window: &WindowSplit,
    spec: &FeatureSpec,
    settings: &LearSettings,
) -> Result<LearModel, LearError> {
    if !spec.is_full() || spec.encoding != Encoding::LearOneHot {
        return Err(LearError::BadSpec(format!("{spec} / {:?}", spec.encoding)));
    }
    let rows = calibration_rows(window);
    if rows.is_empty() {
        return Err(LearError::WindowTooShort);
    }
    let dm = build_design_matrix(dataset, &rows, spec, TargetHours::All)?;
    let dummies = dm.layout.calendar_columns();
    let input_norm = NormalizationParams::fit_columns(&dm.x, NormMethod::MedianMadAsinh, &dummies)?;
    let target_norm = NormalizationParams::fit_columns(&dm.y, NormMethod::MedianMadAsinh, &[])?;
    let x = input_norm.apply_matrix(&dm.x)?;
    let y = target_norm.apply_matrix(&dm.y)?;

    let design = GramDesign::new(&x).map_err(|source| LearError::Lasso { hour: 0, source })?;
    let hours = (0..HOURS)
        .into_par_iter()
        .map(|h| {
            let wrap = |source| LearError::Lasso { hour: h + 1, source };
            let col: Vec<f64> = y.column(h).iter().copied().collect();
            let r = design.response(&col).map_err(wrap)?;
            let lmax = design.lambda_max(&r);
            if lmax == 0.0 {
                return Ok(HourFit { lambda: 0.0, coef: vec![0.0; design.n_cols()] });
            }
            let grid = lambda_grid(lmax, settings.grid_size, settings.grid_ratio);
            let sel = design.select(&r, &grid, settings.criterion, &settings.lasso).map_err(wrap)?;
            Ok(HourFit { lambda: sel.lambda, coef: sel.coef })
        })
        .collect::<Result<Vec<_>, LearError>>()?;

    Ok(LearModel { spec: *spec, window: *window, input_norm, target_norm, hours })
}

impl LearModel {
    /// Forecast on the transformed scale, before back-transformation.
    pub fn transformed_forecast(&self, dataset: &MarketDataset, day: usize) -> Result<[f64; HOURS], LearError> {
        let mut fv = build_features(dataset, day, &self.spec)?.values;
        self.input_norm.apply_slice(&mut fv)?;
        Ok(std::array::from_fn(|h| {
            self.hours[h].coef.iter().zip(&fv).map(|(b, x)| b * x).sum::<f64>()
        }))
    }

    /// Price forecast for `day`, back-transformed to the original scale.
    pub fn forecast(&self, dataset: &MarketDataset, day: usize) -> Result<[f64; HOURS], LearError> {
        let mut out = self.transformed_forecast(dataset, day)?;
        self.target_norm.invert_slice(&mut out)?;
        Ok(out)
    }

    /// Writes coefficients as `hour,block,lag_hour,value` rows; `lag_hour` is
    /// the 1-based hour (or weekday) within the block.
    pub fn write_coefficients<W: Write>(&self, mut w: W) -> Result<(), LearError> {
        writeln!(w, "hour,block,lag_hour,value")?;
        let layout = self.spec.layout();
        for (h, fit) in self.hours.iter().enumerate() {
            for (j, b) in fit.coef.iter().enumerate() {
                let (block, offset) = layout.locate(j).expect("coefficient within layout");
                writeln!(w, "{},{},{},{}", h + 1, block.name(), offset + 1, b)?;
            }
        }
        Ok(())
    }
}

/// Fits on `window` and forecasts its target day.
pub fn lear_forecast(
    dataset: &MarketDataset,
    window: &WindowSplit,
    settings: &LearSettings,
) -> Result<[f64; HOURS], LearError> {
    let model = fit_lear(dataset, window, &FeatureSpec::all(Encoding::LearOneHot), settings)?;
    model.forecast(dataset, window.target_day)
}
