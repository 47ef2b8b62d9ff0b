//! Day-ahead forecasters built on the perceptron: data splitting,
//! per-window normalization and the DNN24 / DNN1 prediction paths.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, InitScheme, Mlp};
use super::train::{train, TrainSettings, TrainingLog};
use super::{MlpConfig, NeuralError};
use crate::data::{MarketDataset, WindowSplit, HOURS};
use crate::features::{build_design_matrix, build_features, Encoding, FeatureSpec, TargetHours, MAX_LAG};
use crate::transform::{NormMethod, NormalizationParams};

/// Validation weeks in the reference four-year window.
pub const VALIDATION_WEEKS: usize = 42;
pub const REFERENCE_WEEKS: usize = 208;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Validation weeks drawn at random (seeded); used for final estimation.
    RandomWeeks,
    /// The trailing weeks form the validation set; used during the search.
    MostRecent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainValidationSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Window-relative indices of the validation weeks, ascending.
    pub validation_weeks: Vec<usize>,
}

/// Validation weeks for a window of `total` weeks, keeping the 42/208 ratio.
pub fn validation_weeks(total: usize) -> Result<usize, NeuralError> {
    if total < 2 {
        return Err(NeuralError::EmptySplit(if total == 0 { "training" } else { "validation" }));
    }
    let v = ((total * VALIDATION_WEEKS) as f64 / REFERENCE_WEEKS as f64).round() as usize;
    Ok(v.clamp(1, total - 1))
}

/// Splits a calibration window into whole training and validation weeks.
/// The first `MAX_LAG` days of the window only provide lags and are dropped
/// from whichever set they fall in.
pub fn split_train_validation(
    window: &WindowSplit,
    mode: SplitMode,
    seed: u64,
) -> Result<TrainValidationSplit, NeuralError> {
    let len = window.calibration_len;
    if len == 0 || !len.is_multiple_of(7) {
        return Err(NeuralError::NotWholeWeeks(len));
    }
    let weeks = len / 7;
    let v = validation_weeks(weeks)?;
    let mut chosen: Vec<usize> = match mode {
        SplitMode::MostRecent => (weeks - v..weeks).collect(),
        SplitMode::RandomWeeks => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, weeks, v).into_vec()
        }
    };
    chosen.sort_unstable();

    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (offset, day) in window.calibration_days().enumerate() {
        if offset < MAX_LAG {
            continue;
        }
        if chosen.binary_search(&(offset / 7)).is_ok() {
            validation.push(day);
        } else {
            train.push(day);
        }
    }
    if train.is_empty() {
        return Err(NeuralError::EmptySplit("training"));
    }
    if validation.is_empty() {
        return Err(NeuralError::EmptySplit("validation"));
    }
    Ok(TrainValidationSplit { train, validation, validation_weeks: chosen })
}

/// One point of the network search space, decoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnnHyperparams {
    pub hidden_sizes: [usize; 2],
    pub activation: Activation,
    pub dropout_rate: f64,
    pub use_batch_norm: bool,
    pub init_scheme: InitScheme,
    pub l1_coeff: f64,
    pub learning_rate: f64,
    /// Applied to inputs and targets alike.
    pub preprocessing: NormMethod,
    pub features: FeatureSpec,
}

impl DnnHyperparams {
    pub fn config(&self, output_width: usize, seed: u64) -> MlpConfig {
        MlpConfig {
            hidden_sizes: self.hidden_sizes,
            activation: self.activation,
            dropout_rate: self.dropout_rate,
            use_batch_norm: self.use_batch_norm,
            init_scheme: self.init_scheme,
            l1_coeff: self.l1_coeff,
            learning_rate: self.learning_rate,
            output_width,
            input_norm: self.preprocessing,
            target_norm: self.preprocessing,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub config: MlpConfig,
    pub features: FeatureSpec,
    /// 1-based hour for a single-output network, `None` for 24 outputs.
    pub hour: Option<usize>,
    pub net: Mlp,
    pub input_norm: NormalizationParams,
    pub target_norm: NormalizationParams,
    pub log: TrainingLog,
}

fn target_of(hour: Option<usize>) -> TargetHours {
    hour.map_or(TargetHours::All, TargetHours::Single)
}

/// Fits normalizers on the training days, then trains a network.
pub fn fit_network(
    dataset: &MarketDataset,
    split: &TrainValidationSplit,
    hyper: &DnnHyperparams,
    hour: Option<usize>,
    seed: u64,
    settings: &TrainSettings,
) -> Result<TrainedNetwork, NeuralError> {
    let features = FeatureSpec { encoding: Encoding::DnnMultiValue, ..hyper.features };
    if !features.is_usable() {
        return Err(NeuralError::Config("feature selection is empty".into()));
    }
    let target = target_of(hour);
    let config = hyper.config(target.width(), seed);
    let tr = build_design_matrix(dataset, &split.train, &features, target)?;
    let va = build_design_matrix(dataset, &split.validation, &features, target)?;
    let input_norm = NormalizationParams::fit_columns(&tr.x, config.input_norm, &[])?;
    let target_norm = NormalizationParams::fit_columns(&tr.y, config.target_norm, &[])?;
    let (net, log) = train(
        &config,
        settings,
        &input_norm.apply_matrix(&tr.x)?,
        &target_norm.apply_matrix(&tr.y)?,
        &input_norm.apply_matrix(&va.x)?,
        &target_norm.apply_matrix(&va.y)?,
    )?;
    Ok(TrainedNetwork { config, features, hour, net, input_norm, target_norm, log })
}

impl TrainedNetwork {
    /// Price forecasts (rows = days) on the original scale.
    pub fn forecast_days(&self, dataset: &MarketDataset, days: &[usize]) -> Result<DMatrix<f64>, NeuralError> {
        let dm = build_design_matrix(dataset, days, &self.features, target_of(self.hour))?;
        let out = self.net.predict(&self.input_norm.apply_matrix(&dm.x)?)?;
        Ok(self.target_norm.invert_matrix(&out)?)
    }

    pub fn predict_day(&self, dataset: &MarketDataset, day: usize) -> Result<Vec<f64>, NeuralError> {
        let mut fv = build_features(dataset, day, &self.features)?.values;
        self.input_norm.apply_slice(&mut fv)?;
        let x = DMatrix::from_row_slice(1, fv.len(), &fv);
        let mut out: Vec<f64> = self.net.predict(&x)?.iter().copied().collect();
        self.target_norm.invert_slice(&mut out)?;
        Ok(out)
    }

    /// Mean absolute price error over `days`.
    pub fn price_mae(&self, dataset: &MarketDataset, days: &[usize]) -> Result<f64, NeuralError> {
        let f = self.forecast_days(dataset, days)?;
        let mut total = 0.0;
        for (i, &d) in days.iter().enumerate() {
            for (j, h) in self.hours().enumerate() {
                total += (f[(i, j)] - dataset.prices()[d][h]).abs();
            }
        }
        Ok(total / f.len() as f64)
    }

    /// 0-based hours covered by the outputs.
    fn hours(&self) -> std::ops::Range<usize> {
        match self.hour {
            Some(h) => h - 1..h,
            None => 0..HOURS,
        }
    }
}

/// Trained networks for one window.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DnnForecaster {
    /// One network with 24 outputs.
    Multi(TrainedNetwork),
    /// One single-output network per hour, in hour order.
    PerHour(Vec<TrainedNetwork>),
}

impl DnnForecaster {
    pub fn predict_day(&self, dataset: &MarketDataset, day: usize) -> Result<[f64; HOURS], NeuralError> {
        match self {
            DnnForecaster::Multi(net) => {
                let v = net.predict_day(dataset, day)?;
                if v.len() != HOURS {
                    return Err(NeuralError::Dimension { expected: HOURS, got: v.len() });
                }
                Ok(std::array::from_fn(|h| v[h]))
            }
            DnnForecaster::PerHour(nets) => {
                let mut out = [0.0; HOURS];
                for (h, slot) in out.iter_mut().enumerate() {
                    let net = nets
                        .iter()
                        .find(|n| n.hour == Some(h + 1))
                        .ok_or(NeuralError::MissingNetwork(h + 1))?;
                    *slot = net.predict_day(dataset, day)?[0];
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    fn window(len: usize) -> WindowSplit {
        WindowSplit { calibration_start: 3, calibration_len: len, target_day: 3 + len }
    }

    #[test]
    fn reference_window_split() {
        let w = window(1456);
        for mode in [SplitMode::RandomWeeks, SplitMode::MostRecent] {
            let s = split_train_validation(&w, mode, 9).unwrap();
            assert_eq!(s.validation_weeks.len(), 42);
            assert_eq!(s.train.len() + s.validation.len(), 1456 - 7);
            assert!(s.train.iter().all(|d| !s.validation.contains(d)));
        }
        let recent = split_train_validation(&w, SplitMode::MostRecent, 0).unwrap();
        assert_eq!(recent.validation.len(), 294);
        assert_eq!(*recent.validation.last().unwrap(), 3 + 1455);
        assert_eq!(recent.validation[0], 3 + 1456 - 294);
    }

    #[test]
    fn random_split_is_seeded() {
        let w = window(1456);
        let a = split_train_validation(&w, SplitMode::RandomWeeks, 1).unwrap();
        assert_eq!(a, split_train_validation(&w, SplitMode::RandomWeeks, 1).unwrap());
        assert_ne!(a, split_train_validation(&w, SplitMode::RandomWeeks, 2).unwrap());
    }

    #[test]
    fn split_needs_whole_weeks() {
        assert!(matches!(split_train_validation(&window(180), SplitMode::MostRecent, 0), Err(NeuralError::NotWholeWeeks(180))));
        assert_eq!(validation_weeks(26).unwrap(), 5);
        assert!(validation_weeks(1).is_err());
    }

    fn hyper() -> DnnHyperparams {
        DnnHyperparams {
            hidden_sizes: [8, 6],
            activation: Activation::Relu,
            dropout_rate: 0.0,
            use_batch_norm: false,
            init_scheme: InitScheme::UniformScaled,
            l1_coeff: 0.0,
            learning_rate: 1e-3,
            preprocessing: NormMethod::MedianMad,
            features: FeatureSpec::all(Encoding::DnnMultiValue),
        }
    }

    #[test]
    fn zero_network_forecasts_denormalized_zero() {
        let ds = generate(&SyntheticConfig { days: 120, seed: 2, ..Default::default() });
        let w = WindowSplit { calibration_start: 0, calibration_len: 112, target_day: 112 };
        let split = split_train_validation(&w, SplitMode::MostRecent, 0).unwrap();
        let settings = TrainSettings { max_epochs: 2, ..Default::default() };
        let mut net = fit_network(&ds, &split, &hyper(), None, 0, &settings).unwrap();
        net.net.params.fill(0.0);
        let f = DnnForecaster::Multi(net.clone()).predict_day(&ds, 112).unwrap();
        for (h, v) in f.iter().enumerate() {
            assert!((v - net.target_norm.invert(0.0, h).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn per_hour_forecaster_assembles_hours() {
        let ds = generate(&SyntheticConfig { days: 120, seed: 2, ..Default::default() });
        let w = WindowSplit { calibration_start: 0, calibration_len: 112, target_day: 112 };
        let split = split_train_validation(&w, SplitMode::MostRecent, 0).unwrap();
        let settings = TrainSettings { max_epochs: 3, ..Default::default() };
        let nets: Vec<TrainedNetwork> = (1..=HOURS)
            .map(|h| {
                let mut hp = hyper();
                // hour-specific feature sets are allowed
                hp.features = hp.features.with_flag(h % 4, false);
                fit_network(&ds, &split, &hp, Some(h), h as u64, &settings).unwrap()
            })
            .collect();
        let f = DnnForecaster::PerHour(nets.clone()).predict_day(&ds, 112).unwrap();
        for h in [0, 5, 23] {
            assert_eq!(f[h], nets[h].predict_day(&ds, 112).unwrap()[0]);
        }
        let missing = DnnForecaster::PerHour(nets[..23].to_vec());
        assert!(matches!(missing.predict_day(&ds, 112), Err(NeuralError::MissingNetwork(24))));
    }

    #[test]
    fn empty_feature_set_is_rejected() {
        let ds = generate(&SyntheticConfig { days: 60, seed: 2, ..Default::default() });
        let w = WindowSplit { calibration_start: 0, calibration_len: 56, target_day: 56 };
        let split = split_train_validation(&w, SplitMode::MostRecent, 0).unwrap();
        let mut hp = hyper();
        hp.features = FeatureSpec::none(Encoding::DnnMultiValue);
        assert!(matches!(fit_network(&ds, &split, &hp, None, 0, &TrainSettings::default()), Err(NeuralError::Config(_))));
    }
}
