//! Per-feature normalization schemes and the asinh variance-stabilizing
//! transform.
//!
//! Every feature (column) is fitted independently with the same method. The
//! median/MAD scheme scales by `z75 / MAD`, where `z75` is the 0.75 quantile
//! of the standard normal, so that the scaled MAD of Gaussian data is one.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("feature index {index} out of range ({len} features fitted)")]
    UnknownFeature { index: usize, len: usize },
    #[error("feature {0} has no samples")]
    NoSamples(usize),
    #[error("feature {0} has non-finite samples")]
    NonFinite(usize),
    #[error("expected {expected} features, got {got}")]
    Width { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormMethod {
    None,
    UnitInterval,
    SymmetricInterval,
    MeanStd,
    MedianMad,
    MedianMadAsinh,
}

impl NormMethod {
    pub const ALL: [NormMethod; 6] = [
        NormMethod::None,
        NormMethod::UnitInterval,
        NormMethod::SymmetricInterval,
        NormMethod::MeanStd,
        NormMethod::MedianMad,
        NormMethod::MedianMadAsinh,
    ];
}

/// The 0.75 quantile of the standard normal distribution.
pub fn z75() -> f64 {
    static Z75: OnceLock<f64> = OnceLock::new();
    *Z75.get_or_init(|| Normal::standard().inverse_cdf(0.75))
}

/// Fitted statistics of a single feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureStats {
    /// Passed through untouched (method `None`, or an exempt column).
    Identity,
    Range { min: f64, max: f64 },
    MeanStd { mean: f64, std: f64 },
    MedianMad { median: f64, mad: f64 },
    /// Zero spread: applies to 0 and inverts to `center`.
    Degenerate { center: f64 },
}

impl FeatureStats {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, FeatureStats::Degenerate { .. })
    }
}

/// Fitted per-feature normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub method: NormMethod,
    pub stats: Vec<FeatureStats>,
    pub z75: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median and raw median absolute deviation (no consistency constant).
pub fn median_mad(samples: &[f64]) -> (f64, f64) {
    let mut v = samples.to_vec();
    let med = median(&mut v);
    for x in v.iter_mut() {
        *x = (*x - med).abs();
    }
    (med, median(&mut v))
}

fn fit_feature(samples: &[f64], method: NormMethod) -> FeatureStats {
    match method {
        NormMethod::None => FeatureStats::Identity,
        NormMethod::UnitInterval | NormMethod::SymmetricInterval => {
            let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                FeatureStats::Range { min, max }
            } else {
                FeatureStats::Degenerate { center: min }
            }
        }
        NormMethod::MeanStd => {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 0.0 {
                FeatureStats::MeanStd { mean, std }
            } else {
                FeatureStats::Degenerate { center: mean }
            }
        }
        NormMethod::MedianMad | NormMethod::MedianMadAsinh => {
            let (median, mad) = median_mad(samples);
            if mad > 0.0 {
                FeatureStats::MedianMad { median, mad }
            } else {
                FeatureStats::Degenerate { center: median }
            }
        }
    }
}

impl NormalizationParams {
    /// Fits one feature per entry of `features`.
    pub fn fit<S: AsRef<[f64]>>(features: &[S], method: NormMethod) -> Result<Self, TransformError> {
        let stats = features
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let s = s.as_ref();
                if s.is_empty() {
                    return Err(TransformError::NoSamples(i));
                }
                if s.iter().any(|x| !x.is_finite()) {
                    return Err(TransformError::NonFinite(i));
                }
                Ok(fit_feature(s, method))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { method, stats, z75: z75() })
    }

    /// Fits one feature per column of `m`, leaving `exempt` columns untouched.
    pub fn fit_columns(m: &DMatrix<f64>, method: NormMethod, exempt: &[usize]) -> Result<Self, TransformError> {
        let cols: Vec<&[f64]> = (0..m.ncols())
            .map(|j| &m.as_slice()[j * m.nrows()..(j + 1) * m.nrows()])
            .collect();
        let mut params = Self::fit(&cols, method)?;
        for &j in exempt {
            if j < params.stats.len() {
                params.stats[j] = FeatureStats::Identity;
            }
        }
        Ok(params)
    }

    /// Parameters that leave every feature unchanged.
    pub fn identity(n_features: usize) -> Self {
        Self { method: NormMethod::None, stats: vec![FeatureStats::Identity; n_features], z75: z75() }
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    fn stat(&self, index: usize) -> Result<FeatureStats, TransformError> {
        self.stats
            .get(index)
            .copied()
            .ok_or(TransformError::UnknownFeature { index, len: self.stats.len() })
    }

    pub fn apply(&self, value: f64, index: usize) -> Result<f64, TransformError> {
        Ok(self.apply_stat(self.stat(index)?, value))
    }

    pub fn invert(&self, value: f64, index: usize) -> Result<f64, TransformError> {
        Ok(self.invert_stat(self.stat(index)?, value))
    }

    fn apply_stat(&self, stat: FeatureStats, x: f64) -> f64 {
        match stat {
            FeatureStats::Identity => x,
            FeatureStats::Degenerate { .. } => 0.0,
            FeatureStats::Range { min, max } => {
                let u = (x - min) / (max - min);
                if self.method == NormMethod::SymmetricInterval {
                    2.0 * u - 1.0
                } else {
                    u
                }
            }
            FeatureStats::MeanStd { mean, std } => (x - mean) / std,
            FeatureStats::MedianMad { median, mad } => {
                let scaled = self.z75 * (x - median) / mad;
                if self.method == NormMethod::MedianMadAsinh {
                    scaled.asinh()
                } else {
                    scaled
                }
            }
        }
    }

    fn invert_stat(&self, stat: FeatureStats, y: f64) -> f64 {
        match stat {
            FeatureStats::Identity => y,
            FeatureStats::Degenerate { center } => center,
            FeatureStats::Range { min, max } => {
                let u = if self.method == NormMethod::SymmetricInterval { 0.5 * (y + 1.0) } else { y };
                min + u * (max - min)
            }
            FeatureStats::MeanStd { mean, std } => mean + y * std,
            FeatureStats::MedianMad { median, mad } => {
                let scaled = if self.method == NormMethod::MedianMadAsinh { y.sinh() } else { y };
                mad / self.z75 * scaled + median
            }
        }
    }

    /// Applies column-wise to a matrix whose columns are the fitted features.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>, TransformError> {
        self.map_matrix(m, |s, x| self.apply_stat(s, x))
    }

    pub fn invert_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>, TransformError> {
        self.map_matrix(m, |s, x| self.invert_stat(s, x))
    }

    pub fn apply_slice(&self, values: &mut [f64]) -> Result<(), TransformError> {
        self.check_width(values.len())?;
        for (v, s) in values.iter_mut().zip(&self.stats) {
            *v = self.apply_stat(*s, *v);
        }
        Ok(())
    }

    pub fn invert_slice(&self, values: &mut [f64]) -> Result<(), TransformError> {
        self.check_width(values.len())?;
        for (v, s) in values.iter_mut().zip(&self.stats) {
            *v = self.invert_stat(*s, *v);
        }
        Ok(())
    }

    fn check_width(&self, got: usize) -> Result<(), TransformError> {
        if got != self.stats.len() {
            return Err(TransformError::Width { expected: self.stats.len(), got });
        }
        Ok(())
    }

    fn map_matrix(
        &self,
        m: &DMatrix<f64>,
        f: impl Fn(FeatureStats, f64) -> f64,
    ) -> Result<DMatrix<f64>, TransformError> {
        self.check_width(m.ncols())?;
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let s = self.stats[j];
            col.iter_mut().for_each(|v| *v = f(s, *v));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen from a 30-digit evaluation of sqrt(2) * erfinv(0.5).
    const Z75_REFERENCE: f64 = 0.674_489_750_196_081_7;

    #[test]
    fn z75_matches_high_precision_quantile() {
        assert!((z75() - Z75_REFERENCE).abs() < 1e-12, "{}", z75());
    }

    #[test]
    fn median_mad_of_small_sample() {
        let p = NormalizationParams::fit(&[[1.0, 2.0, 3.0]], NormMethod::MedianMad).unwrap();
        assert_eq!(p.stats[0], FeatureStats::MedianMad { median: 2.0, mad: 1.0 });
        assert!((p.apply(3.0, 0).unwrap() - Z75_REFERENCE).abs() < 1e-12);
        assert_eq!(p.apply(2.0, 0).unwrap(), 0.0);
        let a = NormalizationParams::fit(&[[1.0, 2.0, 3.0]], NormMethod::MedianMadAsinh).unwrap();
        assert_eq!(a.apply(2.0, 0).unwrap(), 0.0);
    }

    #[test]
    fn even_sample_median() {
        assert_eq!(median_mad(&[4.0, 1.0, 3.0, 2.0]), (2.5, 1.0));
    }

    #[test]
    fn asinh_closed_form() {
        // ln(1 + sqrt(2))
        assert!((1.0f64.asinh() - 0.881_373_587_019_543).abs() < 1e-15);
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let p = NormalizationParams::fit(&[[5.0; 4]], NormMethod::MeanStd).unwrap();
        assert!(p.stats[0].is_degenerate());
        assert_eq!(p.apply(123.0, 0).unwrap(), 0.0);
        assert_eq!(p.invert(0.7, 0).unwrap(), 5.0);
    }

    #[test]
    fn none_is_identity() {
        let p = NormalizationParams::fit(&[[1.0, 9.0]], NormMethod::None).unwrap();
        assert_eq!(p.stats, vec![FeatureStats::Identity]);
        assert_eq!(p.apply(3.25, 0).unwrap(), 3.25);
        assert_eq!(p.invert(3.25, 0).unwrap(), 3.25);
    }

    #[test]
    fn interval_endpoints() {
        let p = NormalizationParams::fit(&[[0.0, 10.0, 5.0]], NormMethod::UnitInterval).unwrap();
        assert_eq!(p.apply(10.0, 0).unwrap(), 1.0);
        assert_eq!(p.apply(0.0, 0).unwrap(), 0.0);
        let s = NormalizationParams::fit(&[[0.0, 10.0, 5.0]], NormMethod::SymmetricInterval).unwrap();
        assert_eq!(s.apply(0.0, 0).unwrap(), -1.0);
        assert_eq!(s.apply(10.0, 0).unwrap(), 1.0);
    }

    #[test]
    fn asinh_roundtrip_on_integer_range() {
        let samples: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = NormalizationParams::fit(&[samples], NormMethod::MedianMadAsinh).unwrap();
        let y = p.apply(7.3, 0).unwrap();
        assert!((p.invert(y, 0).unwrap() - 7.3).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let p = NormalizationParams::fit(&[[1.0, 2.0]], NormMethod::MeanStd).unwrap();
        assert_eq!(p.apply(1.0, 3), Err(TransformError::UnknownFeature { index: 3, len: 1 }));
        let empty: [&[f64]; 1] = [&[]];
        assert_eq!(NormalizationParams::fit(&empty, NormMethod::MeanStd), Err(TransformError::NoSamples(0)));
    }

    #[test]
    fn exempt_columns_untouched() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 4.0, 0.0]);
        let p = NormalizationParams::fit_columns(&m, NormMethod::MedianMadAsinh, &[1]).unwrap();
        let t = p.apply_matrix(&m).unwrap();
        assert_eq!(t.column(1), m.column(1));
        assert_eq!(t[(1, 0)], 0.0);
    }

    proptest! {
        #[test]
        fn roundtrip_all_methods(
            samples in proptest::collection::vec(-1e4f64..1e4, 2..40),
            x in -1e5f64..1e5,
            m in 0usize..6,
        ) {
            let method = NormMethod::ALL[m];
            let p = NormalizationParams::fit(&[samples], method).unwrap();
            prop_assume!(!p.stats[0].is_degenerate());
            let back = p.invert(p.apply(x, 0).unwrap(), 0).unwrap();
            prop_assert!((back - x).abs() < 1e-9 * x.abs().max(1.0));
        }

        #[test]
        fn asinh_is_odd_for_symmetric_stats(x in -1e3f64..1e3) {
            let p = NormalizationParams::fit(&[[-2.0, -1.0, 0.0, 1.0, 2.0]], NormMethod::MedianMadAsinh).unwrap();
            prop_assert_eq!(p.apply(-x, 0).unwrap(), -p.apply(x, 0).unwrap());
        }
    }
}
