//! Forecast evaluation: the seasonal naive benchmark, relative MAE and the
//! Giacomini-White test of conditional predictive ability.

use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::data::{DayVector, MarketDataset, HOURS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("day {0} has no price a week earlier")]
    InsufficientHistory(usize),
    #[error("series are not aligned: {0}")]
    Misaligned(String),
    #[error("naive forecast has zero absolute error; relative MAE is undefined")]
    ZeroNaiveError,
    #[error("{model}: non-finite forecast for {date}")]
    NonFinite { model: String, date: NaiveDate },
    #[error("{n} loss differentials are too few for {lags} lag(s)")]
    TooShort { n: usize, lags: usize },
    #[error("covariance of the test moments is singular")]
    SingularCovariance,
    #[error("need at least two forecast series, got {0}")]
    TooFewModels(usize),
    #[error("forecast file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One model's 24-hour forecasts for a run of test days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub model_id: String,
    /// Dataset day indices, strictly increasing.
    pub days: Vec<usize>,
    pub values: Vec<DayVector>,
}

impl ForecastSeries {
    pub fn new(
        model_id: impl Into<String>,
        dataset: &MarketDataset,
        days: Vec<usize>,
        values: Vec<DayVector>,
    ) -> Result<Self, EvalError> {
        let model_id = model_id.into();
        if days.len() != values.len() {
            return Err(EvalError::Misaligned(format!("{} days but {} forecast rows", days.len(), values.len())));
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Misaligned(format!("{model_id}: days not strictly increasing")));
        }
        if let Some(&d) = days.last() {
            if d >= dataset.len() {
                return Err(EvalError::Misaligned(format!("{model_id}: day {d} beyond dataset")));
            }
        }
        for (d, v) in days.iter().zip(&values) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EvalError::NonFinite { model: model_id, date: dataset.date(*d) });
            }
        }
        Ok(Self { model_id, days, values })
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Errors `p - p_hat` per day.
    pub fn errors(&self, dataset: &MarketDataset) -> Vec<DayVector> {
        self.days
            .iter()
            .zip(&self.values)
            .map(|(&d, f)| std::array::from_fn(|h| dataset.prices()[d][h] - f[h]))
            .collect()
    }

    /// Writes `date,h1,...,h24` rows.
    pub fn write_csv<W: Write>(&self, dataset: &MarketDataset, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(forecast_header())?;
        for (&d, v) in self.days.iter().zip(&self.values) {
            w.write_record(forecast_record(dataset.date(d), v))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(model_id: &str, dataset: &MarketDataset, reader: R) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != forecast_header() {
            return Err(EvalError::Format(format!("unexpected header {header:?}")));
        }
        let (mut days, mut values) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let date: NaiveDate =
                rec[0].parse().map_err(|e| EvalError::Format(format!("bad date {:?}: {e}", &rec[0])))?;
            let d = dataset.index_of(date).ok_or_else(|| EvalError::Format(format!("{date} not in dataset")))?;
            let mut v = [0.0; HOURS];
            for (h, slot) in v.iter_mut().enumerate() {
                *slot = rec[h + 1].parse().map_err(|e| EvalError::Format(format!("{date} h{}: {e}", h + 1)))?;
            }
            days.push(d);
            values.push(v);
        }
        Self::new(model_id, dataset, days, values)
    }
}

pub fn forecast_header() -> Vec<String> {
    std::iter::once("date".to_string()).chain((1..=HOURS).map(|h| format!("h{h}"))).collect()
}

pub fn forecast_record(date: NaiveDate, values: &DayVector) -> Vec<String> {
    std::iter::once(date.to_string()).chain(values.iter().map(|v| v.to_string())).collect()
}

/// Same hour one week earlier.
pub fn naive_forecast(dataset: &MarketDataset, day: usize) -> Result<DayVector, EvalError> {
    if day < 7 || day >= dataset.len() {
        return Err(EvalError::InsufficientHistory(day));
    }
    Ok(dataset.prices()[day - 7])
}

pub fn naive_series(dataset: &MarketDataset, days: &[usize]) -> Result<ForecastSeries, EvalError> {
    let values = days.iter().map(|&d| naive_forecast(dataset, d)).collect::<Result<_, _>>()?;
    ForecastSeries::new("naive", dataset, days.to_vec(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Joint,
    /// 1-based hour.
    Hour(usize),
}

impl Scope {
    /// Joint first, then hours 1 to 24.
    pub fn all() -> Vec<Scope> {
        std::iter::once(Scope::Joint).chain((1..=HOURS).map(Scope::Hour)).collect()
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Joint => write!(f, "joint"),
            Scope::Hour(h) => write!(f, "h{h}"),
        }
    }
}

fn check_aligned(a: &ForecastSeries, b: &ForecastSeries) -> Result<(), EvalError> {
    if a.days != b.days {
        return Err(EvalError::Misaligned(format!("{} and {} cover different days", a.model_id, b.model_id)));
    }
    Ok(())
}

/// MAE of `forecast` divided by the MAE of `naive` over the same days,
/// jointly over all hours or for one hour. The joint ratio is a ratio of
/// sums, not a mean of hourly ratios.
pub fn rmae(
    dataset: &MarketDataset,
    forecast: &ForecastSeries,
    naive: &ForecastSeries,
    scope: Scope,
) -> Result<f64, EvalError> {
    check_aligned(forecast, naive)?;
    if forecast.is_empty() {
        return Err(EvalError::Misaligned("no days to score".into()));
    }
    let hours = match scope {
        Scope::Joint => 0..HOURS,
        Scope::Hour(h) if (1..=HOURS).contains(&h) => h - 1..h,
        Scope::Hour(h) => return Err(EvalError::Misaligned(format!("hour {h} out of range"))),
    };
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &d) in forecast.days.iter().enumerate() {
        let p = &dataset.prices()[d];
        for h in hours.clone() {
            num += (p[h] - forecast.values[i][h]).abs();
            den += (p[h] - naive.values[i][h]).abs();
        }
    }
    if den == 0.0 {
        return Err(EvalError::ZeroNaiveError);
    }
    Ok(num / den)
}

/// rMAE for every scope in [`Scope::all`] order.
pub fn rmae_table(
    dataset: &MarketDataset,
    forecast: &ForecastSeries,
    naive: &ForecastSeries,
) -> Result<Vec<(Scope, f64)>, EvalError> {
    Scope::all().into_iter().map(|s| Ok((s, rmae(dataset, forecast, naive, s)?))).collect()
}

/// Which model has the smaller average loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Better {
    A,
    B,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwResult {
    pub statistic: f64,
    /// Chi-square p-value of the null of equal conditional predictive ability.
    pub p_value: f64,
    pub better: Better,
    pub norm_order: u32,
    pub lags: usize,
    /// Loss differential identically zero; statistic 0 and p-value 1.
    pub degenerate: bool,
}

fn norm(e: &DayVector, p: u32) -> f64 {
    match p {
        1 => e.iter().map(|v| v.abs()).sum(),
        _ => e.iter().map(|v| v.abs().powi(p as i32)).sum::<f64>().powf(1.0 / p as f64),
    }
}

/// Giacomini-White test on daily loss differentials
/// `delta_d = ||e_A,d||_p - ||e_B,d||_p`, with instruments a constant and
/// `lags` lagged differentials.
pub fn gw_test(errors_a: &[DayVector], errors_b: &[DayVector], norm_order: u32, lags: usize) -> Result<GwResult, EvalError> {
    if errors_a.len() != errors_b.len() {
        return Err(EvalError::Misaligned(format!("{} vs {} days", errors_a.len(), errors_b.len())));
    }
    if norm_order == 0 {
        return Err(EvalError::Misaligned("norm order must be positive".into()));
    }
    let n = errors_a.len();
    if n <= 10 * (lags + 1) {
        return Err(EvalError::TooShort { n, lags });
    }
    let delta: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| norm(a, norm_order) - norm(b, norm_order)).collect();
    if delta.iter().all(|d| *d == 0.0) {
        return Ok(GwResult {
            statistic: 0.0,
            p_value: 1.0,
            better: Better::Neither,
            norm_order,
            lags,
            degenerate: true,
        });
    }

    let k = lags + 1;
    let m = n - lags;
    let z = DMatrix::from_fn(m, k, |i, j| {
        let t = i + lags;
        let instrument = if j == 0 { 1.0 } else { delta[t - j] };
        instrument * delta[t]
    });
    let zbar = DVector::from_fn(k, |j, _| z.column(j).mean());
    let centered = DMatrix::from_fn(m, k, |i, j| z[(i, j)] - zbar[j]);
    let omega = centered.transpose() * &centered / m as f64;
    let chol = omega.cholesky().ok_or(EvalError::SingularCovariance)?;
    let statistic = m as f64 * zbar.dot(&chol.solve(&zbar));
    if !statistic.is_finite() {
        return Err(EvalError::SingularCovariance);
    }
    let chi = ChiSquared::new(k as f64).expect("positive degrees of freedom");
    let p_value = chi.sf(statistic).clamp(0.0, 1.0);
    let mean = delta.iter().sum::<f64>() / n as f64;
    let better = if mean < 0.0 {
        Better::A
    } else if mean > 0.0 {
        Better::B
    } else {
        Better::Neither
    };
    Ok(GwResult { statistic, p_value, better, norm_order, lags, degenerate: false })
}

/// Pairwise tests. Cell `(i, j)` compares row model `i` (A) with column
/// model `j` (B), so `better == B` with a small p-value means the column
/// model outperforms the row model. The diagonal is `None`.
pub fn pvalue_matrix(
    dataset: &MarketDataset,
    forecasts: &[ForecastSeries],
    norm_order: u32,
    lags: usize,
) -> Result<Vec<Vec<Option<GwResult>>>, EvalError> {
    if forecasts.len() < 2 {
        return Err(EvalError::TooFewModels(forecasts.len()));
    }
    for f in &forecasts[1..] {
        check_aligned(&forecasts[0], f)?;
    }
    let errors: Vec<Vec<DayVector>> = forecasts.iter().map(|f| f.errors(dataset)).collect();
    let k = forecasts.len();
    let cells: Vec<Option<GwResult>> = (0..k * k)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / k, c % k);
            if i == j {
                return Ok(None);
            }
            gw_test(&errors[i], &errors[j], norm_order, lags).map(Some)
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(cells.chunks(k).map(<[_]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub scope: String,
    pub rmae: f64,
}

pub fn write_metrics<W: Write>(rows: &[MetricRow], writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "scope", "rmae"])?;
    for r in rows {
        w.write_record([r.model.clone(), r.scope.clone(), r.rmae.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the full square, with empty fields on the diagonal. `direction`
/// names the model with the smaller average loss, or `none`.
pub fn write_gw_matrix<W: Write>(
    models: &[String],
    matrix: &[Vec<Option<GwResult>>],
    writer: W,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row_model", "col_model", "statistic", "p_value", "direction"])?;
    for (i, row) in matrix.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let (a, b) = (models[i].clone(), models[j].clone());
            let fields = match cell {
                None => [String::new(), String::new(), String::new()],
                Some(g) => [
                    g.statistic.to_string(),
                    g.p_value.to_string(),
                    match g.better {
                        Better::A => a.clone(),
                        Better::B => b.clone(),
                        Better::Neither => "none".to_string(),
                    },
                ],
            };
            let [s, p, d] = fields;
            w.write_record([a, b, s, p, d])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ds() -> MarketDataset {
        generate(&SyntheticConfig { days: 80, seed: 4, ..Default::default() })
    }

    fn constant_dataset(value: f64, days: usize) -> MarketDataset {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = start.iter_days().take(days).collect();
        MarketDataset::new("c", dates, vec![[value; HOURS]; days], vec![[1.0; HOURS]; days], vec![[2.0; HOURS]; days])
            .unwrap()
    }

    #[test]
    fn naive_copies_last_week() {
        let d = ds();
        assert_eq!(naive_forecast(&d, 7).unwrap(), d.prices()[0]);
        assert!(matches!(naive_forecast(&d, 6), Err(EvalError::InsufficientHistory(6))));
        let c = constant_dataset(42.0, 20);
        assert_eq!(naive_forecast(&c, 15).unwrap(), [42.0; HOURS]);
    }

    #[test]
    fn weekly_periodic_series_has_zero_naive_error() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = start.iter_days().take(30).collect();
        let prices: Vec<DayVector> = (0..30).map(|d| [(d % 7) as f64 * 3.0; HOURS]).collect();
        let ds = MarketDataset::new("p", dates, prices, vec![[0.0; HOURS]; 30], vec![[0.0; HOURS]; 30]).unwrap();
        let n = naive_series(&ds, &(7..30).collect::<Vec<_>>()).unwrap();
        assert!(n.errors(&ds).iter().flatten().all(|e| *e == 0.0));
        assert!(matches!(rmae(&ds, &n, &n, Scope::Joint), Err(EvalError::ZeroNaiveError)));
    }

    #[test]
    fn rmae_identities() {
        let d = ds();
        let days: Vec<usize> = (20..80).collect();
        let naive = naive_series(&d, &days).unwrap();
        for s in Scope::all() {
            assert_eq!(rmae(&d, &naive, &naive, s).unwrap(), 1.0);
        }
        let perfect = ForecastSeries::new("perfect", &d, days.clone(), days.iter().map(|&i| d.prices()[i]).collect()).unwrap();
        assert_eq!(rmae(&d, &perfect, &naive, Scope::Joint).unwrap(), 0.0);
    }

    #[test]
    fn joint_is_ratio_of_sums() {
        let d = ds();
        let days: Vec<usize> = (20..60).collect();
        let naive = naive_series(&d, &days).unwrap();
        let f = ForecastSeries::new("f", &d, days.clone(), days.iter().map(|&i| d.prices()[i - 1]).collect()).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for h in 0..HOURS {
            for &i in &days {
                num += (d.prices()[i][h] - d.prices()[i - 1][h]).abs();
                den += (d.prices()[i][h] - d.prices()[i - 7][h]).abs();
            }
        }
        assert!((rmae(&d, &f, &naive, Scope::Joint).unwrap() - num / den).abs() < 1e-14);
        let table = rmae_table(&d, &f, &naive).unwrap();
        assert_eq!(table.len(), 25);
        assert_eq!(table[3].0.to_string(), "h3");
    }

    fn shifted_losses(seed: u64, n: usize, shift: f64, sd: f64) -> (Vec<DayVector>, Vec<DayVector>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<DayVector> = (0..n).map(|_| [1.0 + 0.1 * rng.random::<f64>(); HOURS]).collect();
        let a = b
            .iter()
            .map(|row| {
                let target = (row[0] * HOURS as f64 - shift + sd * rng.sample::<f64, _>(StandardNormal)) / HOURS as f64;
                [target; HOURS]
            })
            .collect();
        (a, b)
    }

    #[test]
    fn gw_detects_a_constant_shift() {
        let (a, b) = shifted_losses(1, 200, 1.0, 0.1);
        let r = gw_test(&a, &b, 1, 1).unwrap();
        assert!(r.p_value < 0.01, "{r:?}");
        assert_eq!(r.better, Better::A);
        let s = gw_test(&b, &a, 1, 1).unwrap();
        assert!((s.statistic - r.statistic).abs() <= 1e-9 * r.statistic);
        assert_eq!(s.better, Better::B);
    }

    #[test]
    fn gw_degenerate_and_short() {
        let (a, _) = shifted_losses(2, 50, 0.0, 1.0);
        let r = gw_test(&a, &a, 1, 1).unwrap();
        assert!(r.degenerate && r.p_value == 1.0 && r.better == Better::Neither);
        assert!(matches!(gw_test(&a[..20], &a[..20], 1, 1), Err(EvalError::TooShort { .. })));
    }

    #[test]
    fn matrix_shape_and_csv() {
        let d = ds();
        let days: Vec<usize> = (8..80).collect();
        let naive = naive_series(&d, &days).unwrap();
        let lag1 = ForecastSeries::new("lag1", &d, days.clone(), days.iter().map(|&i| d.prices()[i - 1]).collect()).unwrap();
        let same = ForecastSeries { model_id: "copy".into(), ..naive.clone() };
        let m = pvalue_matrix(&d, &[naive.clone(), lag1, same], 1, 1).unwrap();
        assert_eq!(m.len(), 3);
        let populated = m.iter().flatten().filter(|c| c.is_some()).count();
        assert_eq!(populated, 6);
        assert!(m[0][2].unwrap().degenerate);
        let mut buf = Vec::new();
        write_gw_matrix(&["naive".into(), "lag1".into(), "copy".into()], &m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert_eq!(text.lines().nth(1).unwrap(), "naive,naive,,,");
    }

    #[test]
    fn forecast_csv_roundtrip() {
        let d = ds();
        let days: Vec<usize> = (10..15).collect();
        let f = ForecastSeries::new("x", &d, days.clone(), days.iter().map(|&i| d.prices()[i].map(|v| v / 3.0)).collect()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&d, &mut buf).unwrap();
        let back = ForecastSeries::read_csv("x", &d, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_non_finite_and_unordered() {
        let d = ds();
        let mut v = d.prices()[10];
        v[3] = f64::NAN;
        assert!(matches!(ForecastSeries::new("x", &d, vec![10], vec![v]), Err(EvalError::NonFinite { .. })));
        assert!(ForecastSeries::new("x", &d, vec![11, 10], vec![d.prices()[0]; 2]).is_err());
    }
}
