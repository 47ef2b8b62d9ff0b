//! Synthetic market generator for tests and desk-scale runs.
//!
//! Prices follow a known linear process: an hourly profile, a weekday effect,
//! autoregression on the previous day and the same day a week earlier, and
//! linear loading on two exogenous series (a load-like series with daily and
//! weekly shape, and a wind-like AR(1) series).

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DayVector, MarketDataset, HOURS};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
    /// Standard deviation of the price innovation.
    pub noise: f64,
    pub ar_lag1: f64,
    pub ar_lag7: f64,
    pub load_coef: f64,
    pub wind_coef: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            days: 600,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"),
            noise: 2.0,
            ar_lag1: 0.5,
            ar_lag7: 0.2,
            load_coef: 0.05,
            wind_coef: -0.04,
        }
    }
}

fn hourly_profile(h: usize) -> f64 {
    let t = h as f64 / HOURS as f64 * std::f64::consts::TAU;
    -(t).cos() * 0.6 + (2.0 * t).sin() * 0.3
}

const WEEKDAY_LOAD: [f64; 7] = [1.0, 1.0, 1.0, 1.0, 0.8, -1.2, -1.6];
const WEEKDAY_PRICE: [f64; 7] = [2.0, 2.5, 2.5, 2.0, 1.0, -4.0, -6.0];

pub fn generate(cfg: &SyntheticConfig) -> MarketDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = |s: f64| Normal::new(0.0, s).expect("positive sd");
    let (load_day, load_hour, wind_day, wind_hour, eps) =
        (std(30.0), std(10.0), std(0.5), std(20.0), std(cfg.noise));

    let days: Vec<NaiveDate> = cfg.start.iter_days().take(cfg.days).collect();
    let mut prices: Vec<DayVector> = Vec::with_capacity(cfg.days);
    let mut exog1: Vec<DayVector> = Vec::with_capacity(cfg.days);
    let mut exog2: Vec<DayVector> = Vec::with_capacity(cfg.days);

    let mean_price: DayVector = std::array::from_fn(|h| 40.0 + 10.0 * hourly_profile(h));
    let (mut load_level, mut wind_level) = (0.0f64, 0.0f64);
    for (d, date) in days.iter().enumerate() {
        let wd = date.weekday().num_days_from_monday() as usize;
        let season = (d as f64 / 364.0 * std::f64::consts::TAU).cos();
        load_level = 0.8 * load_level + load_day.sample(&mut rng);
        wind_level = 0.7 * wind_level + wind_day.sample(&mut rng);

        let x1: DayVector = std::array::from_fn(|h| {
            1000.0 + 200.0 * hourly_profile(h) + 100.0 * WEEKDAY_LOAD[wd] + 80.0 * season + load_level
                + load_hour.sample(&mut rng)
        });
        let x2: DayVector = std::array::from_fn(|h| {
            300.0 + 150.0 * wind_level + 30.0 * (h as f64 / 4.0).sin() + wind_hour.sample(&mut rng)
        });
        let p: DayVector = std::array::from_fn(|h| {
            let lag = |k: usize| {
                if d >= k {
                    prices[d - k][h] - mean_price[h]
                } else {
                    0.0
                }
            };
            mean_price[h]
                + cfg.ar_lag1 * lag(1)
                + cfg.ar_lag7 * lag(7)
                + cfg.load_coef * (x1[h] - 1000.0)
                + cfg.wind_coef * (x2[h] - 300.0)
                + WEEKDAY_PRICE[wd]
                + eps.sample(&mut rng)
        });
        prices.push(p);
        exog1.push(x1);
        exog2.push(x2);
    }
    MarketDataset::new("synthetic", days, prices, exog1, exog2).expect("generated dataset is consistent")
}
