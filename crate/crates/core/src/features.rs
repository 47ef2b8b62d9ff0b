//! Regressor assembly for a target day from lagged prices, exogenous
//! day-ahead forecasts and the day of the week.
//!
//! Selection is per block: a flag switches a whole 24-hour vector in or out.
//! Blocks are always laid out in the canonical regression order
//! `p(d-1), p(d-2), p(d-3), p(d-7), x1(d), x1(d-1), x1(d-7), x2(d), x2(d-1), x2(d-7), calendar`,
//! independent of the order in which the selection flags are numbered.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::Datelike;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{MarketDataset, HOURS};

/// Largest lag used by any block.
pub const MAX_LAG: usize = 7;
pub const N_FLAGS: usize = 11;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("day {0} lacks the {MAX_LAG} days of history needed for lags")]
    LagUnavailable(usize),
    #[error("day {day} out of range for dataset of {len} days")]
    OutOfRange { day: usize, len: usize },
    #[error("empty day range")]
    EmptyRange,
    #[error("hour {0} outside 1..=24")]
    BadHour(usize),
    #[error("invalid feature bitstring `{0}`")]
    BadBitstring(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Series {
    Price,
    Exog1,
    Exog2,
}

/// One contiguous slice of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    /// 24 hourly values of `series` from day `d - lag`.
    Lagged { series: Series, lag: usize },
    /// Day of week as a single value 1 (Monday) ..= 7 (Sunday).
    WeekdayValue,
    /// Seven 0/1 weekday indicators, Monday first.
    WeekdayOneHot,
}

impl Block {
    pub fn width(&self) -> usize {
        match self {
            Block::Lagged { .. } => HOURS,
            Block::WeekdayValue => 1,
            Block::WeekdayOneHot => 7,
        }
    }

    pub fn is_calendar(&self) -> bool {
        !matches!(self, Block::Lagged { .. })
    }

    pub fn name(&self) -> String {
        match self {
            Block::Lagged { series, lag } => {
                let s = match series {
                    Series::Price => "p",
                    Series::Exog1 => "x1",
                    Series::Exog2 => "x2",
                };
                if *lag == 0 {
                    format!("{s}_d")
                } else {
                    format!("{s}_d-{lag}")
                }
            }
            Block::WeekdayValue => "dow".into(),
            Block::WeekdayOneHot => "dow_onehot".into(),
        }
    }
}

/// How the day-of-week block is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Encoding {
    /// One scalar in 1..=7, used by the networks.
    DnnMultiValue,
    /// Seven binary dummies, used by the linear model.
    LearOneHot,
}

/// The lagged blocks in canonical order, each paired with the selection flag
/// (0-based) that controls it.
const LAGGED_BLOCKS: [(Series, usize, usize); 10] = [
    (Series::Price, 1, 0),
    (Series::Price, 2, 1),
    (Series::Price, 3, 2),
    (Series::Price, 7, 3),
    (Series::Exog1, 0, 4),
    (Series::Exog1, 1, 6),
    (Series::Exog1, 7, 8),
    (Series::Exog2, 0, 5),
    (Series::Exog2, 1, 7),
    (Series::Exog2, 7, 9),
];
const WEEKDAY_FLAG: usize = 10;

/// Eleven block-selection flags plus the weekday encoding.
///
/// Flag numbering: 0-3 price lags 1, 2, 3, 7; 4-5 exogenous forecasts for the
/// target day (series 1, 2); 6-9 exogenous series 1 and 2 at lag 1, then
/// series 1 and 2 at lag 7; 10 day of week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub flags: [bool; N_FLAGS],
    pub encoding: Encoding,
}

impl FeatureSpec {
    pub fn all(encoding: Encoding) -> Self {
        Self { flags: [true; N_FLAGS], encoding }
    }

    pub fn none(encoding: Encoding) -> Self {
        Self { flags: [false; N_FLAGS], encoding }
    }

    pub fn with_flag(mut self, index: usize, on: bool) -> Self {
        self.flags[index] = on;
        self
    }

    pub fn is_usable(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    pub fn is_full(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }

    /// Enabled blocks in canonical order.
    pub fn blocks(&self) -> Vec<Block> {
        let mut blocks: Vec<Block> = LAGGED_BLOCKS
            .iter()
            .filter(|(_, _, flag)| self.flags[*flag])
            .map(|&(series, lag, _)| Block::Lagged { series, lag })
            .collect();
        if self.flags[WEEKDAY_FLAG] {
            blocks.push(match self.encoding {
                Encoding::DnnMultiValue => Block::WeekdayValue,
                Encoding::LearOneHot => Block::WeekdayOneHot,
            });
        }
        blocks
    }

    pub fn layout(&self) -> Layout {
        let mut offset = 0;
        let entries = self
            .blocks()
            .into_iter()
            .map(|b| {
                let r = offset..offset + b.width();
                offset = r.end;
                (b, r)
            })
            .collect();
        Layout { entries }
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(Block::width).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bitstring(&self) -> String {
        self.flags.iter().map(|&f| if f { '1' } else { '0' }).collect()
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

impl FromStr for FeatureSpec {
    type Err = FeatureError;

    /// Parses an 11-character bitstring; the encoding defaults to the network
    /// one and can be changed on the returned value.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FeatureError::BadBitstring(s.to_string());
        if s.chars().count() != N_FLAGS {
            return Err(bad());
        }
        let mut flags = [false; N_FLAGS];
        for (f, c) in flags.iter_mut().zip(s.chars()) {
            *f = match c {
                '1' => true,
                '0' => false,
                _ => return Err(bad()),
            };
        }
        Ok(Self { flags, encoding: Encoding::DnnMultiValue })
    }
}

/// Block descriptors with their slice ranges within a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub entries: Vec<(Block, Range<usize>)>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.entries.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block and within-block offset for feature column `col`.
    pub fn locate(&self, col: usize) -> Option<(Block, usize)> {
        self.entries.iter().find(|(_, r)| r.contains(&col)).map(|(b, r)| (*b, col - r.start))
    }

    /// Column indices belonging to calendar blocks.
    pub fn calendar_columns(&self) -> Vec<usize> {
        self.entries.iter().filter(|(b, _)| b.is_calendar()).flat_map(|(_, r)| r.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

fn check_day(dataset: &MarketDataset, day: usize) -> Result<(), FeatureError> {
    if day >= dataset.len() {
        return Err(FeatureError::OutOfRange { day, len: dataset.len() });
    }
    if day < MAX_LAG {
        return Err(FeatureError::LagUnavailable(day));
    }
    Ok(())
}

fn write_features(dataset: &MarketDataset, day: usize, blocks: &[Block], out: &mut Vec<f64>) {
    for block in blocks {
        match *block {
            Block::Lagged { series, lag } => {
                let src = match series {
                    Series::Price => dataset.prices(),
                    Series::Exog1 => dataset.exog1(),
                    Series::Exog2 => dataset.exog2(),
                };
                out.extend_from_slice(&src[day - lag]);
            }
            Block::WeekdayValue => {
                out.push(dataset.date(day).weekday().number_from_monday() as f64);
            }
            Block::WeekdayOneHot => {
                let wd = dataset.date(day).weekday().num_days_from_monday() as usize;
                out.extend((0..7).map(|i| if i == wd { 1.0 } else { 0.0 }));
            }
        }
    }
}

/// Feature vector for forecasting `day`.
pub fn build_features(
    dataset: &MarketDataset,
    day: usize,
    spec: &FeatureSpec,
) -> Result<FeatureVector, FeatureError> {
    check_day(dataset, day)?;
    let layout = spec.layout();
    let blocks: Vec<Block> = layout.entries.iter().map(|(b, _)| *b).collect();
    let mut values = Vec::with_capacity(layout.len());
    write_features(dataset, day, &blocks, &mut values);
    Ok(FeatureVector { values, layout })
}

/// Regression targets: one hour or the full daily vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetHours {
    /// 1-based hour.
    Single(usize),
    All,
}

impl TargetHours {
    pub fn width(&self) -> usize {
        match self {
            TargetHours::Single(_) => 1,
            TargetHours::All => HOURS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// One row per day.
    pub x: DMatrix<f64>,
    /// One row per day; one column per target hour.
    pub y: DMatrix<f64>,
    pub days: Vec<usize>,
    pub layout: Layout,
}

/// Stacks feature rows and price targets for the given days.
pub fn build_design_matrix(
    dataset: &MarketDataset,
    days: &[usize],
    spec: &FeatureSpec,
    target: TargetHours,
) -> Result<DesignMatrix, FeatureError> {
    if days.is_empty() {
        return Err(FeatureError::EmptyRange);
    }
    if let TargetHours::Single(h) = target {
        if !(1..=HOURS).contains(&h) {
            return Err(FeatureError::BadHour(h));
        }
    }
    for &d in days {
        check_day(dataset, d)?;
    }
    let layout = spec.layout();
    let blocks: Vec<Block> = layout.entries.iter().map(|(b, _)| *b).collect();
    let p = layout.len();
    let n = days.len();

    let mut row = Vec::with_capacity(p);
    let mut x = DMatrix::zeros(n, p);
    let mut y = DMatrix::zeros(n, target.width());
    for (i, &d) in days.iter().enumerate() {
        row.clear();
        write_features(dataset, d, &blocks, &mut row);
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
        match target {
            TargetHours::Single(h) => y[(i, 0)] = dataset.prices()[d][h - 1],
            TargetHours::All => {
                for h in 0..HOURS {
                    y[(i, h)] = dataset.prices()[d][h];
                }
            }
        }
    }
    Ok(DesignMatrix { x, y, days: days.to_vec(), layout })
}
