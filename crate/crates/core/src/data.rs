//! Hourly day-ahead market data: loading, daylight-saving resolution and
//! rolling calibration windows.
//!
//! Input files are delimiter-separated text with a `timestamp,price,exog1,exog2`
//! header and one row per hour. Timestamps are local wall-clock time in
//! ISO-8601 form (`2013-01-01T00:00:00`, `2013-01-01 00:00`, or RFC 3339 with
//! an offset, in which case the offset is dropped and the local part kept).
//! Days are delimited at local midnight.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS: usize = 24;

/// Default calibration window: four 364-day years.
pub const DEFAULT_CALIBRATION_DAYS: usize = 1456;
/// Default out-of-sample test period: the last two 364-day years.
pub const DEFAULT_TEST_DAYS: usize = 728;

pub type DayVector = [f64; HOURS];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no records")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("non-monotone timestamps at row {row}: {timestamp}")]
    NonMonotone { row: usize, timestamp: NaiveDateTime },
    #[error("day {date} has {count} hourly records after DST resolution, expected 24")]
    IncompleteDay { date: NaiveDate, count: usize },
    #[error("day {date}: {reason}")]
    DstAnomaly { date: NaiveDate, reason: String },
    #[error("gap in calendar between {prev} and {next}")]
    CalendarGap { prev: NaiveDate, next: NaiveDate },
    #[error("dataset has {len} days, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

/// Hourly prices and two exogenous day-ahead forecast series on a contiguous
/// local-time calendar.
///
/// Immutable once built; every series holds exactly 24 values per day.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    market_id: String,
    days: Vec<NaiveDate>,
    prices: Vec<DayVector>,
    exog1: Vec<DayVector>,
    exog2: Vec<DayVector>,
}

impl MarketDataset {
    /// Builds a dataset from already day-aligned series, checking the calendar
    /// and value invariants.
    pub fn new(
        market_id: impl Into<String>,
        days: Vec<NaiveDate>,
        prices: Vec<DayVector>,
        exog1: Vec<DayVector>,
        exog2: Vec<DayVector>,
    ) -> Result<Self, DataError> {
        if days.is_empty() {
            return Err(DataError::Empty);
        }
        let n = days.len();
        if prices.len() != n || exog1.len() != n || exog2.len() != n {
            return Err(DataError::Inconsistent(format!(
                "{} days but series lengths {}/{}/{}",
                n,
                prices.len(),
                exog1.len(),
                exog2.len()
            )));
        }
        for pair in days.windows(2) {
            if pair[0].succ_opt() != Some(pair[1]) {
                return Err(DataError::CalendarGap { prev: pair[0], next: pair[1] });
            }
        }
        let all_finite = [&prices, &exog1, &exog2]
            .iter()
            .all(|s| s.iter().all(|d| d.iter().all(|v| v.is_finite())));
        if !all_finite {
            return Err(DataError::Inconsistent("non-finite value".into()));
        }
        Ok(Self { market_id: market_id.into(), days, prices, exog1, exog2 })
    }

    pub fn market_id(&self) -> &str {
        &self.market_id
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.days[day]
    }

    pub fn prices(&self) -> &[DayVector] {
        &self.prices
    }

    pub fn exog1(&self) -> &[DayVector] {
        &self.exog1
    }

    pub fn exog2(&self) -> &[DayVector] {
        &self.exog2
    }

    pub fn weekday(&self, day: usize) -> Weekday {
        self.days[day].weekday()
    }

    /// Index of `date` in the calendar, if present.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.days.first()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }
}

/// Resolves one raw local-time day to exactly 24 hourly values.
///
/// A 25-record day (autumn clock change) has one hour appearing twice; the two
/// values are averaged. A 23-record day (spring clock change) misses one hour,
/// which is filled with the mean of the neighbouring hours. Any other pattern,
/// or more than one anomaly in a day, is an error.
pub fn resolve_dst(raw_hours: &[(NaiveDateTime, f64)]) -> Result<DayVector, DataError> {
    let Some(&(first, _)) = raw_hours.first() else {
        return Err(DataError::Empty);
    };
    let date = first.date();
    let anomaly = |reason: String| DataError::DstAnomaly { date, reason };

    let mut slots: [Vec<f64>; HOURS] = Default::default();
    for &(ts, value) in raw_hours {
        if ts.date() != date {
            return Err(anomaly(format!("record {ts} belongs to another day")));
        }
        slots[ts.hour() as usize].push(value);
    }

    let missing: Vec<usize> = (0..HOURS).filter(|&h| slots[h].is_empty()).collect();
    let doubled: Vec<usize> = (0..HOURS).filter(|&h| slots[h].len() == 2).collect();
    if let Some(h) = (0..HOURS).find(|&h| slots[h].len() > 2) {
        return Err(anomaly(format!("hour {h} appears {} times", slots[h].len())));
    }
    if missing.len() + doubled.len() > 1 {
        return Err(anomaly(format!(
            "more than one anomalous hour (missing {missing:?}, doubled {doubled:?})"
        )));
    }

    let mut out = [0.0; HOURS];
    for h in 0..HOURS {
        match slots[h].as_slice() {
            [v] => out[h] = *v,
            [a, b] => out[h] = 0.5 * (a + b),
            _ => {}
        }
    }
    if let Some(&h) = missing.first() {
        if h == 0 || h == HOURS - 1 {
            return Err(anomaly(format!("missing hour {h} has only one neighbour")));
        }
        out[h] = 0.5 * (out[h - 1] + out[h + 1]);
    }
    Ok(out)
}

/// Parses a local timestamp. Offsets, if present, are discarded.
pub fn parse_local_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    const FORMATS: [&str; 4] =
        ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

struct RawRecord {
    timestamp: NaiveDateTime,
    values: [f64; 3],
}

fn read_records<R: Read>(reader: R) -> Result<Vec<RawRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(DataError::MissingColumn(name))
    };
    let idx = [col("timestamp")?, col("price")?, col("exog1")?, col("exog2")?];

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // header is line 1
        let line = i + 2;
        let field = |j: usize| {
            row.get(j).ok_or_else(|| DataError::MalformedRow {
                row: line,
                reason: format!("expected at least {} fields, found {}", j + 1, row.len()),
            })
        };
        let ts_str = field(idx[0])?;
        let timestamp = parse_local_timestamp(ts_str).ok_or_else(|| DataError::MalformedRow {
            row: line,
            reason: format!("unparseable timestamp `{ts_str}`"),
        })?;
        let mut values = [0.0; 3];
        for (k, v) in values.iter_mut().enumerate() {
            let s = field(idx[k + 1])?;
            *v = s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                DataError::MalformedRow { row: line, reason: format!("bad number `{s}`") }
            })?;
        }
        if let Some(prev) = records.last().map(|r: &RawRecord| r.timestamp) {
            if timestamp < prev {
                return Err(DataError::NonMonotone { row: line, timestamp });
            }
        }
        records.push(RawRecord { timestamp, values });
    }
    Ok(records)
}

/// Reads a dataset from any reader in the documented CSV layout.
pub fn read_dataset<R: Read>(reader: R, market_id: &str) -> Result<MarketDataset, DataError> {
    let records = read_records(reader)?;
    if records.is_empty() {
        return Err(DataError::Empty);
    }

    let mut by_day: BTreeMap<NaiveDate, Vec<&RawRecord>> = BTreeMap::new();
    for r in &records {
        by_day.entry(r.timestamp.date()).or_default().push(r);
    }

    let mut days = Vec::with_capacity(by_day.len());
    let mut series: [Vec<DayVector>; 3] = Default::default();
    for (date, recs) in &by_day {
        if !(23..=25).contains(&recs.len()) {
            return Err(DataError::IncompleteDay { date: *date, count: recs.len() });
        }
        for (k, s) in series.iter_mut().enumerate() {
            let raw: Vec<_> = recs.iter().map(|r| (r.timestamp, r.values[k])).collect();
            s.push(resolve_dst(&raw)?);
        }
        days.push(*date);
    }
    let [prices, exog1, exog2] = series;
    MarketDataset::new(market_id, days, prices, exog1, exog2)
}

/// Loads and DST-resolves a dataset file.
pub fn load_dataset(path: impl AsRef<Path>, market_id: &str) -> Result<MarketDataset, DataError> {
    read_dataset(File::open(path)?, market_id)
}

/// Writes a dataset in the input CSV layout, one row per regular hour.
pub fn write_dataset<W: std::io::Write>(dataset: &MarketDataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "price", "exog1", "exog2"])?;
    for (d, date) in dataset.days.iter().enumerate() {
        for h in 0..HOURS {
            let ts = date.and_hms_opt(h as u32, 0, 0).expect("valid hour");
            w.write_record([
                ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
                dataset.prices[d][h].to_string(),
                dataset.exog1[d][h].to_string(),
                dataset.exog2[d][h].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One rolling split: a contiguous calibration range followed by the day to
/// forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSplit {
    pub calibration_start: usize,
    pub calibration_len: usize,
    pub target_day: usize,
}

impl WindowSplit {
    pub fn calibration_days(&self) -> std::ops::Range<usize> {
        self.calibration_start..self.calibration_start + self.calibration_len
    }
}

/// Rolling one-day-ahead splits over the last `test_days` days of the dataset.
pub fn rolling_windows(
    dataset: &MarketDataset,
    calibration_days: usize,
    test_days: usize,
) -> Result<Vec<WindowSplit>, DataError> {
    let needed = calibration_days + test_days;
    if calibration_days == 0 || test_days == 0 || dataset.len() < needed {
        return Err(DataError::TooShort { len: dataset.len(), needed: needed.max(1) });
    }
    let first_target = dataset.len() - test_days;
    Ok((first_target..dataset.len())
        .map(|target_day| WindowSplit {
            calibration_start: target_day - calibration_days,
            calibration_len: calibration_days,
            target_day,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_local_timestamp(s).unwrap()
    }

    fn regular_day(date: &str) -> Vec<(NaiveDateTime, f64)> {
        (0..24).map(|h| (ts(&format!("{date}T{h:02}:00:00")), h as f64)).collect()
    }

    #[test]
    fn duplicated_hour_is_averaged() {
        let mut raw = regular_day("2018-10-28");
        raw[2].1 = 10.0;
        raw.insert(3, (ts("2018-10-28T02:00:00"), 20.0));
        let day = resolve_dst(&raw).unwrap();
        assert_eq!(day[2], 15.0);
        assert_eq!(day[3], 3.0);
    }

    #[test]
    fn missing_hour_is_interpolated() {
        let mut raw = regular_day("2018-03-25");
        raw[1].1 = 10.0;
        raw[3].1 = 20.0;
        raw.remove(2);
        let day = resolve_dst(&raw).unwrap();
        assert_eq!(day[2], 15.0);
    }

    #[test]
    fn regular_day_unchanged_and_idempotent() {
        let raw = regular_day("2018-05-01");
        let day = resolve_dst(&raw).unwrap();
        let expected: Vec<f64> = (0..24).map(|h| h as f64).collect();
        assert_eq!(day.to_vec(), expected);
        let again: Vec<_> = raw.iter().zip(day).map(|(&(t, _), v)| (t, v)).collect();
        assert_eq!(resolve_dst(&again).unwrap(), day);
    }

    #[test]
    fn two_anomalies_rejected() {
        let mut raw = regular_day("2018-03-25");
        raw.remove(5);
        raw.remove(2);
        assert!(matches!(resolve_dst(&raw), Err(DataError::DstAnomaly { .. })));

        let mut raw = regular_day("2018-03-25");
        raw.remove(5);
        raw.insert(2, (ts("2018-03-25T02:00:00"), 1.0));
        assert!(matches!(resolve_dst(&raw), Err(DataError::DstAnomaly { .. })));
    }

    #[test]
    fn missing_edge_hour_rejected() {
        let mut raw = regular_day("2018-03-25");
        raw.remove(0);
        assert!(resolve_dst(&raw).is_err());
    }

    #[test]
    fn timestamp_formats() {
        let a = ts("2013-01-01T05:00:00");
        assert_eq!(ts("2013-01-01 05:00"), a);
        assert_eq!(ts("2013-01-01T05:00:00+01:00"), a);
        assert!(parse_local_timestamp("01/01/2013 05:00").is_none());
    }

    #[test]
    fn empty_file_is_no_records() {
        let err = read_dataset("timestamp,price,exog1,exog2\n".as_bytes(), "x").unwrap_err();
        assert_eq!(err.to_string(), "no records");
    }

    #[test]
    fn missing_column_reported() {
        let err = read_dataset("timestamp,price,exog1\n2013-01-01T00:00:00,1,2\n".as_bytes(), "x")
            .unwrap_err();
        assert!(matches!(err, DataError::MissingColumn("exog2")));
    }

    #[test]
    fn malformed_and_non_monotone_rows() {
        let bad = "timestamp,price,exog1,exog2\n2013-01-01T00:00:00,abc,1,2\n";
        assert!(matches!(read_dataset(bad.as_bytes(), "x"), Err(DataError::MalformedRow { .. })));
        let back = "timestamp,price,exog1,exog2\n2013-01-01T05:00:00,1,1,2\n2013-01-01T04:00:00,1,1,2\n";
        assert!(matches!(read_dataset(back.as_bytes(), "x"), Err(DataError::NonMonotone { .. })));
    }

    #[test]
    fn short_day_rejected() {
        let mut csv = String::from("timestamp,price,exog1,exog2\n");
        for h in 0..20 {
            csv.push_str(&format!("2013-01-01T{h:02}:00:00,1,2,3\n"));
        }
        assert!(matches!(
            read_dataset(csv.as_bytes(), "x"),
            Err(DataError::IncompleteDay { count: 20, .. })
        ));
    }

    fn flat_dataset(start: NaiveDate, n: usize) -> MarketDataset {
        let days: Vec<_> = start.iter_days().take(n).collect();
        let p: Vec<DayVector> = (0..n).map(|d| [d as f64; HOURS]).collect();
        MarketDataset::new("t", days, p.clone(), p.clone(), p).unwrap()
    }

    #[test]
    fn gaps_rejected() {
        let d0 = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        let days = vec![d0, d0 + chrono::Days::new(2)];
        let v = vec![[0.0; HOURS]; 2];
        assert!(matches!(
            MarketDataset::new("t", days, v.clone(), v.clone(), v),
            Err(DataError::CalendarGap { .. })
        ));
    }

    #[test]
    fn rolling_window_counts() {
        let ds = flat_dataset(NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(), 2184);
        let w = rolling_windows(&ds, DEFAULT_CALIBRATION_DAYS, DEFAULT_TEST_DAYS).unwrap();
        assert_eq!(w.len(), 728);
        assert_eq!(w[0].target_day, 1456);
        assert_eq!(w[0].calibration_days(), 0..1456);
        for pair in w.windows(2) {
            assert_eq!(pair[1].calibration_start, pair[0].calibration_start + 1);
        }
        for s in &w {
            assert_eq!(s.calibration_days().end, s.target_day);
        }
        assert!(rolling_windows(&ds, 2184, 728).is_err());
    }

    #[test]
    fn nord_pool_test_period_dates() {
        let ds = flat_dataset(NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(), 2184);
        assert_eq!(ds.date(2183), NaiveDate::from_ymd_opt(2018, 12, 24).unwrap());
        let w = rolling_windows(&ds, 1456, 728).unwrap();
        assert_eq!(ds.date(w[0].target_day), NaiveDate::from_ymd_opt(2016, 12, 27).unwrap());
        assert_eq!(ds.date(w[727].target_day), NaiveDate::from_ymd_opt(2018, 12, 24).unwrap());
    }
}
