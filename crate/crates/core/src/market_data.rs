//! Market data ingestion and realized risk-premium construction.
//!
//! A [`MarketSeries`] holds aligned daily observations of a spot rate and the
//! two sovereign yields that define the interest differential. The realized
//! premium over an `h`-row window is the log spot return minus the
//! differential scaled to the same window:
//!
//! ```text
//! K_t = ln(S_{t+h} / S_t) - (i_base,t - i_quote,t) * h / 252
//! ```

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::year_fraction;

/// Column names of the market CSV, in canonical order.
pub const CSV_COLUMNS: [&str; 4] = ["date", "spot", "us_yield", "kr_yield"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("header is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: cannot parse row: {reason}")]
    UnparseableRow { line: u64, reason: String },
    #[error("line {line}: spot must be strictly positive and finite, got {value}")]
    NonPositiveSpot { line: u64, value: f64 },
    #[error("line {line}: yield must be finite, got {value}")]
    NonFiniteYield { line: u64, value: f64 },
    #[error("line {line}: date {date} does not follow {previous}")]
    UnsortedDates {
        line: u64,
        date: NaiveDate,
        previous: NaiveDate,
    },
    #[error("field arrays have different lengths ({dates}, {spot}, {base}, {quote})")]
    LengthMismatch {
        dates: usize,
        spot: usize,
        base: usize,
        quote: usize,
    },
    #[error("series has {len} rows, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("horizon of {horizon} rows needs more than {len} rows")]
    HorizonTooLong { horizon: usize, len: usize },
    #[error("horizon and stride must be at least 1 (horizon {horizon}, stride {stride})")]
    InvalidWindow { horizon: usize, stride: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("splitting {len} rows at fraction {fraction} leaves an empty side")]
    DegenerateSplit { len: usize, fraction: f64 },
}

/// One aligned observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketRow {
    pub date: NaiveDate,
    pub spot: f64,
    /// Base-currency (US) yield, decimal per annum.
    pub us_yield: f64,
    /// Quote-currency (KR) yield, decimal per annum.
    pub kr_yield: f64,
}

impl MarketRow {
    /// Annualized differential `i_base - i_quote`.
    pub fn rate_diff(&self) -> f64 {
        self.us_yield - self.kr_yield
    }
}

/// Aligned spot and yield observations on strictly increasing dates.
///
/// Construction validates every invariant, so a value of this type is always
/// usable without further checks. Series loaded from disk must have at least
/// two rows; a split may produce a one-row side.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    dates: Vec<NaiveDate>,
    spot: Vec<f64>,
    us_yield: Vec<f64>,
    kr_yield: Vec<f64>,
}

impl MarketSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        spot: Vec<f64>,
        us_yield: Vec<f64>,
        kr_yield: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n = dates.len();
        if spot.len() != n || us_yield.len() != n || kr_yield.len() != n {
            return Err(DataError::LengthMismatch {
                dates: n,
                spot: spot.len(),
                base: us_yield.len(),
                quote: kr_yield.len(),
            });
        }
        if n == 0 {
            return Err(DataError::TooShort { len: 0, min: 1 });
        }
        // Line numbers are reported as 1-based data rows offset by the header.
        for i in 0..n {
            let line = i as u64 + 2;
            if !(spot[i].is_finite() && spot[i] > 0.0) {
                return Err(DataError::NonPositiveSpot {
                    line,
                    value: spot[i],
                });
            }
            for &y in [us_yield[i], kr_yield[i]].iter() {
                if !y.is_finite() {
                    return Err(DataError::NonFiniteYield { line, value: y });
                }
            }
            if i > 0 && dates[i] <= dates[i - 1] {
                return Err(DataError::UnsortedDates {
                    line,
                    date: dates[i],
                    previous: dates[i - 1],
                });
            }
        }
        Ok(Self {
            dates,
            spot,
            us_yield,
            kr_yield,
        })
    }

    pub fn from_rows(rows: &[MarketRow]) -> Result<Self, DataError> {
        Self::new(
            rows.iter().map(|r| r.date).collect(),
            rows.iter().map(|r| r.spot).collect(),
            rows.iter().map(|r| r.us_yield).collect(),
            rows.iter().map(|r| r.kr_yield).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn spot(&self) -> &[f64] {
        &self.spot
    }

    pub fn us_yield(&self) -> &[f64] {
        &self.us_yield
    }

    pub fn kr_yield(&self) -> &[f64] {
        &self.kr_yield
    }

    pub fn row(&self, i: usize) -> MarketRow {
        MarketRow {
            date: self.dates[i],
            spot: self.spot[i],
            us_yield: self.us_yield[i],
            kr_yield: self.kr_yield[i],
        }
    }

    pub fn last(&self) -> MarketRow {
        self.row(self.len() - 1)
    }

    pub fn rows(&self) -> impl Iterator<Item = MarketRow> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Rows `range.start..range.end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, DataError> {
        Self::new(
            self.dates[start..end].to_vec(),
            self.spot[start..end].to_vec(),
            self.us_yield[start..end].to_vec(),
            self.kr_yield[start..end].to_vec(),
        )
    }

    /// Appends `other` after `self`; dates must keep increasing.
    pub fn concat(&self, other: &Self) -> Result<Self, DataError> {
        let join = |a: &[f64], b: &[f64]| [a, b].concat();
        Self::new(
            [self.dates.as_slice(), other.dates.as_slice()].concat(),
            join(&self.spot, &other.spot),
            join(&self.us_yield, &other.us_yield),
            join(&self.kr_yield, &other.kr_yield),
        )
    }
}

/// Realized `h`-period premium observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PremiumSeries {
    origin_dates: Vec<NaiveDate>,
    values: Vec<f64>,
    horizon_days: usize,
    stride_days: usize,
}

impl PremiumSeries {
    pub fn origin_dates(&self) -> &[NaiveDate] {
        &self.origin_dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon_days(&self) -> usize {
        self.horizon_days
    }

    pub fn stride_days(&self) -> usize {
        self.stride_days
    }

    /// Year fraction between consecutive observations.
    pub fn delta_t(&self) -> f64 {
        year_fraction(self.stride_days)
    }

    /// Year fraction covered by one premium window.
    pub fn horizon_years(&self) -> f64 {
        year_fraction(self.horizon_days)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Train/validation split by fraction of rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    train_fraction: f64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self, DataError> {
        if train_fraction > 0.0 && train_fraction < 1.0 {
            Ok(Self { train_fraction })
        } else {
            Err(DataError::InvalidFraction(train_fraction))
        }
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    /// Number of leading rows assigned to training out of `n`.
    pub fn train_len(&self, n: usize) -> usize {
        (self.train_fraction * n as f64).floor() as usize
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
        }
    }
}

/// Loads a `date,spot,us_yield,kr_yield` CSV. Columns are located by header
/// name; extra columns are ignored.
pub fn load_market_csv(path: impl AsRef<Path>) -> Result<MarketSeries, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_market_csv(file)
}

pub fn read_market_csv<R: io::Read>(reader: R) -> Result<MarketSeries, DataError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv
        .headers()
        .map_err(|e| DataError::UnparseableRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(DataError::MissingColumn(name))?;
    }

    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| DataError::UnparseableRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| {
            record.get(idx[i]).ok_or_else(|| DataError::UnparseableRow {
                line,
                reason: format!("missing field `{}`", CSV_COLUMNS[i]),
            })
        };
        let number = |i: usize| -> Result<f64, DataError> {
            let raw = field(i)?;
            raw.parse::<f64>().map_err(|_| DataError::UnparseableRow {
                line,
                reason: format!("`{}` is not a number in column `{}`", raw, CSV_COLUMNS[i]),
            })
        };
        let raw_date = field(0)?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| {
            DataError::UnparseableRow {
                line,
                reason: format!("`{raw_date}` is not an ISO-8601 date"),
            }
        })?;
        let row = MarketRow {
            date,
            spot: number(1)?,
            us_yield: number(2)?,
            kr_yield: number(3)?,
        };
        if !(row.spot.is_finite() && row.spot > 0.0) {
            return Err(DataError::NonPositiveSpot {
                line,
                value: row.spot,
            });
        }
        if let Some(prev) = rows.last().map(|r: &(u64, MarketRow)| r.1.date) {
            if row.date <= prev {
                return Err(DataError::UnsortedDates {
                    line,
                    date: row.date,
                    previous: prev,
                });
            }
        }
        rows.push((line, row));
    }
    if rows.len() < 2 {
        return Err(DataError::TooShort {
            len: rows.len(),
            min: 2,
        });
    }
    let rows: Vec<MarketRow> = rows.into_iter().map(|(_, r)| r).collect();
    MarketSeries::from_rows(&rows)
}

/// Writes the series in the canonical CSV layout. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_market_csv<W: Write>(series: &MarketSeries, mut out: W) -> io::Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in series.rows() {
        writeln!(
            out,
            "{},{},{},{}",
            r.date.format("%Y-%m-%d"),
            r.spot,
            r.us_yield,
            r.kr_yield
        )?;
    }
    Ok(())
}

/// Realized premium for the window starting at row `origin`.
///
/// The rate differential observed at the origin is held over the window.
pub fn realized_premium(series: &MarketSeries, origin: usize, horizon_days: usize) -> f64 {
    let s = series.spot();
    let start = series.row(origin);
    (s[origin + horizon_days] / s[origin]).ln() - start.rate_diff() * year_fraction(horizon_days)
}

/// Builds the realized premium series for windows of `horizon_days` rows,
/// taking every `stride_days`-th origin.
pub fn compute_premium(
    series: &MarketSeries,
    horizon_days: usize,
    stride_days: usize,
) -> Result<PremiumSeries, DataError> {
    if horizon_days == 0 || stride_days == 0 {
        return Err(DataError::InvalidWindow {
            horizon: horizon_days,
            stride: stride_days,
        });
    }
    let n = series.len();
    if n <= horizon_days {
        return Err(DataError::HorizonTooLong {
            horizon: horizon_days,
            len: n,
        });
    }
    let origins: Vec<usize> = (0..n - horizon_days).step_by(stride_days).collect();
    Ok(PremiumSeries {
        origin_dates: origins.iter().map(|&t| series.dates()[t]).collect(),
        values: origins
            .iter()
            .map(|&t| realized_premium(series, t, horizon_days))
            .collect(),
        horizon_days,
        stride_days,
    })
}

/// Chronological split: the first `floor(fraction * N)` rows train, the rest validate.
pub fn split_train_validation(
    series: &MarketSeries,
    spec: SplitSpec,
) -> Result<(MarketSeries, MarketSeries), DataError> {
    let n = series.len();
    let cut = spec.train_len(n);
    if cut == 0 || cut >= n {
        return Err(DataError::DegenerateSplit {
            len: n,
            fraction: spec.train_fraction(),
        });
    }
    Ok((series.slice(0, cut)?, series.slice(cut, n)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn series(spot: &[f64], diff: f64) -> MarketSeries {
        let start = d("2010-01-04");
        let dates = (0..spot.len())
            .map(|i| start + chrono::Days::new(i as u64))
            .collect();
        MarketSeries::new(
            dates,
            spot.to_vec(),
            vec![diff; spot.len()],
            vec![0.0; spot.len()],
        )
        .unwrap()
    }

    #[test]
    fn loads_two_row_file() {
        let csv = "date,spot,us_yield,kr_yield\n2010-01-04,1150.0,0.038,0.054\n2010-01-05,1148.5,0.038,0.054\n";
        let s = read_market_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.spot(), &[1150.0, 1148.5]);
        assert_eq!(s.kr_yield()[1], 0.054);
    }

    #[test]
    fn columns_found_by_name() {
        let csv = "kr_yield,date,note,spot,us_yield\n0.05,2010-01-04,x,1100,0.03\n0.05,2010-01-05,y,1101,0.03\n";
        let s = read_market_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.spot(), &[1100.0, 1101.0]);
    }

    #[test]
    fn rejects_unsorted_dates() {
        let csv = "date,spot,us_yield,kr_yield\n2010-01-05,1150.0,0.038,0.054\n2010-01-04,1148.5,0.038,0.054\n";
        let err = read_market_csv(csv.as_bytes()).unwrap_err();
        assert!(
            matches!(err, DataError::UnsortedDates { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn rejects_duplicate_dates() {
        let csv = "date,spot,us_yield,kr_yield\n2010-01-04,1150.0,0.038,0.054\n2010-01-04,1148.5,0.038,0.054\n";
        assert!(matches!(
            read_market_csv(csv.as_bytes()),
            Err(DataError::UnsortedDates { .. })
        ));
    }

    #[test]
    fn rejects_zero_spot() {
        let csv = "date,spot,us_yield,kr_yield\n2010-01-04,1150.0,0.038,0.054\n2010-01-05,0.0,0.038,0.054\n";
        let err = read_market_csv(csv.as_bytes()).unwrap_err();
        assert!(
            matches!(err, DataError::NonPositiveSpot { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn missing_column_and_bad_rows() {
        let csv = "date,spot,us_yield\n2010-01-04,1150.0,0.038\n";
        assert!(matches!(
            read_market_csv(csv.as_bytes()),
            Err(DataError::MissingColumn("kr_yield"))
        ));
        let csv = "date,spot,us_yield,kr_yield\n2010-01-04,1150.0,0.038,0.054\n2010-01-05,abc,0.038,0.054\n";
        assert!(matches!(
            read_market_csv(csv.as_bytes()),
            Err(DataError::UnparseableRow { line: 3, .. })
        ));
        let csv = "date,spot,us_yield,kr_yield\n04/01/2010,1150.0,0.038,0.054\n";
        assert!(matches!(
            read_market_csv(csv.as_bytes()),
            Err(DataError::UnparseableRow { line: 2, .. })
        ));
        let csv =
            "date,spot,us_yield,kr_yield\n2010-01-04,1150.0,,0.054\n2010-01-05,1150.0,0.03,0.054\n";
        assert!(matches!(
            read_market_csv(csv.as_bytes()),
            Err(DataError::UnparseableRow { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_market_csv("/nonexistent/market.csv"),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn premium_zero_when_flat() {
        let s = series(&[1000.0; 6], 0.0);
        let p = compute_premium(&s, 2, 1).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.values().iter().all(|&k| k == 0.0));
    }

    #[test]
    fn premium_hand_computed() {
        // (i_US - i_KR) * h/252 = 0.01 with h = 1
        let s = series(&[1000.0, 1010.0], 2.52);
        let p = compute_premium(&s, 1, 1).unwrap();
        let expected = 0.009_950_330_853_168_083 - 0.01;
        assert_abs_diff_eq!(p.values()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p.values()[0], -0.00004967, epsilon = 1e-8);
    }

    #[test]
    fn premium_vanishes_under_exact_uip() {
        let diff = 0.03 - 0.045;
        let h = 5;
        let spot: Vec<f64> = (0..300)
            .map(|i| 1100.0 * (diff * year_fraction(i)).exp())
            .collect();
        let p = compute_premium(&series(&spot, diff), h, 1).unwrap();
        assert_eq!(p.len(), 300 - h);
        let worst = p.values().iter().fold(0.0f64, |m, k| m.max(k.abs()));
        assert!(worst < 1e-12, "max |K| = {worst}");
    }

    #[test]
    fn premium_stride_and_errors() {
        let s = series(&[1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6], 0.0);
        let p = compute_premium(&s, 2, 2).unwrap();
        // origins 0, 2, 4
        assert_eq!(p.len(), 3);
        assert_eq!(p.origin_dates()[1], s.dates()[2]);
        assert_abs_diff_eq!(p.delta_t(), 2.0 / 252.0);
        assert!(matches!(
            compute_premium(&s, 7, 1),
            Err(DataError::HorizonTooLong { horizon: 7, len: 7 })
        ));
        assert!(matches!(
            compute_premium(&s, 0, 1),
            Err(DataError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn split_sizes() {
        let s = series(&[1.0; 10], 0.0);
        let (tr, va) = split_train_validation(&s, SplitSpec::new(0.8).unwrap()).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        assert_eq!(tr.concat(&va).unwrap(), s);

        let s = series(&[1.0; 5], 0.0);
        let (tr, va) = split_train_validation(&s, SplitSpec::new(0.8).unwrap()).unwrap();
        assert_eq!((tr.len(), va.len()), (4, 1));

        let s = series(&[1.0; 2], 0.0);
        assert!(matches!(
            split_train_validation(&s, SplitSpec::new(0.01).unwrap()),
            Err(DataError::DegenerateSplit { len: 2, .. })
        ));
        assert!(SplitSpec::new(1.0).is_err());
        assert!(SplitSpec::new(0.0).is_err());
    }

    #[test]
    fn constructor_rejects_bad_arrays() {
        let dates = vec![d("2010-01-04"), d("2010-01-05")];
        assert!(matches!(
            MarketSeries::new(dates.clone(), vec![1.0], vec![0.0; 2], vec![0.0; 2]),
            Err(DataError::LengthMismatch { .. })
        ));
        assert!(matches!(
            MarketSeries::new(
                dates.clone(),
                vec![1.0, f64::NAN],
                vec![0.0; 2],
                vec![0.0; 2]
            ),
            Err(DataError::NonPositiveSpot { .. })
        ));
        assert!(matches!(
            MarketSeries::new(
                dates,
                vec![1.0, 1.0],
                vec![0.0, f64::INFINITY],
                vec![0.0; 2]
            ),
            Err(DataError::NonFiniteYield { .. })
        ));
    }
}
