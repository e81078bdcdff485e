//! Out-of-sample coverage backtest.
//!
//! For each horizon the premium process and spot diffusion are fitted once on
//! the leading training rows. Every validation row `t` with `t + h` inside the
//! data then issues a forecast from information available at `t`: the origin
//! spot and yields, and the latest fully realized premium `K_{t-h}`. Coverage is
//! the share of realized `S_{t+h}` inside the closed central interval.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calibration::{
    fit_sigma_s, ou_fit_mle, DiffusionParams, FitDiagnostics, FitError, OUParams,
};
use crate::forecast::{confidence_interval, make_forecast, ForecastError, DEFAULT_LEVELS};
use crate::market_data::{compute_premium, realized_premium, DataError, MarketSeries, SplitSpec};

/// Forecast horizons in business days: 2 weeks, 1, 3, 6 and 12 months.
pub const DEFAULT_HORIZONS: [usize; 5] = [10, 21, 63, 126, 252];

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest configuration: {0}")]
    InvalidConfig(String),
    #[error("coverage intervals and realized prices differ in length ({intervals} vs {realized})")]
    LengthMismatch { intervals: usize, realized: usize },
    #[error("coverage needs at least one interval")]
    EmptyInput,
    #[error("horizon {horizon}d: validation window of {validation_rows} rows has no origin with a realized outcome")]
    HorizonTooLong {
        horizon: usize,
        validation_rows: usize,
    },
    #[error("horizon {horizon}d: {source}")]
    Data {
        horizon: usize,
        #[source]
        source: DataError,
    },
    #[error("horizon {horizon}d: fit failed: {source}")]
    Fit {
        horizon: usize,
        #[source]
        source: FitError,
    },
    #[error("horizon {horizon}d: {source}")]
    Forecast {
        horizon: usize,
        #[source]
        source: ForecastError,
    },
}

impl BacktestError {
    /// True when the failure comes from data shape rather than estimation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Self::HorizonTooLong { .. }
                | Self::Data { .. }
                | Self::InvalidConfig(_)
                | Self::LengthMismatch { .. }
                | Self::EmptyInput
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestConfig {
    pub horizons_days: Vec<usize>,
    pub levels: Vec<f64>,
    pub train_fraction: f64,
    pub stride_days: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            horizons_days: DEFAULT_HORIZONS.to_vec(),
            levels: DEFAULT_LEVELS.to_vec(),
            train_fraction: 0.8,
            stride_days: 1,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<SplitSpec, BacktestError> {
        let bad = |m: String| Err(BacktestError::InvalidConfig(m));
        if self.horizons_days.is_empty() {
            return bad("at least one horizon is required".into());
        }
        if self.horizons_days.contains(&0) {
            return bad("horizons must be at least one day".into());
        }
        if self.horizons_days.windows(2).any(|w| w[1] <= w[0]) {
            return bad("horizons must be strictly ascending".into());
        }
        if self.levels.is_empty() {
            return bad("at least one confidence level is required".into());
        }
        if let Some(l) = self.levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
            return bad(format!("confidence level {l} is outside (0, 1)"));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return bad("confidence levels must be strictly ascending".into());
        }
        if self.stride_days == 0 {
            return bad("stride must be at least one day".into());
        }
        SplitSpec::new(self.train_fraction).map_err(|e| BacktestError::InvalidConfig(e.to_string()))
    }
}

/// Fraction of `realized` values inside the closed `[lower, upper]` intervals.
pub fn coverage_rate(intervals: &[(f64, f64)], realized: &[f64]) -> Result<f64, BacktestError> {
    if intervals.len() != realized.len() {
        return Err(BacktestError::LengthMismatch {
            intervals: intervals.len(),
            realized: realized.len(),
        });
    }
    if intervals.is_empty() {
        return Err(BacktestError::EmptyInput);
    }
    let hits = count_covered(intervals, realized);
    Ok(hits as f64 / realized.len() as f64)
}

fn count_covered(intervals: &[(f64, f64)], realized: &[f64]) -> usize {
    intervals
        .iter()
        .zip(realized)
        .filter(|((lo, hi), s)| lo <= *s && *s <= hi)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageCell {
    pub level: f64,
    pub coverage: f64,
    pub covered: usize,
}

/// Fitted parameters and coverage for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonCoverage {
    pub horizon_days: usize,
    pub n_evaluations: usize,
    pub premium_obs: usize,
    pub ou: OUParams,
    pub diffusion: DiffusionParams,
    pub diagnostics: FitDiagnostics,
    pub cells: Vec<CoverageCell>,
}

impl HorizonCoverage {
    pub fn coverage_at(&self, level: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.level == level)
            .map(|c| c.coverage)
    }
}

/// Complete results of a backtest in which every horizon succeeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub levels: Vec<f64>,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub horizons: Vec<HorizonCoverage>,
}

impl CoverageReport {
    pub fn horizon(&self, days: usize) -> Option<&HorizonCoverage> {
        self.horizons.iter().find(|h| h.horizon_days == days)
    }
}

#[derive(Debug)]
pub struct HorizonOutcome {
    pub horizon_days: usize,
    pub result: Result<HorizonCoverage, BacktestError>,
}

/// Backtest results with per-horizon failures kept alongside successes.
#[derive(Debug)]
pub struct BacktestRun {
    pub levels: Vec<f64>,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub horizons: Vec<HorizonOutcome>,
}

impl BacktestRun {
    pub fn failures(&self) -> impl Iterator<Item = &BacktestError> {
        self.horizons.iter().filter_map(|h| h.result.as_ref().err())
    }

    pub fn is_complete(&self) -> bool {
        self.failures().next().is_none()
    }

    /// Strict view: the first horizon error, if any, becomes the result.
    pub fn into_report(self) -> Result<CoverageReport, BacktestError> {
        let mut horizons = Vec::with_capacity(self.horizons.len());
        for h in self.horizons {
            horizons.push(h.result?);
        }
        Ok(CoverageReport {
            levels: self.levels,
            train_rows: self.train_rows,
            validation_rows: self.validation_rows,
            horizons,
        })
    }

    /// Table layout: one row per confidence level, one column per horizon,
    /// percentages at 4 significant digits. Failed horizons show `n/a`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("Confidence Level");
        for h in &self.horizons {
            out.push(',');
            out.push_str(&horizon_label(h.horizon_days));
        }
        out.push('\n');
        for (i, &level) in self.levels.iter().enumerate() {
            out.push_str(&format!("{}%", crate::forecast::level_label(level)));
            for h in &self.horizons {
                out.push(',');
                match &h.result {
                    Ok(c) => out.push_str(&format!("{}%", sig4(100.0 * c.cells[i].coverage))),
                    Err(_) => out.push_str("n/a"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width rendering of [`Self::table_csv`] for terminals.
    pub fn table_text(&self) -> String {
        let csv = self.table_csv();
        let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}"))
                .collect();
            out.push_str(&cells.join(" | "));
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-|-"));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let horizons: Vec<serde_json::Value> = self
            .horizons
            .iter()
            .map(|h| match &h.result {
                Ok(c) => serde_json::json!({
                    "horizon_days": h.horizon_days,
                    "status": "ok",
                    "n_evaluations": c.n_evaluations,
                    "premium_obs": c.premium_obs,
                    "ou": c.ou,
                    "sigma_s": c.diffusion.sigma_s(),
                    "diagnostics": c.diagnostics,
                    "cells": c.cells.iter().map(|cell| serde_json::json!({
                        "level": cell.level,
                        "coverage": cell.coverage,
                        "covered": cell.covered,
                        "n_evaluations": c.n_evaluations,
                    })).collect::<Vec<_>>(),
                }),
                Err(e) => serde_json::json!({
                    "horizon_days": h.horizon_days,
                    "status": "error",
                    "error": e.to_string(),
                }),
            })
            .collect();
        serde_json::json!({
            "levels": self.levels,
            "train_rows": self.train_rows,
            "validation_rows": self.validation_rows,
            "horizons": horizons,
        })
    }
}

/// Column heading for a horizon in business days.
pub fn horizon_label(days: usize) -> String {
    match days {
        10 => "2-Week".to_string(),
        21 => "1-Month".to_string(),
        63 => "3-Month".to_string(),
        126 => "6-Month".to_string(),
        252 => "1-Year".to_string(),
        d => format!("{d}-Day"),
    }
}

/// Four significant digits.
fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.3}");
    }
    let decimals = (3 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

fn evaluate_horizon(
    series: &MarketSeries,
    train: &MarketSeries,
    config: &BacktestConfig,
    horizon: usize,
) -> Result<HorizonCoverage, BacktestError> {
    let n = series.len();
    let n_train = train.len();
    if n_train + horizon >= n {
        return Err(BacktestError::HorizonTooLong {
            horizon,
            validation_rows: n - n_train,
        });
    }
    let premium = compute_premium(train, horizon, config.stride_days)
        .map_err(|source| BacktestError::Data { horizon, source })?;
    let (ou, diagnostics) = ou_fit_mle(&premium, premium.delta_t())
        .map_err(|source| BacktestError::Fit { horizon, source })?;
    let diffusion = fit_sigma_s(train, &premium, &ou)
        .map_err(|source| BacktestError::Fit { horizon, source })?;

    // n_train > horizon here, so every origin has a realized premium K_{t-h}.
    let origins: Vec<usize> = (n_train..n - horizon).collect();
    let forecasts = origins
        .par_iter()
        .map(|&t| {
            let k0 = realized_premium(series, t - horizon, horizon);
            make_forecast(&series.row(t), k0, &ou, &diffusion, horizon)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| BacktestError::Forecast { horizon, source })?;
    let realized: Vec<f64> = origins
        .iter()
        .map(|&t| series.spot()[t + horizon])
        .collect();

    let mut cells = Vec::with_capacity(config.levels.len());
    for &level in &config.levels {
        let intervals = forecasts
            .iter()
            .map(|f| confidence_interval(f, level))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| BacktestError::Forecast { horizon, source })?;
        let covered = count_covered(&intervals, &realized);
        cells.push(CoverageCell {
            level,
            coverage: coverage_rate(&intervals, &realized)?,
            covered,
        });
    }

    Ok(HorizonCoverage {
        horizon_days: horizon,
        n_evaluations: origins.len(),
        premium_obs: premium.len(),
        ou,
        diffusion,
        diagnostics,
        cells,
    })
}

/// Runs every horizon, keeping failures per horizon.
pub fn run_backtest_partial(
    series: &MarketSeries,
    config: &BacktestConfig,
) -> Result<BacktestRun, BacktestError> {
    let split = config.validate()?;
    let n_train = split.train_len(series.len());
    if n_train == 0 || n_train >= series.len() {
        return Err(BacktestError::Data {
            horizon: 0,
            source: DataError::DegenerateSplit {
                len: series.len(),
                fraction: config.train_fraction,
            },
        });
    }
    let train = series
        .slice(0, n_train)
        .map_err(|source| BacktestError::Data { horizon: 0, source })?;
    let horizons = config
        .horizons_days
        .par_iter()
        .map(|&h| HorizonOutcome {
            horizon_days: h,
            result: evaluate_horizon(series, &train, config, h),
        })
        .collect();
    Ok(BacktestRun {
        levels: config.levels.clone(),
        train_rows: n_train,
        validation_rows: series.len() - n_train,
        horizons,
    })
}

/// Runs every horizon; any horizon failure fails the whole backtest.
pub fn run_backtest(
    series: &MarketSeries,
    config: &BacktestConfig,
) -> Result<CoverageReport, BacktestError> {
    run_backtest_partial(series, config)?.into_report()
}
