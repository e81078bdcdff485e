//! Closed-form predictive distribution of the future spot rate.
//!
//! Under the model `log S_{t+h}` is Gaussian with
//!
//! ```text
//! mean = log S_t + r·τ + (K_t/θ)(1 - e^{-θτ}) + μ(τ - (1 - e^{-θτ})/θ)
//! var  = σ_S²·τ + σ_K²·(1 - e^{-2θτ}) / (2θ)
//! ```
//!
//! so `S_{t+h}` is log-normal and central intervals follow from normal quantiles.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::calibration::{DiffusionParams, OUParams};
use crate::market_data::MarketRow;
use crate::year_fraction;

/// Below this value of `θ·t` the exponential terms switch to Taylor series.
pub const SMALL_DECAY: f64 = 1e-6;

/// Confidence levels reported by default (50% to 99%).
pub const DEFAULT_LEVELS: [f64; 7] = [0.50, 0.60, 0.70, 0.80, 0.90, 0.95, 0.99];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("confidence level must lie in [0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("confidence levels must be sorted ascending")]
    UnsortedLevels,
    #[error("price must be strictly positive, got {0}")]
    NonPositivePrice(f64),
    #[error("distribution has zero variance; density is undefined")]
    DegenerateDistribution,
    #[error("forecast moments are not finite (mean {mean_log}, variance {var_log})")]
    NonFinite { mean_log: f64, var_log: f64 },
}

/// Gaussian law of `log S_{t+h}` seen from a forecast origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub mean_log: f64,
    pub var_log: f64,
    pub horizon_years: f64,
    pub origin_spot: f64,
    pub origin_date: NaiveDate,
}

impl ForecastDistribution {
    pub fn sd_log(&self) -> f64 {
        self.var_log.sqrt()
    }

    /// Median of the log-normal law, `exp(mean_log)`.
    pub fn median(&self) -> f64 {
        self.mean_log.exp()
    }
}

/// `(1 - e^{-θt}) / θ`, the integral of `e^{-θs}` over `[0, t]`.
fn decay_integral(theta: f64, t: f64) -> f64 {
    let x = theta * t;
    if x.abs() < SMALL_DECAY {
        t * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        -(-x).exp_m1() / theta
    }
}

/// `t - (1 - e^{-θt}) / θ`, the time the premium spends pulled towards `μ`.
fn reversion_time(theta: f64, t: f64) -> f64 {
    let x = theta * t;
    if x.abs() < SMALL_DECAY {
        t * (x / 2.0 - x * x / 6.0)
    } else {
        t - decay_integral(theta, t)
    }
}

/// Variance of the OU noise integral `∫₀ᵗ e^{-θ(t-s)} dZ_s`, i.e. `(1 - e^{-2θt}) / (2θ)`.
pub fn ou_integral_variance(theta: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    let x = theta * t;
    if x.abs() < SMALL_DECAY {
        t * (1.0 - x + 2.0 / 3.0 * x * x)
    } else if t.is_infinite() {
        0.5 / theta
    } else {
        -(-2.0 * x).exp_m1() / (2.0 * theta)
    }
}

/// Expected log spot after `horizon_years`, starting from premium `k0`.
pub fn forecast_log_mean(
    log_s0: f64,
    rate_diff: f64,
    k0: f64,
    params: &OUParams,
    horizon_years: f64,
) -> f64 {
    debug_assert!(horizon_years >= 0.0);
    let theta = params.theta();
    log_s0
        + rate_diff * horizon_years
        + k0 * decay_integral(theta, horizon_years)
        + params.mu() * reversion_time(theta, horizon_years)
}

/// Variance of log spot after `horizon_years`.
pub fn forecast_log_var(sigma_s: f64, sigma_k: f64, theta: f64, horizon_years: f64) -> f64 {
    debug_assert!(horizon_years >= 0.0);
    sigma_s * sigma_s * horizon_years
        + sigma_k * sigma_k * ou_integral_variance(theta, horizon_years)
}

/// Predictive distribution issued at `origin` for `horizon_days` rows ahead.
///
/// The origin's rate differential is held constant over the horizon.
pub fn make_forecast(
    origin: &MarketRow,
    k0: f64,
    ou: &OUParams,
    diffusion: &DiffusionParams,
    horizon_days: usize,
) -> Result<ForecastDistribution, ForecastError> {
    let tau = year_fraction(horizon_days);
    let mean_log = forecast_log_mean(origin.spot.ln(), origin.rate_diff(), k0, ou, tau);
    let var_log = forecast_log_var(diffusion.sigma_s(), ou.sigma_k(), ou.theta(), tau);
    if !(mean_log.is_finite() && var_log.is_finite()) {
        return Err(ForecastError::NonFinite { mean_log, var_log });
    }
    Ok(ForecastDistribution {
        mean_log,
        var_log,
        horizon_years: tau,
        origin_spot: origin.spot,
        origin_date: origin.date,
    })
}

/// Inverse CDF of the standard normal.
pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn check_level(level: f64) -> Result<(), ForecastError> {
    if (0.0..1.0).contains(&level) {
        Ok(())
    } else {
        Err(ForecastError::InvalidLevel(level))
    }
}

/// Two-sided normal quantile for a central interval at `level`.
pub fn central_z(level: f64) -> Result<f64, ForecastError> {
    check_level(level)?;
    if level == 0.0 {
        return Ok(0.0);
    }
    Ok(standard_normal_quantile(0.5 * (1.0 + level)))
}

/// Central interval for `log S_{t+h}` at `level`.
pub fn log_interval(dist: &ForecastDistribution, level: f64) -> Result<(f64, f64), ForecastError> {
    let half = central_z(level)? * dist.sd_log();
    Ok((dist.mean_log - half, dist.mean_log + half))
}

/// Central price interval `[exp(μ - zσ), exp(μ + zσ)]` at `level`.
///
/// A zero-length horizon collapses exactly onto the origin spot.
pub fn confidence_interval(
    dist: &ForecastDistribution,
    level: f64,
) -> Result<(f64, f64), ForecastError> {
    let (lo, hi) = log_interval(dist, level)?;
    if dist.horizon_years == 0.0 && dist.var_log == 0.0 {
        return Ok((dist.origin_spot, dist.origin_spot));
    }
    Ok((lo.exp(), hi.exp()))
}

/// Log-normal density of `S_{t+h}` at price `s`.
pub fn lognormal_pdf(dist: &ForecastDistribution, s: f64) -> Result<f64, ForecastError> {
    if s.is_nan() || s <= 0.0 {
        return Err(ForecastError::NonPositivePrice(s));
    }
    if dist.var_log <= 0.0 {
        return Err(ForecastError::DegenerateDistribution);
    }
    let dev = s.ln() - dist.mean_log;
    let norm = s * (2.0 * std::f64::consts::PI * dist.var_log).sqrt();
    Ok((-dev * dev / (2.0 * dist.var_log)).exp() / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanBand {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Nested central intervals at ascending `levels`.
pub fn quantile_fan(
    dist: &ForecastDistribution,
    levels: &[f64],
) -> Result<Vec<FanBand>, ForecastError> {
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(ForecastError::UnsortedLevels);
    }
    levels
        .iter()
        .map(|&level| {
            let (lower, upper) = confidence_interval(dist, level)?;
            Ok(FanBand {
                level,
                lower,
                upper,
            })
        })
        .collect()
}

/// Column label for a level: `0.95 -> "95"`, `0.975 -> "97.5"`.
pub fn level_label(level: f64) -> String {
    let pct = format!("{:.6}", level * 100.0);
    pct.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One emitted forecast: moments plus the interval fan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin_date: NaiveDate,
    pub horizon_days: usize,
    pub mean_log: f64,
    pub var_log: f64,
    pub bands: Vec<FanBand>,
}

impl ForecastRecord {
    pub fn new(
        dist: &ForecastDistribution,
        horizon_days: usize,
        levels: &[f64],
    ) -> Result<Self, ForecastError> {
        Ok(Self {
            origin_date: dist.origin_date,
            horizon_days,
            mean_log: dist.mean_log,
            var_log: dist.var_log,
            bands: quantile_fan(dist, levels)?,
        })
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "origin_date".to_string(),
            "horizon_days".to_string(),
            "mean_log".to_string(),
            "var_log".to_string(),
        ];
        for b in &self.bands {
            let l = level_label(b.level);
            cols.push(format!("lower_{l}"));
            cols.push(format!("upper_{l}"));
        }
        cols.join(",")
    }

    /// CSV row with every float at 17 significant digits.
    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.origin_date.format("%Y-%m-%d").to_string(),
            self.horizon_days.to_string(),
            format!("{:.16e}", self.mean_log),
            format!("{:.16e}", self.var_log),
        ];
        for b in &self.bands {
            cols.push(format!("{:.16e}", b.lower));
            cols.push(format!("{:.16e}", b.upper));
        }
        cols.join(",")
    }
}
