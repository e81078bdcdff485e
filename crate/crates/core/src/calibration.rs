//! Maximum-likelihood calibration of the premium process.
//!
//! Sampled at a fixed step `Δ`, the OU process `dK = θ(μ - K)dt + σ_K dZ` is
//! exactly the Gaussian AR(1)
//!
//! ```text
//! K_{t+1} = b + a·K_t + ε,   a = e^{-θΔ},  b = μ(1 - a),  Var ε = σ_K²(1 - a²)/(2θ)
//! ```
//!
//! so least squares on consecutive pairs is the conditional MLE, and the OU
//! parameters follow by inverting the mapping.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::ou_integral_variance;
use crate::market_data::{MarketSeries, PremiumSeries};
use crate::year_fraction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no mean reversion: fitted AR(1) slope {slope} is outside (0, 1)")]
    NonStationaryFit { slope: f64 },
    #[error("lagged premium has zero variance; AR(1) slope is not identified")]
    DegenerateSeries,
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// OU parameters: rate `theta` (per year), level `mu`, volatility `sigma_k` (per √year).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    theta: f64,
    mu: f64,
    sigma_k: f64,
}

impl OUParams {
    pub fn new(theta: f64, mu: f64, sigma_k: f64) -> Result<Self, FitError> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(FitError::InvalidParams(format!(
                "theta must be positive and finite, got {theta}"
            )));
        }
        if !mu.is_finite() {
            return Err(FitError::InvalidParams(format!(
                "mu must be finite, got {mu}"
            )));
        }
        if !(sigma_k.is_finite() && sigma_k >= 0.0) {
            return Err(FitError::InvalidParams(format!(
                "sigma_k must be non-negative and finite, got {sigma_k}"
            )));
        }
        if !(sigma_k * sigma_k / (2.0 * theta)).is_finite() {
            return Err(FitError::InvalidParams(
                "stationary variance overflows".to_string(),
            ));
        }
        Ok(Self { theta, mu, sigma_k })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma_k(&self) -> f64 {
        self.sigma_k
    }

    /// Long-run variance `σ_K² / (2θ)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma_k * self.sigma_k / (2.0 * self.theta)
    }

    pub fn half_life(&self) -> f64 {
        std::f64::consts::LN_2 / self.theta
    }
}

/// Spot log-return volatility `sigma_s`, per √year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    sigma_s: f64,
}

impl DiffusionParams {
    pub fn new(sigma_s: f64) -> Result<Self, FitError> {
        if sigma_s.is_finite() && sigma_s >= 0.0 {
            Ok(Self { sigma_s })
        } else {
            Err(FitError::InvalidParams(format!(
                "sigma_s must be non-negative and finite, got {sigma_s}"
            )))
        }
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_likelihood: f64,
    /// Premium observations used (transitions + 1).
    pub n_obs: usize,
    /// Fitted `a = e^{-θΔ}`.
    pub ar1_coefficient: f64,
    pub delta_t: f64,
}

/// Exact transition moments of `K_{t+dt}` given `K_t = k0`.
pub fn ou_transition(params: &OUParams, k0: f64, dt: f64) -> (f64, f64) {
    debug_assert!(dt >= 0.0);
    let decay = (-params.theta * dt).exp();
    let mean = params.mu + (k0 - params.mu) * decay;
    let var = params.sigma_k * params.sigma_k * ou_integral_variance(params.theta, dt);
    (mean, var)
}

/// Gaussian transition log-likelihood of `values` sampled every `delta_t`.
///
/// A zero transition variance yields `+inf` when every step is matched
/// exactly and `-inf` otherwise.
pub fn ou_log_likelihood(params: &OUParams, values: &[f64], delta_t: f64) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    values
        .windows(2)
        .map(|w| {
            let (mean, var) = ou_transition(params, w[0], delta_t);
            let r = w[1] - mean;
            if var > 0.0 {
                -0.5 * (ln_2pi + var.ln() + r * r / var)
            } else if r == 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum()
}

/// Conditional MLE of the OU parameters from a premium series.
pub fn ou_fit_mle(
    premium: &PremiumSeries,
    delta_t: f64,
) -> Result<(OUParams, FitDiagnostics), FitError> {
    fit_ou_values(premium.values(), delta_t)
}

/// [`ou_fit_mle`] on raw observations.
pub fn fit_ou_values(values: &[f64], delta_t: f64) -> Result<(OUParams, FitDiagnostics), FitError> {
    if !(delta_t.is_finite() && delta_t > 0.0) {
        return Err(FitError::InvalidTimeStep(delta_t));
    }
    if values.len() < 3 {
        return Err(FitError::InsufficientData {
            needed: 3,
            got: values.len(),
        });
    }
    // A constant path is reproduced exactly by a = 1: a random walk with no
    // noise, i.e. no detectable reversion.
    if values.iter().all(|&v| v == values[0]) {
        return Err(FitError::NonStationaryFit { slope: 1.0 });
    }

    let x = &values[..values.len() - 1];
    let y = &values[1..];
    let n = x.len() as f64;
    let x_bar = x.iter().sum::<f64>() / n;
    let y_bar = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - x_bar) * (xi - x_bar);
        sxy += (xi - x_bar) * (yi - y_bar);
    }
    if sxx == 0.0 {
        return Err(FitError::DegenerateSeries);
    }
    let a = sxy / sxx;
    if !(a > 0.0 && a < 1.0) {
        return Err(FitError::NonStationaryFit { slope: a });
    }
    let b = y_bar - a * x_bar;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - b - a * xi;
            r * r
        })
        .sum();
    let v = rss / n;

    let theta = -a.ln() / delta_t;
    let mu = b / (1.0 - a);
    let sigma_k = (v * 2.0 * theta / (1.0 - a * a)).sqrt();
    let params = OUParams::new(theta, mu, sigma_k)?;
    let diagnostics = FitDiagnostics {
        log_likelihood: ou_log_likelihood(&params, values, delta_t),
        n_obs: values.len(),
        ar1_coefficient: a,
        delta_t,
    };
    Ok((params, diagnostics))
}

/// Spot diffusion volatility from one-step log returns of the training window.
///
/// The total annualized variance of returns net of the rate differential is
/// split between the premium and the diffusion: over one premium horizon `τ`
/// the premium accounts for `σ_K²·(1 - e^{-2θτ})/(2θ)`, and `σ_S²·τ` takes the
/// rest. The diffusion share is floored at zero.
pub fn fit_sigma_s(
    train: &MarketSeries,
    premium: &PremiumSeries,
    ou: &OUParams,
) -> Result<DiffusionParams, FitError> {
    let n = train.len();
    if n < 3 {
        return Err(FitError::InsufficientData { needed: 3, got: n });
    }
    let dt = year_fraction(1);
    let spot = train.spot();
    let excess: Vec<f64> = (0..n - 1)
        .map(|i| (spot[i + 1] / spot[i]).ln() - train.row(i).rate_diff() * dt)
        .collect();
    let m = excess.len() as f64;
    let mean = excess.iter().sum::<f64>() / m;
    let var = excess.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (m - 1.0);
    let total = var / dt;

    let tau = premium.horizon_years();
    let premium_share = ou.sigma_k() * ou.sigma_k() * ou_integral_variance(ou.theta(), tau) / tau;
    DiffusionParams::new((total - premium_share).max(0.0).sqrt())
}

#[derive(Debug, Error)]
pub enum ParamDocError {
    #[error("cannot access parameter file: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("parameter file lacks key `{0}`")]
    MissingKey(&'static str),
    #[error(transparent)]
    Invalid(#[from] FitError),
}

/// Plain-text `key = value` document holding a complete fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDocument {
    pub theta: f64,
    pub mu: f64,
    pub sigma_k: f64,
    pub sigma_s: f64,
    pub delta_t: f64,
    pub n_obs: usize,
    pub log_likelihood: f64,
    /// Date of the last observation that entered the fit.
    pub fit_date: NaiveDate,
    /// Premium horizon the fit was made for, when known.
    pub horizon_days: Option<usize>,
}

impl ParameterDocument {
    pub fn from_fit(
        ou: &OUParams,
        diffusion: &DiffusionParams,
        diagnostics: &FitDiagnostics,
        fit_date: NaiveDate,
        horizon_days: Option<usize>,
    ) -> Self {
        Self {
            theta: ou.theta(),
            mu: ou.mu(),
            sigma_k: ou.sigma_k(),
            sigma_s: diffusion.sigma_s(),
            delta_t: diagnostics.delta_t,
            n_obs: diagnostics.n_obs,
            log_likelihood: diagnostics.log_likelihood,
            fit_date,
            horizon_days,
        }
    }

    pub fn ou(&self) -> Result<OUParams, FitError> {
        OUParams::new(self.theta, self.mu, self.sigma_k)
    }

    pub fn diffusion(&self) -> Result<DiffusionParams, FitError> {
        DiffusionParams::new(self.sigma_s)
    }

    /// Serializes with 17 significant digits so every float reads back exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("theta", format!("{:.16e}", self.theta));
        put("mu", format!("{:.16e}", self.mu));
        put("sigma_k", format!("{:.16e}", self.sigma_k));
        put("sigma_s", format!("{:.16e}", self.sigma_s));
        put("delta_t", format!("{:.16e}", self.delta_t));
        put("n_obs", self.n_obs.to_string());
        put("log_likelihood", format!("{:.16e}", self.log_likelihood));
        put("fit_date", self.fit_date.format("%Y-%m-%d").to_string());
        if let Some(h) = self.horizon_days {
            put("horizon_days", h.to_string());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ParamDocError> {
        let mut theta = None;
        let mut mu = None;
        let mut sigma_k = None;
        let mut sigma_s = None;
        let mut delta_t = None;
        let mut n_obs = None;
        let mut log_likelihood = None;
        let mut fit_date = None;
        let mut horizon_days = None;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ParamDocError::Parse {
                    line,
                    reason: format!("expected `key = value`, got `{content}`"),
                })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| ParamDocError::Parse {
                line,
                reason: format!("`{value}` is not a valid {what} for `{key}`"),
            };
            let float = || value.parse::<f64>().map_err(|_| bad("number"));
            let count = || value.parse::<usize>().map_err(|_| bad("count"));
            match key {
                "theta" => theta = Some(float()?),
                "mu" => mu = Some(float()?),
                "sigma_k" => sigma_k = Some(float()?),
                "sigma_s" => sigma_s = Some(float()?),
                "delta_t" => delta_t = Some(float()?),
                "n_obs" => n_obs = Some(count()?),
                "log_likelihood" => log_likelihood = Some(float()?),
                "fit_date" => {
                    fit_date = Some(
                        NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| bad("date"))?,
                    )
                }
                "horizon_days" => horizon_days = Some(count()?),
                _ => {
                    return Err(ParamDocError::Parse {
                        line,
                        reason: format!("unknown key `{key}`"),
                    })
                }
            }
        }

        let doc = Self {
            theta: theta.ok_or(ParamDocError::MissingKey("theta"))?,
            mu: mu.ok_or(ParamDocError::MissingKey("mu"))?,
            sigma_k: sigma_k.ok_or(ParamDocError::MissingKey("sigma_k"))?,
            sigma_s: sigma_s.ok_or(ParamDocError::MissingKey("sigma_s"))?,
            delta_t: delta_t.ok_or(ParamDocError::MissingKey("delta_t"))?,
            n_obs: n_obs.ok_or(ParamDocError::MissingKey("n_obs"))?,
            log_likelihood: log_likelihood.ok_or(ParamDocError::MissingKey("log_likelihood"))?,
            fit_date: fit_date.ok_or(ParamDocError::MissingKey("fit_date"))?,
            horizon_days,
        };
        doc.ou()?;
        doc.diffusion()?;
        Ok(doc)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ParamDocError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ParamDocError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
