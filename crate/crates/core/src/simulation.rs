//! Monte Carlo simulation of the coupled spot/premium system.
//!
//! The premium follows `dK = θ(μ - K)dt + σ_K dZ` and the log spot is driven by
//! the rate differential, the premium, and an independent Brownian motion `W`.
//! Two log-price dynamics are available:
//!
//! * [`LogPriceDynamics::AdditivePremium`] builds `log S_t` from the
//!   additive decomposition used by the closed-form forecast: the premium's
//!   deterministic mean path integrated over time, plus `σ_S·W_t`, plus the OU
//!   noise `K_t - E[K_t]` at time `t`. Its mean and variance are exactly the
//!   forecast moments, so this is the oracle for those formulas.
//! * [`LogPriceDynamics::IntegratedPremium`] integrates the simulated premium
//!   path into the log spot (`d log S = (r + K_t)dt + σ_S dW`). Its variance
//!   carries the time integral of the OU noise instead, see [`coupled_log_var`].
//!
//! Every path draws from its own ChaCha stream keyed by `(seed, path index)`
//! and paths are reduced in fixed-size chunks in index order, so results do not
//! depend on the number of worker threads.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{DiffusionParams, OUParams};
use crate::forecast::{forecast_log_mean, forecast_log_var, ou_integral_variance};
use crate::market_data::MarketSeries;
use crate::year_fraction;

const CHUNK_PATHS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(
        "horizon {horizon} years does not fall on a simulated step (dt {dt}, {n_steps} steps)"
    )]
    HorizonOutOfRange {
        horizon: f64,
        dt: f64,
        n_steps: usize,
    },
}

/// Premium discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// First-order Euler-Maruyama step.
    Euler,
    /// Exact Gaussian OU transition.
    ExactOu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogPriceDynamics {
    AdditivePremium,
    IntegratedPremium,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Year fraction per step.
    pub dt: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub dynamics: LogPriceDynamics,
    /// Subtract `σ_S²/2` from the log drift (price-SDE convention).
    pub ito_correction: bool,
}

impl SimulationConfig {
    pub fn new(n_paths: usize, n_steps: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            dt,
            seed,
            scheme: Scheme::ExactOu,
            dynamics: LogPriceDynamics::AdditivePremium,
            ito_correction: false,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_dynamics(mut self, dynamics: LogPriceDynamics) -> Self {
        self.dynamics = dynamics;
        self
    }

    pub fn with_ito_correction(mut self, on: bool) -> Self {
        self.ito_correction = on;
        self
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.to_string()));
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1");
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive and finite");
        }
        Ok(())
    }
}

/// Streaming central moments up to fourth order, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n, other.n);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        self.m2 += other.m2 + d2 * na * nb / n;
        self.m3 = m3;
        self.m4 = m4;
        self.mean += delta * nb / n;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n as usize
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            self.m2 / (self.n - 1.0)
        }
    }

    /// Standard error of the sample mean; NaN below two samples.
    pub fn mean_standard_error(&self) -> f64 {
        if self.n < 2.0 {
            f64::NAN
        } else {
            (self.variance() / self.n).sqrt()
        }
    }

    /// Standard error of the sample variance from the fourth central moment.
    pub fn variance_standard_error(&self) -> f64 {
        if self.n < 4.0 {
            return f64::NAN;
        }
        let n = self.n;
        let s2 = self.variance();
        let mu4 = self.m4 / n;
        ((mu4 - (n - 3.0) / (n - 1.0) * s2 * s2) / n)
            .max(0.0)
            .sqrt()
    }

    pub fn skewness(&self) -> f64 {
        if self.m2 == 0.0 {
            return 0.0;
        }
        self.n.sqrt() * self.m3 / self.m2.powf(1.5)
    }

    pub fn excess_kurtosis(&self) -> f64 {
        if self.m2 == 0.0 {
            return 0.0;
        }
        self.n * self.m4 / (self.m2 * self.m2) - 3.0
    }
}

/// Streaming sample correlation of two variables.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CoMoments {
    n: f64,
    mean_x: f64,
    mean_y: f64,
    m2x: f64,
    m2y: f64,
    cxy: f64,
}

impl CoMoments {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n;
        let dy = y - self.mean_y;
        self.mean_y += dy / self.n;
        self.m2x += dx * (x - self.mean_x);
        self.m2y += dy * (y - self.mean_y);
        self.cxy += dx * (y - self.mean_y);
    }

    fn merge(&mut self, o: &CoMoments) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let dx = o.mean_x - self.mean_x;
        let dy = o.mean_y - self.mean_y;
        let w = self.n * o.n / n;
        self.m2x += o.m2x + dx * dx * w;
        self.m2y += o.m2y + dy * dy * w;
        self.cxy += o.cxy + dx * dy * w;
        self.mean_x += dx * o.n / n;
        self.mean_y += dy * o.n / n;
        self.n = n;
    }

    fn correlation(&self) -> f64 {
        let denom = (self.m2x * self.m2y).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            self.cxy / denom
        }
    }
}

/// Per-step ensemble statistics; every vector has `n_steps + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsembleStats {
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub mean_log_s: Vec<f64>,
    pub var_log_s: Vec<f64>,
    /// Standard error of `mean_log_s`.
    pub mc_standard_error: Vec<f64>,
    /// Standard error of `var_log_s`.
    pub var_standard_error: Vec<f64>,
    pub mean_k: Vec<f64>,
    pub var_k: Vec<f64>,
    pub k_standard_error: Vec<f64>,
    pub k_var_standard_error: Vec<f64>,
    pub final_skewness: f64,
    pub final_excess_kurtosis: f64,
    /// Sample correlation of premium increments with spot diffusion shocks.
    pub shock_correlation: f64,
}

/// Single-path state shared by the ensemble simulator and the market generator.
struct PathStepper {
    dt: f64,
    scheme: Scheme,
    dynamics: LogPriceDynamics,
    rate_diff: f64,
    drift_adjust: f64,
    sigma_s_sqrt_dt: f64,
    theta: f64,
    mu: f64,
    sigma_k: f64,
    decay: f64,
    exact_sd: f64,
    log_s0: f64,
    k: f64,
    /// Deterministic mean of the premium (additive premium only).
    k_mean: f64,
    /// Deterministic part of log S accumulated so far.
    drift: f64,
    /// `σ_S·W_t`
    diffusion: f64,
    log_s: f64,
}

impl PathStepper {
    #[allow(clippy::too_many_arguments)]
    fn new(
        dt: f64,
        scheme: Scheme,
        dynamics: LogPriceDynamics,
        ito_correction: bool,
        ou: &OUParams,
        diff: &DiffusionParams,
        log_s0: f64,
        k0: f64,
        rate_diff: f64,
    ) -> Self {
        let sigma_s = diff.sigma_s();
        Self {
            dt,
            scheme,
            dynamics,
            rate_diff,
            drift_adjust: if ito_correction {
                0.5 * sigma_s * sigma_s
            } else {
                0.0
            },
            sigma_s_sqrt_dt: sigma_s * dt.sqrt(),
            theta: ou.theta(),
            mu: ou.mu(),
            sigma_k: ou.sigma_k(),
            decay: (-ou.theta() * dt).exp(),
            exact_sd: ou.sigma_k() * ou_integral_variance(ou.theta(), dt).sqrt(),
            log_s0,
            k: k0,
            k_mean: k0,
            drift: 0.0,
            diffusion: 0.0,
            log_s: log_s0,
        }
    }

    fn advance_premium(&self, k: f64, shock: f64) -> f64 {
        match self.scheme {
            Scheme::ExactOu => self.mu + (k - self.mu) * self.decay + self.exact_sd * shock,
            Scheme::Euler => {
                k + self.theta * (self.mu - k) * self.dt + self.sigma_k * self.dt.sqrt() * shock
            }
        }
    }

    /// Advances one step; returns the premium increment.
    fn step(&mut self, spot_shock: f64, premium_shock: f64) -> f64 {
        let k_prev = self.k;
        let mean_prev = self.k_mean;
        self.k = self.advance_premium(k_prev, premium_shock);
        self.k_mean = self.advance_premium(mean_prev, 0.0);
        self.diffusion += self.sigma_s_sqrt_dt * spot_shock;
        match self.dynamics {
            LogPriceDynamics::IntegratedPremium => {
                self.log_s += (self.rate_diff + k_prev - self.drift_adjust) * self.dt
                    + self.sigma_s_sqrt_dt * spot_shock;
            }
            LogPriceDynamics::AdditivePremium => {
                let premium_drift = 0.5 * (mean_prev + self.k_mean);
                self.drift += (self.rate_diff + premium_drift - self.drift_adjust) * self.dt;
                self.log_s = self.log_s0 + self.drift + self.diffusion + (self.k - self.k_mean);
            }
        }
        self.k - k_prev
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

struct ChunkStats {
    log_s: Vec<Moments>,
    k: Vec<Moments>,
    shocks: CoMoments,
}

#[allow(clippy::too_many_arguments)]
fn simulate_chunk(
    config: &SimulationConfig,
    ou: &OUParams,
    diff: &DiffusionParams,
    log_s0: f64,
    k0: f64,
    rate_diff: f64,
    paths: std::ops::Range<usize>,
) -> ChunkStats {
    let steps = config.n_steps + 1;
    let mut stats = ChunkStats {
        log_s: vec![Moments::default(); steps],
        k: vec![Moments::default(); steps],
        shocks: CoMoments::default(),
    };
    for path in paths {
        let mut rng = path_rng(config.seed, path as u64);
        let mut stepper = PathStepper::new(
            config.dt,
            config.scheme,
            config.dynamics,
            config.ito_correction,
            ou,
            diff,
            log_s0,
            k0,
            rate_diff,
        );
        stats.log_s[0].push(stepper.log_s);
        stats.k[0].push(stepper.k);
        for i in 1..steps {
            let spot_shock: f64 = StandardNormal.sample(&mut rng);
            let premium_shock: f64 = StandardNormal.sample(&mut rng);
            let dk = stepper.step(spot_shock, premium_shock);
            stats.shocks.push(dk, spot_shock);
            stats.log_s[i].push(stepper.log_s);
            stats.k[i].push(stepper.k);
        }
    }
    stats
}

/// Simulates `n_paths` paths of the coupled system and returns per-step statistics.
pub fn simulate_system(
    config: &SimulationConfig,
    ou: &OUParams,
    diff: &DiffusionParams,
    s0: f64,
    k0: f64,
    rate_diff: f64,
) -> Result<PathEnsembleStats, SimulationError> {
    config.validate()?;
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(SimulationError::InvalidConfig(format!(
            "initial spot must be positive, got {s0}"
        )));
    }
    let log_s0 = s0.ln();
    let n_chunks = config.n_paths.div_ceil(CHUNK_PATHS);
    let chunks: Vec<ChunkStats> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK_PATHS;
            let end = (start + CHUNK_PATHS).min(config.n_paths);
            simulate_chunk(config, ou, diff, log_s0, k0, rate_diff, start..end)
        })
        .collect();

    let steps = config.n_steps + 1;
    let mut log_s = vec![Moments::default(); steps];
    let mut k = vec![Moments::default(); steps];
    let mut shocks = CoMoments::default();
    for chunk in &chunks {
        for (acc, m) in log_s.iter_mut().zip(&chunk.log_s) {
            acc.merge(m);
        }
        for (acc, m) in k.iter_mut().zip(&chunk.k) {
            acc.merge(m);
        }
        shocks.merge(&chunk.shocks);
    }

    let last = log_s[steps - 1];
    Ok(PathEnsembleStats {
        n_paths: config.n_paths,
        times: (0..steps).map(|i| i as f64 * config.dt).collect(),
        mean_log_s: log_s.iter().map(Moments::mean).collect(),
        var_log_s: log_s.iter().map(Moments::variance).collect(),
        mc_standard_error: log_s.iter().map(Moments::mean_standard_error).collect(),
        var_standard_error: log_s.iter().map(Moments::variance_standard_error).collect(),
        mean_k: k.iter().map(Moments::mean).collect(),
        var_k: k.iter().map(Moments::variance).collect(),
        k_standard_error: k.iter().map(Moments::mean_standard_error).collect(),
        k_var_standard_error: k.iter().map(Moments::variance_standard_error).collect(),
        final_skewness: last.skewness(),
        final_excess_kurtosis: last.excess_kurtosis(),
        shock_correlation: shocks.correlation(),
    })
}

/// Simulated-vs-closed-form moments at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonGap {
    pub horizon_years: f64,
    pub step: usize,
    pub mc_mean: f64,
    pub analytic_mean: f64,
    pub mean_se: f64,
    pub mean_gap_in_se: f64,
    pub mc_var: f64,
    pub analytic_var: f64,
    pub var_se: f64,
    pub var_gap_in_se: f64,
}

impl HorizonGap {
    /// Whether both gaps lie within `limit` standard errors. NaN gaps (no
    /// usable standard error) count as passing.
    pub fn within(&self, limit: f64) -> bool {
        !(self.mean_gap_in_se.abs() > limit || self.var_gap_in_se.abs() > limit)
    }

    pub fn has_usable_se(&self) -> bool {
        self.mean_gap_in_se.is_finite() || self.mean_se == 0.0
    }
}

fn gap_in_se(mc: f64, analytic: f64, se: f64) -> f64 {
    let gap = mc - analytic;
    if se.is_nan() {
        return f64::NAN;
    }
    if se == 0.0 {
        // deterministic ensemble: only rounding separates the two routes
        let tol = 1e-12 * analytic.abs().max(1.0);
        return if gap.abs() <= tol {
            0.0
        } else {
            f64::INFINITY.copysign(gap)
        };
    }
    gap / se
}

/// Compares simulated moments of `log S` with the closed-form forecast moments
/// at each horizon (in years, each a multiple of `config.dt`).
pub fn mc_vs_analytic(
    config: &SimulationConfig,
    ou: &OUParams,
    diff: &DiffusionParams,
    s0: f64,
    k0: f64,
    rate_diff: f64,
    horizons: &[f64],
) -> Result<Vec<HorizonGap>, SimulationError> {
    let steps: Vec<usize> = horizons
        .iter()
        .map(|&h| {
            let step = (h / config.dt).round();
            if !(step >= 1.0 && step <= config.n_steps as f64)
                || (step * config.dt - h).abs() > 1e-9 * h.max(1.0)
            {
                Err(SimulationError::HorizonOutOfRange {
                    horizon: h,
                    dt: config.dt,
                    n_steps: config.n_steps,
                })
            } else {
                Ok(step as usize)
            }
        })
        .collect::<Result<_, _>>()?;
    let stats = simulate_system(config, ou, diff, s0, k0, rate_diff)?;
    Ok(horizons
        .iter()
        .zip(steps)
        .map(|(&h, step)| {
            let analytic_mean = forecast_log_mean(s0.ln(), rate_diff, k0, ou, h);
            let analytic_var = forecast_log_var(diff.sigma_s(), ou.sigma_k(), ou.theta(), h);
            let (mc_mean, mc_var) = (stats.mean_log_s[step], stats.var_log_s[step]);
            let (mean_se, var_se) = (
                stats.mc_standard_error[step],
                stats.var_standard_error[step],
            );
            HorizonGap {
                horizon_years: h,
                step,
                mc_mean,
                analytic_mean,
                mean_se,
                mean_gap_in_se: gap_in_se(mc_mean, analytic_mean, mean_se),
                mc_var,
                analytic_var,
                var_se,
                var_gap_in_se: gap_in_se(mc_var, analytic_var, var_se),
            }
        })
        .collect())
}

/// Variance of `log S_t` when the premium path itself is integrated into the
/// log spot: `σ_S²t + (σ_K/θ)²·[t - 2(1 - e^{-θt})/θ + (1 - e^{-2θt})/(2θ)]`.
pub fn coupled_log_var(sigma_s: f64, ou: &OUParams, t: f64) -> f64 {
    let theta = ou.theta();
    let x = theta * t;
    let premium = if x < 1e-4 {
        t * t * t * (1.0 / 3.0 - x / 4.0 + 7.0 * x * x / 60.0)
    } else {
        (t - 2.0 * (-(-x).exp_m1()) / theta + ou_integral_variance(theta, t)) / (theta * theta)
    };
    sigma_s * sigma_s * t + ou.sigma_k() * ou.sigma_k() * premium
}

/// Recipe for a daily market series generated by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticMarket {
    pub n_days: usize,
    pub start: NaiveDate,
    pub s0: f64,
    pub us_yield: f64,
    pub kr_yield: f64,
    /// Premium process, with `K` in per-year units.
    pub ou: OUParams,
    pub diffusion: DiffusionParams,
    pub k0: f64,
    pub seed: u64,
    pub dynamics: LogPriceDynamics,
}

impl SyntheticMarket {
    pub fn new(n_days: usize, ou: OUParams, diffusion: DiffusionParams, seed: u64) -> Self {
        Self {
            n_days,
            start: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            s0: 1150.0,
            us_yield: 0.03,
            kr_yield: 0.035,
            ou,
            diffusion,
            k0: ou.mu(),
            seed,
            dynamics: LogPriceDynamics::IntegratedPremium,
        }
    }
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// One daily path of the model with exact OU premium steps and constant yields.
pub fn synthetic_market(spec: &SyntheticMarket) -> MarketSeries {
    let dt = year_fraction(1);
    let mut rng = path_rng(spec.seed, 0);
    let mut stepper = PathStepper::new(
        dt,
        Scheme::ExactOu,
        spec.dynamics,
        false,
        &spec.ou,
        &spec.diffusion,
        spec.s0.ln(),
        spec.k0,
        spec.us_yield - spec.kr_yield,
    );
    let mut spot = Vec::with_capacity(spec.n_days);
    spot.push(spec.s0);
    while spot.len() < spec.n_days {
        let spot_shock: f64 = StandardNormal.sample(&mut rng);
        let premium_shock: f64 = StandardNormal.sample(&mut rng);
        stepper.step(spot_shock, premium_shock);
        spot.push(stepper.log_s.exp());
    }
    let n = spec.n_days;
    MarketSeries::new(
        business_days(spec.start, n),
        spot,
        vec![spec.us_yield; n],
        vec![spec.kr_yield; n],
    )
    .expect("generated series satisfies invariants")
}
