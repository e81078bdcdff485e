//! Exchange-rate forecasting with a mean-reverting risk premium.
//!
//! The realized deviation from uncovered interest parity over an `h`-day
//! window is modelled as an Ornstein-Uhlenbeck process. This crate covers the
//! full pipeline:
//!
//! * [`market_data`]: CSV ingestion, premium construction, train/validation split
//! * [`calibration`]: exact-discretization MLE for the OU parameters and the spot diffusion
//! * [`forecast`]: closed-form log-normal predictive distributions and intervals
//! * [`backtest`]: out-of-sample interval coverage per horizon and confidence level
//! * [`simulation`]: Monte Carlo oracle for the coupled spot/premium system

pub mod backtest;
pub mod calibration;
pub mod forecast;
pub mod market_data;
pub mod simulation;

/// Business-day year used for every horizon and step conversion.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Year fraction spanned by `days` business days.
pub fn year_fraction(days: usize) -> f64 {
    days as f64 / TRADING_DAYS_PER_YEAR
}

pub use backtest::{
    coverage_rate, run_backtest, run_backtest_partial, BacktestConfig, BacktestError, BacktestRun,
    CoverageReport, HorizonCoverage,
};
pub use calibration::{
    fit_sigma_s, ou_fit_mle, ou_log_likelihood, ou_transition, DiffusionParams, FitDiagnostics,
    FitError, OUParams, ParameterDocument,
};
pub use forecast::{
    confidence_interval, forecast_log_mean, forecast_log_var, lognormal_pdf, make_forecast,
    ou_integral_variance, quantile_fan, ForecastDistribution, ForecastError, ForecastRecord,
};
pub use market_data::{
    compute_premium, load_market_csv, split_train_validation, write_market_csv, DataError,
    MarketRow, MarketSeries, PremiumSeries, SplitSpec,
};
pub use simulation::{
    mc_vs_analytic, simulate_system, synthetic_market, HorizonGap, LogPriceDynamics,
    PathEnsembleStats, Scheme, SimulationConfig, SyntheticMarket,
};
