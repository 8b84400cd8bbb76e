//! Bayesian joinpoint regression for Poisson count series.
//!
//! The model treats every candidate number of change-points at once through
//! an encompassing log-linear Poisson model with binary inclusion indicators,
//! and explores it with a Metropolis-within-Gibbs sampler. Posterior
//! summaries include the distribution of the number of joinpoints,
//! model-averaged trends and forecasts, and location densities. A BIC-scored
//! maximum-likelihood grid search and a simulation harness are included for
//! comparison.

pub mod baseline;
pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod plot;
pub mod sampler;
pub mod simstudy;
pub mod summaries;

pub use baseline::{profile_fit, select_bic, BicSelection, ProfileFit};
pub use basis::{design_columns, solve_breakpoint, BreakpointBasis, TimeGrid};
pub use error::{Error, Result};
pub use model::{FitConfig, ModelState, PriorKind, SeriesData};
pub use sampler::{run_chains, PosteriorDraws, SamplerConfig};
pub use simstudy::{generate_series, run_study, Scenario, StudyConfig};
pub use summaries::{build_report, FitReport, ForecastPopulations};
