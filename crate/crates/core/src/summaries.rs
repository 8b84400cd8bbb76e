//! Posterior summaries built from the stored draws.
//!
//! All intervals are equal-tailed and use type-7 (linear interpolation)
//! quantiles. Everything here is model-averaged: draws from every model
//! visited by the sampler contribute with their posterior frequency.

use serde::{Deserialize, Serialize};

use crate::basis::{solve_breakpoint, BreakpointBasis, TimeGrid};
use crate::diagnostics::{diagnose, ScalarDiagnostics};
use crate::error::{Error, Result};
use crate::model::{ModelState, SeriesData};
use crate::sampler::PosteriorDraws;

/// Rates are reported per this many person-years.
pub const RATE_UNIT: f64 = 100_000.0;

/// Minimum number of draws for a conditional location density to be trusted.
pub const MIN_CONDITIONAL_DRAWS: usize = 200;

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Posterior frequency of each number of active joinpoints `0..=jstar`.
pub fn joinpoint_count_pmf(draws: &PosteriorDraws) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let mut counts = vec![0usize; draws.jstar() + 1];
    for s in draws.states() {
        counts[s.active_count()] += 1;
    }
    let total = draws.n_draws() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Populations used beyond the last observed year: explicit per-year values,
/// otherwise the last observed population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastPopulations {
    pub overrides: Vec<(f64, f64)>,
}

impl ForecastPopulations {
    pub fn population_at(&self, t: f64, data: &SeriesData) -> f64 {
        self.overrides
            .iter()
            .find(|(year, _)| (year - t).abs() < 1e-9)
            .map(|&(_, p)| p)
            .unwrap_or_else(|| *data.populations().last().expect("nonempty data"))
    }
}

/// Model-averaged rate at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub time: f64,
    pub forecast: bool,
    pub population: f64,
    /// Observed rate per 100,000 (observed years only).
    pub observed_rate: Option<f64>,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Posterior mean of the expected count at this population.
    pub expected_count: f64,
}

/// Log rate `alpha + beta0 (t - tbar) + sum_j delta_j beta_j B_j(t)` of one draw.
fn log_rate(state: &ModelState, bases: &[Option<BreakpointBasis>], tbar: f64, t: f64) -> f64 {
    let mut v = state.alpha + state.beta0 * (t - tbar);
    for (b, basis) in state.beta.iter().zip(bases) {
        if let Some(basis) = basis {
            v += b * basis.eval(t);
        }
    }
    v
}

fn active_bases(state: &ModelState, grid: &TimeGrid) -> Result<Vec<Option<BreakpointBasis>>> {
    state
        .tau
        .iter()
        .zip(&state.delta)
        .map(|(&tau, &d)| d.then(|| solve_breakpoint(grid, tau)).transpose())
        .collect()
}

/// Posterior of `100,000 mu(t) / P(t)` on the observed grid followed by
/// `horizon` yearly forecast points.
pub fn averaged_trend(
    draws: &PosteriorDraws,
    data: &SeriesData,
    horizon: usize,
    populations: Option<&ForecastPopulations>,
) -> Result<Vec<TrendPoint>> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    if horizon > 0 && populations.is_none() {
        return Err(Error::MissingForecastPopulation);
    }
    let grid = data.grid();
    let tbar = grid.mean();
    let mut times: Vec<(f64, bool, f64)> = grid
        .times()
        .iter()
        .zip(data.populations())
        .map(|(&t, &p)| (t, false, p))
        .collect();
    for k in 1..=horizon {
        let t = grid.last() + k as f64;
        let p = populations.expect("checked above").population_at(t, data);
        times.push((t, true, p));
    }

    let mut rates: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.n_draws()); times.len()];
    for state in draws.states() {
        let bases = active_bases(state, grid)?;
        for (slot, &(t, _, _)) in rates.iter_mut().zip(&times) {
            slot.push(RATE_UNIT * log_rate(state, &bases, tbar, t).exp());
        }
    }

    Ok(times
        .iter()
        .zip(rates)
        .enumerate()
        .map(|(i, (&(time, forecast, population), mut r))| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            r.sort_by(f64::total_cmp);
            let observed_rate =
                (!forecast).then(|| RATE_UNIT * data.counts()[i] as f64 / data.populations()[i]);
            TrendPoint {
                time,
                forecast,
                population,
                observed_rate,
                mean,
                lower: quantile_sorted(&r, 0.025),
                upper: quantile_sorted(&r, 0.975),
                expected_count: mean * population / RATE_UNIT,
            }
        })
        .collect())
}

/// Fraction of draws with at least one active joinpoint located at or before `t`.
pub fn cumulative_change_prob(draws: &PosteriorDraws, t: f64) -> f64 {
    let total = draws.n_draws();
    if total == 0 {
        return f64::NAN;
    }
    let hits = draws
        .states()
        .filter(|s| s.tau.iter().zip(&s.delta).any(|(&tau, &d)| d && tau <= t))
        .count();
    hits as f64 / total as f64
}

/// Cumulative change probability on `t1, t1 + step, ..., tn`.
pub fn cumulative_curve(draws: &PosteriorDraws, grid: &TimeGrid, step: f64) -> Vec<(f64, f64)> {
    // Earliest active location per draw; the curve is its empirical CDF.
    let mut firsts: Vec<f64> = draws
        .states()
        .filter_map(|s| {
            s.tau
                .iter()
                .zip(&s.delta)
                .filter(|(_, &d)| d)
                .map(|(&t, _)| t)
                .next()
        })
        .collect();
    firsts.sort_by(f64::total_cmp);
    let total = draws.n_draws().max(1) as f64;
    let n_steps = ((grid.last() - grid.first()) / step).round() as usize;
    (0..=n_steps)
        .map(|k| {
            let t = if k == n_steps {
                grid.last()
            } else {
                grid.first() + k as f64 * step
            };
            let count = firsts.partition_point(|&x| x <= t);
            (t, count as f64 / total)
        })
        .collect()
}

/// Fixed-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], start: f64, end: f64, width: f64) -> Self {
        let bins = ((end - start) / width).ceil().max(1.0) as usize;
        let mut counts = vec![0; bins];
        for &v in values {
            let b = ((v - start) / width).floor();
            if b >= 0.0 {
                let b = (b as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Self { start, width, counts }
    }

    /// Index of the fullest bin (first on ties).
    pub fn mode_bin(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        (max > 0).then(|| self.counts.iter().position(|&c| c == max).unwrap())
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.width
    }
}

/// Active locations of draws with exactly `k` joinpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLocations {
    pub k: usize,
    /// Ordered active locations of each qualifying draw.
    pub samples: Vec<Vec<f64>>,
    /// One histogram per rank, 1-year bins on integer boundaries.
    pub marginals: Vec<Histogram>,
    /// Set when fewer than `MIN_CONDITIONAL_DRAWS` draws qualify.
    pub insufficient: bool,
}

impl ConditionalLocations {
    /// Equal-tailed interval of the rank-`r` location.
    pub fn interval(&self, rank: usize, level: f64) -> Option<(f64, f64)> {
        if self.samples.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = self.samples.iter().map(|s| s[rank]).collect();
        v.sort_by(f64::total_cmp);
        let a = 0.5 * (1.0 - level);
        Some((quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a)))
    }
}

pub fn conditional_location_density(
    draws: &PosteriorDraws,
    grid: &TimeGrid,
    k: usize,
) -> Result<ConditionalLocations> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "conditional locations need at least one joinpoint".into(),
        ));
    }
    let samples: Vec<Vec<f64>> = draws
        .states()
        .filter(|s| s.active_count() == k)
        .map(|s| {
            s.tau
                .iter()
                .zip(&s.delta)
                .filter(|(_, &d)| d)
                .map(|(&t, _)| t)
                .collect()
        })
        .collect();
    let start = grid.first().floor();
    let end = grid.last().ceil();
    let marginals = (0..k)
        .map(|r| {
            let v: Vec<f64> = samples.iter().map(|s| s[r]).collect();
            Histogram::new(&v, start, end, 1.0)
        })
        .collect();
    Ok(ConditionalLocations {
        k,
        insufficient: samples.len() < MIN_CONDITIONAL_DRAWS,
        samples,
        marginals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParameterSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDraws);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            sd,
            median: quantile_sorted(&sorted, 0.5),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

fn scalar_accessor(name: &str) -> Result<fn(&ModelState) -> f64> {
    match name {
        "alpha" => Ok(|s| s.alpha),
        "beta0" => Ok(|s| s.beta0),
        "gamma" => Ok(|s| s.gamma),
        other => Err(Error::UnknownParameter(other.to_string())),
    }
}

/// Merged-chain summary of `alpha`, `beta0` or `gamma`.
pub fn parameter_summary(draws: &PosteriorDraws, name: &str) -> Result<ParameterSummary> {
    let f = scalar_accessor(name)?;
    let values: Vec<f64> = draws.states().map(f).collect();
    ParameterSummary::from_values(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub alpha: ScalarDiagnostics,
    pub beta0: ScalarDiagnostics,
    pub gamma: ScalarDiagnostics,
    pub n_joinpoints: ScalarDiagnostics,
    pub accept_alpha_beta0: f64,
    pub accept_beta: Vec<f64>,
    pub accept_tau_walk: Vec<f64>,
    pub accept_tau_slice: Vec<f64>,
}

pub fn diagnostics(draws: &PosteriorDraws) -> Diagnostics {
    let acc = draws.acceptance();
    Diagnostics {
        alpha: diagnose(&draws.per_chain(|s| s.alpha)),
        beta0: diagnose(&draws.per_chain(|s| s.beta0)),
        gamma: diagnose(&draws.per_chain(|s| s.gamma)),
        n_joinpoints: diagnose(&draws.per_chain(|s| s.active_count() as f64)),
        accept_alpha_beta0: acc.alpha_beta0.rate(),
        accept_beta: acc.beta.iter().map(|a| a.rate()).collect(),
        accept_tau_walk: acc.tau_walk.iter().map(|a| a.rate()).collect(),
        accept_tau_slice: acc.tau_slice.iter().map(|a| a.rate()).collect(),
    }
}

/// Every summary of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub provenance: String,
    pub prior: String,
    pub jstar: usize,
    pub gap: f64,
    pub n_chains: usize,
    pub n_draws: usize,
    pub prior_only: bool,
    /// Posterior probability of `0..=jstar` joinpoints.
    pub joinpoint_pmf: Vec<f64>,
    pub trend: Vec<TrendPoint>,
    pub cumulative_change: Vec<(f64, f64)>,
    pub alpha: ParameterSummary,
    pub beta0: ParameterSummary,
    pub gamma: ParameterSummary,
    pub conditional_locations: Vec<ConditionalLocations>,
    pub diagnostics: Diagnostics,
}

/// Step of the cumulative change-probability curve, in years.
pub const CUMULATIVE_STEP: f64 = 0.25;

pub fn build_report(
    draws: &PosteriorDraws,
    data: &SeriesData,
    horizon: usize,
    populations: Option<&ForecastPopulations>,
    provenance: String,
) -> Result<FitReport> {
    let conditional_locations = (1..=draws.jstar())
        .map(|k| conditional_location_density(draws, data.grid(), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitReport {
        provenance,
        prior: draws.fit.prior.name().to_string(),
        jstar: draws.jstar(),
        gap: draws.fit.gap,
        n_chains: draws.chains.len(),
        n_draws: draws.n_draws(),
        prior_only: draws.sampler.prior_only,
        joinpoint_pmf: joinpoint_count_pmf(draws)?,
        trend: averaged_trend(draws, data, horizon, populations)?,
        cumulative_change: cumulative_curve(draws, data.grid(), CUMULATIVE_STEP),
        alpha: parameter_summary(draws, "alpha")?,
        beta0: parameter_summary(draws, "beta0")?,
        gamma: parameter_summary(draws, "gamma")?,
        conditional_locations,
        diagnostics: diagnostics(draws),
    })
}
