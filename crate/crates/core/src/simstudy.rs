//! Synthetic series and a replicate runner comparing the two Bayesian priors
//! with the BIC baseline.
//!
//! Scenarios are read from TOML, one `[[scenario]]` table each, in one of two
//! forms:
//!
//! ```toml
//! [[scenario]]
//! name = "single"
//! start = 1980
//! n = 28
//! population = 285000
//! mean_deaths = 62.4       # average expected count per year
//! slopes = [0.02, -0.04]   # log-rate slope of each segment
//! knots = [1994]
//!
//! [[scenario]]
//! name = "direct"
//! years = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
//! population = [1e5, 1e5, 1e5, 1e5, 1e5, 1e5, 1e5, 1e5, 1e5, 1e5]
//! alpha = -7.0
//! beta0 = 0.01
//! breaks = [[5.5, 0.3]]    # (tau, beta) pairs of the model's own basis
//! ```
//!
//! Replicate `r` of scenario `s` draws its data with seed
//! `replicate_seed(master, s, r)`; Bayesian fits of that replicate use
//! `replicate_seed(data_seed, 0, 1)` for the sampler.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::baseline::{select_bic, DEFAULT_GRID_STEP};
use crate::basis::{breakpoint_column, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{in_omega, FitConfig, PriorKind, SeriesData};
use crate::sampler::{run_chains, SamplerConfig};
use crate::summaries::{conditional_location_density, joinpoint_count_pmf};

/// A data-generating process in the model's own parameterisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub years: Vec<f64>,
    pub populations: Vec<f64>,
    pub alpha: f64,
    pub beta0: f64,
    /// `(tau, beta)` of every true joinpoint, ordered by `tau`.
    pub breaks: Vec<(f64, f64)>,
    pub gap: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Populations {
    Constant(f64),
    PerYear(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSpec {
    name: String,
    years: Option<Vec<f64>>,
    start: Option<f64>,
    n: Option<usize>,
    population: Populations,
    gap: Option<f64>,
    alpha: Option<f64>,
    beta0: Option<f64>,
    breaks: Option<Vec<(f64, f64)>>,
    mean_deaths: Option<f64>,
    slopes: Option<Vec<f64>>,
    knots: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: Vec<ScenarioSpec>,
}

fn invalid(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidScenario(format!("{name}: {msg}"))
}

impl ScenarioSpec {
    fn resolve(self) -> Result<Scenario> {
        let name = self.name.clone();
        let years = match (&self.years, self.start, self.n) {
            (Some(y), None, None) => y.clone(),
            (None, Some(start), Some(n)) => (0..n).map(|i| start + i as f64).collect(),
            _ => return Err(invalid(&name, "give either `years` or both `start` and `n`")),
        };
        let populations = match &self.population {
            Populations::Constant(p) => vec![*p; years.len()],
            Populations::PerYear(p) => p.clone(),
        };
        let gap = self.gap.unwrap_or(2.0);
        let direct = self.alpha.is_some() || self.beta0.is_some() || self.breaks.is_some();
        let trend = self.mean_deaths.is_some() || self.slopes.is_some() || self.knots.is_some();
        match (direct, trend) {
            (true, false) => {
                let alpha = self.alpha.ok_or_else(|| invalid(&name, "missing `alpha`"))?;
                Scenario::new(
                    name,
                    years,
                    populations,
                    alpha,
                    self.beta0.unwrap_or(0.0),
                    self.breaks.unwrap_or_default(),
                    gap,
                )
            }
            (false, true) => {
                let mean = self
                    .mean_deaths
                    .ok_or_else(|| invalid(&name, "missing `mean_deaths`"))?;
                let slopes = self.slopes.unwrap_or_else(|| vec![0.0]);
                Scenario::from_trend(
                    name,
                    years,
                    populations,
                    mean,
                    &slopes,
                    &self.knots.unwrap_or_default(),
                    gap,
                )
            }
            _ => Err(invalid(
                &name,
                "use either alpha/beta0/breaks or mean_deaths/slopes/knots",
            )),
        }
    }
}

impl Scenario {
    pub fn new(
        name: String,
        years: Vec<f64>,
        populations: Vec<f64>,
        alpha: f64,
        beta0: f64,
        breaks: Vec<(f64, f64)>,
        gap: f64,
    ) -> Result<Self> {
        let s = Self {
            name,
            years,
            populations,
            alpha,
            beta0,
            breaks,
            gap,
        };
        s.validate()?;
        Ok(s)
    }

    /// Piecewise log-linear trend with the given segment slopes and knots,
    /// scaled so the expected counts average `mean_deaths` per year.
    pub fn from_trend(
        name: String,
        years: Vec<f64>,
        populations: Vec<f64>,
        mean_deaths: f64,
        slopes: &[f64],
        knots: &[f64],
        gap: f64,
    ) -> Result<Self> {
        if slopes.len() != knots.len() + 1 {
            return Err(invalid(&name, "need one more slope than knots"));
        }
        if !(mean_deaths > 0.0) {
            return Err(invalid(&name, "mean_deaths must be positive"));
        }
        let grid = TimeGrid::new(years.clone()).map_err(|e| invalid(&name, e))?;
        if populations.len() != grid.len() {
            return Err(invalid(&name, "population length differs from years"));
        }
        if !in_omega(knots, &grid, gap) {
            return Err(invalid(&name, "knots violate the admissible region"));
        }
        let tbar = grid.mean();
        let f = DVector::from_iterator(
            grid.len(),
            grid.times().iter().map(|&t| {
                let mut v = slopes[0] * (t - tbar);
                for (j, &k) in knots.iter().enumerate() {
                    v += (slopes[j + 1] - slopes[j]) * (t - k).max(0.0);
                }
                v
            }),
        );
        let mut x = DMatrix::zeros(grid.len(), 2 + knots.len());
        x.column_mut(0).fill(1.0);
        x.column_mut(1).copy_from_slice(&grid.centred());
        for (j, &k) in knots.iter().enumerate() {
            x.column_mut(2 + j)
                .copy_from_slice(&breakpoint_column(&grid, k).map_err(|e| invalid(&name, e))?);
        }
        let coef = x
            .clone()
            .svd(true, true)
            .solve(&f, 1e-12)
            .map_err(|e| invalid(&name, e))?;
        let resid = (&x * &coef - &f).amax();
        if resid > 1e-8 {
            return Err(invalid(&name, format!("trend not representable ({resid:e})")));
        }
        let total: f64 = populations
            .iter()
            .zip(f.iter())
            .map(|(p, fi)| p * fi.exp())
            .sum();
        let level = (mean_deaths * grid.len() as f64 / total).ln();
        let breaks = knots
            .iter()
            .enumerate()
            .map(|(j, &k)| (k, coef[2 + j]))
            .collect();
        Self::new(name, years, populations, level + coef[0], coef[1], breaks, gap)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = TimeGrid::new(self.years.clone()).map_err(|e| invalid(&self.name, e))?;
        if self.populations.len() != grid.len()
            || self.populations.iter().any(|p| !(p.is_finite() && *p > 0.0))
        {
            return Err(invalid(&self.name, "populations must be positive, one per year"));
        }
        let taus: Vec<f64> = self.breaks.iter().map(|b| b.0).collect();
        if !in_omega(&taus, &grid, self.gap) {
            return Err(invalid(&self.name, "true locations violate the admissible region"));
        }
        if !(self.alpha.is_finite() && self.beta0.is_finite())
            || self.breaks.iter().any(|b| !b.1.is_finite())
        {
            return Err(invalid(&self.name, "non-finite coefficient"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.years.clone())
    }

    pub fn true_taus(&self) -> Vec<f64> {
        self.breaks.iter().map(|b| b.0).collect()
    }

    /// Expected counts `mu_i`.
    pub fn expected_counts(&self) -> Result<Vec<f64>> {
        let grid = self.grid()?;
        let tbar = grid.mean();
        let mut eta: Vec<f64> = grid
            .times()
            .iter()
            .zip(&self.populations)
            .map(|(&t, p)| p.ln() + self.alpha + self.beta0 * (t - tbar))
            .collect();
        for &(tau, beta) in &self.breaks {
            for (e, b) in eta.iter_mut().zip(breakpoint_column(&grid, tau)?) {
                *e += beta * b;
            }
        }
        Ok(eta.into_iter().map(f64::exp).collect())
    }
}

/// Parse a TOML scenario file.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
    if file.scenario.is_empty() {
        return Err(Error::InvalidScenario("no scenarios defined".into()));
    }
    file.scenario.into_iter().map(ScenarioSpec::resolve).collect()
}

/// The bundled scenarios: 1980 to 2007, 285,000 person-years a year and
/// 62.4 expected deaths a year on average.
pub const DEFAULT_SCENARIOS: &str = r#"[[scenario]]
name = "null"
start = 1980
n = 28
population = 285000
mean_deaths = 62.4
slopes = [0.0]

[[scenario]]
name = "single"
start = 1980
n = 28
population = 285000
mean_deaths = 62.4
slopes = [0.02, -0.04]
knots = [1994]

[[scenario]]
name = "double"
start = 1980
n = 28
population = 285000
mean_deaths = 62.4
slopes = [0.04, -0.04, 0.04]
knots = [1989, 1999]
"#;

pub fn default_scenarios() -> Vec<Scenario> {
    parse_scenarios(DEFAULT_SCENARIOS).expect("bundled scenarios are valid")
}

/// Poisson draw of one series.
pub fn generate_series(scenario: &Scenario, seed: u64) -> Result<SeriesData> {
    scenario.validate()?;
    let mu = scenario.expected_counts()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = mu
        .iter()
        .map(|&m| {
            Poisson::new(m)
                .map(|d| d.sample(&mut rng) as u64)
                .map_err(|e| invalid(&scenario.name, e))
        })
        .collect::<Result<Vec<_>>>()?;
    SeriesData::new(scenario.grid()?, counts, scenario.populations.clone())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(master) ^ scenario) ^ replicate)`.
pub fn replicate_seed(master: u64, scenario: usize, replicate: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ scenario as u64) ^ replicate as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bayes1,
    Bayes2,
    Bic,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Bayes1, Method::Bayes2, Method::Bic];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bayes1 => "bayes1",
            Method::Bayes2 => "bayes2",
            Method::Bic => "bic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub replicates: usize,
    pub master_seed: u64,
    pub jstar: usize,
    pub gap: f64,
    pub sampler: SamplerConfig,
    pub jmax: usize,
    pub grid_step: f64,
    pub methods: Vec<Method>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            replicates: 10,
            master_seed: 1,
            jstar: 5,
            gap: 2.0,
            sampler: SamplerConfig::default(),
            jmax: 3,
            grid_step: DEFAULT_GRID_STEP,
            methods: Method::ALL.to_vec(),
        }
    }
}

/// One method applied to one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub scenario: String,
    pub replicate: usize,
    pub method: Method,
    pub data_seed: u64,
    /// Modal joinpoint count (Bayesian) or the BIC choice.
    pub selected_j: Option<usize>,
    /// Posterior joinpoint-count pmf; empty for BIC.
    pub pmf: Vec<f64>,
    /// Whether the 95% intervals of the ordered locations, given the true
    /// count, cover every true location. `None` for BIC or without breaks.
    pub covered: Option<bool>,
    pub error: Option<String>,
    pub seconds: f64,
}

fn modal_count(pmf: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in pmf.iter().enumerate() {
        if p > pmf[best] {
            best = k;
        }
    }
    best
}

fn run_method(
    scenario: &Scenario,
    data: &SeriesData,
    method: Method,
    config: &StudyConfig,
    data_seed: u64,
) -> Result<(Option<usize>, Vec<f64>, Option<bool>)> {
    let prior = match method {
        Method::Bic => {
            let sel = select_bic(data, config.jmax, scenario.gap, config.grid_step)?;
            return Ok((Some(sel.chosen_row().j), vec![], None));
        }
        Method::Bayes1 => PriorKind::Bayes1,
        Method::Bayes2 => PriorKind::Bayes2,
    };
    let fit = FitConfig {
        jstar: config.jstar,
        gap: scenario.gap,
        prior,
    };
    let sampler = SamplerConfig {
        seed: replicate_seed(data_seed, 0, 1),
        ..config.sampler
    };
    let draws = run_chains(data, &fit, &sampler)?;
    let pmf = joinpoint_count_pmf(&draws)?;
    let truth = scenario.true_taus();
    let covered = if truth.is_empty() || truth.len() > config.jstar {
        None
    } else {
        let cond = conditional_location_density(&draws, data.grid(), truth.len())?;
        Some(truth.iter().enumerate().all(|(r, &t)| {
            cond.interval(r, 0.95)
                .is_some_and(|(lo, hi)| lo <= t && t <= hi)
        }))
    };
    Ok((Some(modal_count(&pmf)), pmf, covered))
}

fn run_replicate(
    scenarios: &[Scenario],
    config: &StudyConfig,
    s: usize,
    r: usize,
) -> Vec<ReplicateOutcome> {
    let scenario = &scenarios[s];
    let data_seed = replicate_seed(config.master_seed, s, r);
    let data = generate_series(scenario, data_seed);
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let result = data
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|d| run_method(scenario, d, method, config, data_seed));
            let seconds = start.elapsed().as_secs_f64();
            let (selected_j, pmf, covered, error) = match result {
                Ok((j, pmf, c)) => (j, pmf, c, None),
                Err(e) => (None, vec![], None, Some(e.to_string())),
            };
            ReplicateOutcome {
                scenario: scenario.name.clone(),
                replicate: r,
                method,
                data_seed,
                selected_j,
                pmf,
                covered,
                error,
                seconds,
            }
        })
        .collect()
}

/// Run every method on every replicate of every scenario. Per-replicate
/// failures are recorded in the outcome, not propagated.
pub fn run_study(scenarios: &[Scenario], config: &StudyConfig) -> Result<Vec<ReplicateOutcome>> {
    if config.replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be at least 1".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    config.sampler.validate()?;
    for s in scenarios {
        s.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    let run = |&(s, r): &(usize, usize)| run_replicate(scenarios, config, s, r);
    #[cfg(feature = "parallel")]
    let per_job: Vec<Vec<ReplicateOutcome>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_job: Vec<Vec<ReplicateOutcome>> = jobs.iter().map(run).collect();
    Ok(per_job.into_iter().flatten().collect())
}

/// Aggregate over replicates of one scenario and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub scenario: String,
    pub method: Method,
    pub true_j: usize,
    pub replicates: usize,
    pub failures: usize,
    /// `selection_counts[j]` replicates selected `j` joinpoints.
    pub selection_counts: Vec<usize>,
    /// `(covered, assessed)` replicates.
    pub coverage: Option<(usize, usize)>,
    pub mean_seconds: f64,
}

impl MethodSummary {
    pub fn selection_rate(&self, j: usize) -> f64 {
        self.selection_counts.get(j).copied().unwrap_or(0) as f64 / self.replicates as f64
    }
}

/// One summary per scenario and method, in input order.
pub fn summarize(
    scenarios: &[Scenario],
    config: &StudyConfig,
    outcomes: &[ReplicateOutcome],
) -> Vec<MethodSummary> {
    let width = config.jstar.max(config.jmax) + 1;
    let mut rows = Vec::new();
    for sc in scenarios {
        for &method in &config.methods {
            let mine: Vec<&ReplicateOutcome> = outcomes
                .iter()
                .filter(|o| o.scenario == sc.name && o.method == method)
                .collect();
            let mut selection_counts = vec![0; width];
            for j in mine.iter().filter_map(|o| o.selected_j) {
                selection_counts[j] += 1;
            }
            let assessed: Vec<bool> = mine.iter().filter_map(|o| o.covered).collect();
            rows.push(MethodSummary {
                scenario: sc.name.clone(),
                method,
                true_j: sc.breaks.len(),
                replicates: mine.len(),
                failures: mine.iter().filter(|o| o.error.is_some()).count(),
                selection_counts,
                coverage: (!assessed.is_empty())
                    .then(|| (assessed.iter().filter(|&&c| c).count(), assessed.len())),
                mean_seconds: mine.iter().map(|o| o.seconds).sum::<f64>() / mine.len().max(1) as f64,
            });
        }
    }
    rows
}

/// Plain-text table of the summaries (timings omitted).
pub fn summary_text(rows: &[MethodSummary]) -> String {
    let mut out = String::new();
    for row in rows {
        let sel: Vec<String> = row
            .selection_counts
            .iter()
            .enumerate()
            .map(|(j, c)| format!("J={j}:{c}"))
            .collect();
        let cov = match row.coverage {
            Some((c, n)) => format!("{c}/{n}"),
            None => "NA".into(),
        };
        out.push_str(&format!(
            "{:<10} {:<7} true J={} correct {}/{} [{}] tau coverage {} failures {}\n",
            row.scenario,
            row.method.name(),
            row.true_j,
            row.selection_counts.get(row.true_j).copied().unwrap_or(0),
            row.replicates,
            sel.join(" "),
            cov,
            row.failures
        ));
    }
    out
}
