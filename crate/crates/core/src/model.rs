//! The encompassing Poisson model and its prior.
//!
//! ```text
//! Y_i ~ Poisson(mu_i)
//! log mu_i = log P_i + alpha + beta0 (t_i - tbar) + sum_j delta_j beta_j B_{tau_j}(t_i)
//! ```
//!
//! Prior: flat on `(alpha, beta0)`, flat on `tau` over the ordered-gap region,
//! `beta | gamma ~ N(0, gamma * Sigma)` with `gamma ~ InvGamma(1/2, 1/2)`, and
//! one of two priors over the indicator vector `delta`. The scale matrix is
//!
//! ```text
//! Sigma = n * (D G D + diag(G - D G D))^{-1},   G = B' W B,   D = diag(delta)
//! w_i   = P_i exp(alpha + beta0 (t_i - tbar))
//! ```
//!
//! so the active block of `beta` gets a unit-information prior while every
//! inactive coordinate gets an independent normal pseudoprior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::{design_columns, TimeGrid};
use crate::error::{Error, Result};

/// Largest |log mu| accepted before the likelihood is declared non-finite.
pub const LOG_MEAN_LIMIT: f64 = 700.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed counts and populations on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    grid: TimeGrid,
    counts: Vec<u64>,
    populations: Vec<f64>,
    log_populations: Vec<f64>,
    log_factorials: Vec<f64>,
}

impl SeriesData {
    pub fn new(grid: TimeGrid, counts: Vec<u64>, populations: Vec<f64>) -> Result<Self> {
        if counts.len() != grid.len() || populations.len() != grid.len() {
            return Err(Error::InvalidData(format!(
                "{} times, {} counts, {} populations",
                grid.len(),
                counts.len(),
                populations.len()
            )));
        }
        if let Some(p) = populations.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidData(format!(
                "population must be positive (got {p})"
            )));
        }
        let log_populations = populations.iter().map(|p| p.ln()).collect();
        let log_factorials = counts.iter().map(|&y| ln_gamma(y as f64 + 1.0)).collect();
        Ok(Self {
            grid,
            counts,
            populations,
            log_populations,
            log_factorials,
        })
    }

    pub fn from_years(years: &[f64], counts: Vec<u64>, populations: Vec<f64>) -> Result<Self> {
        Self::new(TimeGrid::new(years.to_vec())?, counts, populations)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn log_populations(&self) -> &[f64] {
        &self.log_populations
    }

    /// `log(y_i!)` for each count.
    pub fn log_factorials(&self) -> &[f64] {
        &self.log_factorials
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `log(ΣY / ΣP)`, the intercept-only maximum likelihood estimate.
    pub fn crude_log_rate(&self) -> f64 {
        let y: f64 = self.counts.iter().map(|&y| y as f64).sum();
        let p: f64 = self.populations.iter().sum();
        y.ln() - p.ln()
    }
}

/// Prior over the inclusion indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    /// Equal mass on every number of joinpoints, split evenly within a count.
    Bayes1,
    /// Prior expected number of joinpoints equal to one whatever `jstar` is.
    Bayes2,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Bayes1 => "bayes1",
            PriorKind::Bayes2 => "bayes2",
        }
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bayes1" => Ok(PriorKind::Bayes1),
            "bayes2" => Ok(PriorKind::Bayes2),
            other => Err(Error::InvalidConfig(format!("unknown prior `{other}`"))),
        }
    }
}

/// Model-level settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Maximum number of joinpoints.
    pub jstar: usize,
    /// Minimum distance between consecutive joinpoints and from the ends.
    pub gap: f64,
    pub prior: PriorKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            jstar: 5,
            gap: 2.0,
            prior: PriorKind::Bayes1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.jstar < 1 {
            return Err(Error::InvalidConfig("jstar must be at least 1".into()));
        }
        if self.prior == PriorKind::Bayes2 && self.jstar < 2 {
            return Err(Error::DegeneratePrior(self.jstar));
        }
        if !(self.gap > 0.0 && self.gap.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gap must be positive (got {})",
                self.gap
            )));
        }
        if !omega_nonempty(grid, self.jstar, self.gap) {
            return Err(Error::InvalidConfig(format!(
                "no room for {} joinpoints {} apart inside [{}, {}]",
                self.jstar,
                self.gap,
                grid.first(),
                grid.last()
            )));
        }
        Ok(())
    }
}

/// One full state of the encompassing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub alpha: f64,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub delta: Vec<bool>,
    pub gamma: f64,
}

impl ModelState {
    /// Null model with all locations equally spaced in the admissible region.
    pub fn null(data: &SeriesData, jstar: usize) -> Self {
        Self {
            alpha: data.crude_log_rate(),
            beta0: 0.0,
            beta: vec![0.0; jstar],
            tau: equally_spaced_taus(data.grid(), jstar),
            delta: vec![false; jstar],
            gamma: 1.0,
        }
    }

    pub fn jstar(&self) -> usize {
        self.beta.len()
    }

    pub fn active_count(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }
}

/// True iff consecutive points of `t1, tau_1, ..., tau_J, tn` are more than `d` apart.
pub fn in_omega(tau: &[f64], grid: &TimeGrid, gap: f64) -> bool {
    let mut prev = grid.first();
    for &t in tau {
        if !(prev + gap < t) {
            return false;
        }
        prev = t;
    }
    prev + gap < grid.last()
}

pub fn omega_nonempty(grid: &TimeGrid, jstar: usize, gap: f64) -> bool {
    grid.first() + (jstar as f64 + 1.0) * gap < grid.last()
}

/// `tau_k = t1 + k (tn - t1) / (J + 1)`, inside the region whenever it is nonempty.
pub fn equally_spaced_taus(grid: &TimeGrid, jstar: usize) -> Vec<f64> {
    let step = (grid.last() - grid.first()) / (jstar as f64 + 1.0);
    (1..=jstar).map(|k| grid.first() + k as f64 * step).collect()
}

/// Open interval available to `tau[j]` with its neighbours held fixed.
pub fn omega_slice(tau: &[f64], j: usize, grid: &TimeGrid, gap: f64) -> (f64, f64) {
    let lo = if j == 0 { grid.first() } else { tau[j - 1] } + gap;
    let hi = if j + 1 == tau.len() { grid.last() } else { tau[j + 1] } - gap;
    (lo, hi)
}

/// `P_i exp(alpha + beta0 (t_i - tbar))`.
pub fn fisher_weights(data: &SeriesData, alpha: f64, beta0: f64) -> Vec<f64> {
    let tbar = data.grid().mean();
    data.grid()
        .times()
        .iter()
        .zip(data.populations())
        .map(|(t, p)| p * (alpha + beta0 * (t - tbar)).exp())
        .collect()
}

/// `B' W B` for an `n x J` column matrix and diagonal weights.
pub fn gram(columns: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let j = columns.ncols();
    DMatrix::from_fn(j, j, |a, b| {
        columns
            .column(a)
            .iter()
            .zip(columns.column(b).iter())
            .zip(weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    })
}

/// `D G D + diag(G - D G D)`: active block of `G`, inactive coordinates
/// reduced to their diagonal. Equal to `n Sigma^{-1}`.
pub fn scale_precision(gram: &DMatrix<f64>, delta: &[bool]) -> DMatrix<f64> {
    let j = gram.nrows();
    DMatrix::from_fn(j, j, |a, b| {
        if a == b || (delta[a] && delta[b]) {
            gram[(a, b)]
        } else {
            0.0
        }
    })
}

pub(crate) fn rcond_1(m: &DMatrix<f64>) -> Option<f64> {
    let inv = m.clone().try_inverse()?;
    let norm = |x: &DMatrix<f64>| {
        x.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    Some(1.0 / (norm(m) * norm(&inv)))
}

/// Linear predictor `log mu_i` for every observation, given evaluated break-point columns.
pub fn linear_predictor(
    data: &SeriesData,
    alpha: f64,
    beta0: f64,
    beta: &[f64],
    delta: &[bool],
    columns: &DMatrix<f64>,
) -> Vec<f64> {
    let tbar = data.grid().mean();
    let mut eta: Vec<f64> = data
        .grid()
        .times()
        .iter()
        .zip(data.log_populations())
        .map(|(t, lp)| lp + alpha + beta0 * (t - tbar))
        .collect();
    for (j, (&b, &d)) in beta.iter().zip(delta).enumerate() {
        if d {
            for (e, x) in eta.iter_mut().zip(columns.column(j).iter()) {
                *e += b * x;
            }
        }
    }
    eta
}

/// Poisson log-likelihood from the linear predictor.
pub fn poisson_log_likelihood(data: &SeriesData, eta: &[f64]) -> Result<f64> {
    let mut ll = 0.0;
    for ((&e, &y), lf) in eta.iter().zip(data.counts()).zip(&data.log_factorials) {
        if !(e.abs() <= LOG_MEAN_LIMIT) {
            return Err(Error::NonFinite(format!("log mean {e}")));
        }
        ll += y as f64 * e - e.exp() - lf;
    }
    Ok(ll)
}

fn columns_for(state: &ModelState, data: &SeriesData) -> Result<DMatrix<f64>> {
    design_columns(data.grid(), &state.tau)
}

fn active_columns_for(state: &ModelState, data: &SeriesData) -> Result<DMatrix<f64>> {
    // Inactive columns are never read by `linear_predictor`; zero them to avoid
    // solving for locations that do not enter the mean.
    let n = data.len();
    let mut out = DMatrix::zeros(n, state.jstar());
    for (j, (&tau, &d)) in state.tau.iter().zip(&state.delta).enumerate() {
        if d {
            let col = crate::basis::breakpoint_column(data.grid(), tau)?;
            out.column_mut(j).copy_from_slice(&col);
        }
    }
    Ok(out)
}

/// `log mu_i` at observation `i`.
pub fn log_mean(state: &ModelState, data: &SeriesData, i: usize) -> Result<f64> {
    Ok(log_means(state, data)?[i])
}

pub fn log_means(state: &ModelState, data: &SeriesData) -> Result<Vec<f64>> {
    let cols = active_columns_for(state, data)?;
    Ok(linear_predictor(
        data,
        state.alpha,
        state.beta0,
        &state.beta,
        &state.delta,
        &cols,
    ))
}

pub fn log_likelihood(state: &ModelState, data: &SeriesData) -> Result<f64> {
    poisson_log_likelihood(data, &log_means(state, data)?)
}

/// `B' W B` at the state's locations and `(alpha, beta0)`.
pub fn state_gram(state: &ModelState, data: &SeriesData) -> Result<DMatrix<f64>> {
    let cols = columns_for(state, data)?;
    Ok(gram(&cols, &fisher_weights(data, state.alpha, state.beta0)))
}

/// The scale matrix `Sigma` (before multiplication by `gamma`).
pub fn fisher_scale_matrix(state: &ModelState, data: &SeriesData) -> Result<DMatrix<f64>> {
    let g = state_gram(state, data)?;
    let m = scale_precision(&g, &state.delta);
    match rcond_1(&m) {
        Some(rc) if rc >= crate::basis::RCOND_THRESHOLD => {}
        Some(rc) => {
            return Err(Error::SingularSystem(format!(
                "scale matrix reciprocal condition number {rc:e}"
            )))
        }
        None => return Err(Error::SingularSystem("scale matrix not invertible".into())),
    }
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("scale matrix not invertible".into()))?;
    let sigma = inv * data.len() as f64;
    // Symmetrise away rounding noise.
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// Log density of `beta ~ N(0, gamma Sigma)` evaluated through the factorised
/// form: a normal on the active block with covariance `gamma n G_aa^{-1}`
/// times independent normals `N(0, gamma n / G_jj)` on inactive coordinates.
pub fn log_prior_beta_from_gram(
    beta: &[f64],
    delta: &[bool],
    gram: &DMatrix<f64>,
    n: usize,
    gamma: f64,
) -> Result<f64> {
    let jstar = beta.len();
    let n = n as f64;
    let active: Vec<usize> = (0..jstar).filter(|&j| delta[j]).collect();

    let mut log_det = 0.0;
    let mut quad = 0.0;
    for j in (0..jstar).filter(|&j| !delta[j]) {
        let g = gram[(j, j)];
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::SingularSystem(format!("pseudoprior precision {g}")));
        }
        log_det += g.ln();
        quad += g * beta[j] * beta[j];
    }
    if !active.is_empty() {
        let k = active.len();
        let block = DMatrix::from_fn(k, k, |a, b| gram[(active[a], active[b])]);
        let chol = block
            .cholesky()
            .ok_or_else(|| Error::SingularSystem("active block not positive definite".into()))?;
        let l = chol.l();
        for i in 0..k {
            log_det += 2.0 * l[(i, i)].ln();
        }
        let b = DVector::from_iterator(k, active.iter().map(|&j| beta[j]));
        // b' G b = |L' b|^2
        quad += (l.transpose() * b).norm_squared();
    }
    let jf = jstar as f64;
    let value =
        -0.5 * jf * (LN_2PI + gamma.ln() + n.ln()) + 0.5 * log_det - quad / (2.0 * gamma * n);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("log prior of beta: {value}")))
    }
}

/// `beta' Sigma^{-1} beta` from the gram matrix.
pub fn sigma_quadratic_form(beta: &[f64], delta: &[bool], gram: &DMatrix<f64>, n: usize) -> f64 {
    let mut q = 0.0;
    for a in 0..beta.len() {
        for b in 0..beta.len() {
            if a == b || (delta[a] && delta[b]) {
                q += beta[a] * gram[(a, b)] * beta[b];
            }
        }
    }
    q / n as f64
}

pub fn log_prior_beta(state: &ModelState, data: &SeriesData) -> Result<f64> {
    let g = state_gram(state, data)?;
    log_prior_beta_from_gram(&state.beta, &state.delta, &g, data.len(), state.gamma)
}

/// Inverse-gamma(1/2, 1/2) log density of the mixing scale.
pub fn log_prior_gamma(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::NonPositive(gamma));
    }
    // a ln b - ln Γ(a) - (a + 1) ln γ - b / γ with a = b = 1/2; ln Γ(1/2) = ln √π.
    let half_ln_half = 0.5 * 0.5f64.ln();
    let ln_gamma_half = 0.5 * std::f64::consts::PI.ln();
    Ok(half_ln_half - ln_gamma_half - 1.5 * gamma.ln() - 0.5 / gamma)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64 / i as f64).ln())
        .sum()
}

/// `log[(J+1)^{-1} C(J, k)^{-1}]`, `k` the number of active indicators.
pub fn log_prior_model_bayes1(delta: &[bool]) -> f64 {
    let jstar = delta.len();
    let k = delta.iter().filter(|&&d| d).count();
    -((jstar + 1) as f64).ln() - ln_binomial(jstar, k)
}

/// `log[J^{-J} (J-1)^{J-k}]`.
pub fn log_prior_model_bayes2(delta: &[bool]) -> Result<f64> {
    let jstar = delta.len();
    if jstar < 2 {
        return Err(Error::DegeneratePrior(jstar));
    }
    let k = delta.iter().filter(|&&d| d).count();
    let j = jstar as f64;
    Ok(-j * j.ln() + (jstar - k) as f64 * (j - 1.0).ln())
}

pub fn log_prior_model(delta: &[bool], prior: PriorKind) -> Result<f64> {
    match prior {
        PriorKind::Bayes1 => Ok(log_prior_model_bayes1(delta)),
        PriorKind::Bayes2 => log_prior_model_bayes2(delta),
    }
}

/// Additive pieces of the unnormalised log posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorTerms {
    pub log_likelihood: f64,
    pub log_prior_beta: f64,
    pub log_prior_gamma: f64,
    pub log_prior_model: f64,
}

impl PosteriorTerms {
    pub fn total(&self) -> f64 {
        self.log_likelihood + self.log_prior_beta + self.log_prior_gamma + self.log_prior_model
    }
}

pub fn log_posterior_terms(
    state: &ModelState,
    data: &SeriesData,
    config: &FitConfig,
) -> Result<PosteriorTerms> {
    if !in_omega(&state.tau, data.grid(), config.gap) {
        return Err(Error::OutsideOmega(state.tau.clone()));
    }
    let cols = columns_for(state, data)?;
    let eta = linear_predictor(
        data,
        state.alpha,
        state.beta0,
        &state.beta,
        &state.delta,
        &cols,
    );
    let g = gram(&cols, &fisher_weights(data, state.alpha, state.beta0));
    Ok(PosteriorTerms {
        log_likelihood: poisson_log_likelihood(data, &eta)?,
        log_prior_beta: log_prior_beta_from_gram(
            &state.beta,
            &state.delta,
            &g,
            data.len(),
            state.gamma,
        )?,
        log_prior_gamma: log_prior_gamma(state.gamma)?,
        log_prior_model: log_prior_model(&state.delta, config.prior)?,
    })
}

/// Unnormalised log posterior. Flat priors on `(alpha, beta0)` and on the
/// admissible locations contribute constants and are dropped.
pub fn log_posterior_unnorm(
    state: &ModelState,
    data: &SeriesData,
    config: &FitConfig,
) -> Result<f64> {
    Ok(log_posterior_terms(state, data, config)?.total())
}
