//! Metropolis-within-Gibbs sampler over the encompassing model.
//!
//! Every sweep visits the blocks in a fixed order:
//!
//! 1. `gamma`: exact inverse-gamma draw.
//! 2. `delta_j`: exact two-point Gibbs draw for each indicator.
//! 3. `tau_j`: Metropolis, alternating a Gaussian random walk with a uniform
//!    draw over the slice left free by the neighbouring locations.
//! 4. `(alpha, beta0)`: joint random-walk Metropolis shaped by the null-model
//!    Fisher information.
//! 5. `beta_j`: random-walk Metropolis, one coordinate at a time.
//!
//! The inactive `beta_j` and `tau_j` keep moving under their pseudoprior and
//! flat prior, so an indicator that switches on finds a plausible value.
//! Proposal scales adapt by Robbins-Monro during the first `adapt_window`
//! iterations and are frozen afterwards.
//!
//! With `prior_only` set the likelihood is switched off and `(alpha, beta0)`
//! stay at their initial values (their flat prior is improper); the remaining
//! coordinates then sample the prior exactly, which is the basis of the
//! prior-recovery checks.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::basis::breakpoint_column;
use crate::error::{Error, Result};
use crate::model::{
    self, fisher_weights, gram, in_omega, linear_predictor, log_prior_beta_from_gram,
    log_prior_model, omega_slice, poisson_log_likelihood, sigma_quadratic_form, FitConfig,
    ModelState, SeriesData,
};

/// Run-length and adaptation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Total iterations per chain, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Leading iterations during which proposal scales adapt.
    pub adapt_window: usize,
    /// Acceptance rate the random-walk blocks adapt towards.
    pub target_accept: f64,
    /// Disable the likelihood (prior-recovery mode).
    pub prior_only: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iter: 50_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1,
            adapt_window: 5_000,
            target_accept: 0.3,
            prior_only: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::InvalidConfig("need at least one chain".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target acceptance must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }
}

/// Accepted and proposed counts for one Metropolis block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptCount {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptCount {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Post-burn-in acceptance ledger of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLedger {
    pub alpha_beta0: AcceptCount,
    pub beta: Vec<AcceptCount>,
    /// Random-walk moves of each location.
    pub tau_walk: Vec<AcceptCount>,
    /// Uniform slice moves of each location.
    pub tau_slice: Vec<AcceptCount>,
}

impl AcceptanceLedger {
    pub fn new(jstar: usize) -> Self {
        Self {
            alpha_beta0: AcceptCount::default(),
            beta: vec![AcceptCount::default(); jstar],
            tau_walk: vec![AcceptCount::default(); jstar],
            tau_slice: vec![AcceptCount::default(); jstar],
        }
    }

    fn merge(&mut self, other: &Self) {
        let add = |a: &mut AcceptCount, b: &AcceptCount| {
            a.accepted += b.accepted;
            a.proposed += b.proposed;
        };
        add(&mut self.alpha_beta0, &other.alpha_beta0);
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            add(a, b);
        }
        for (a, b) in self.tau_walk.iter_mut().zip(&other.tau_walk) {
            add(a, b);
        }
        for (a, b) in self.tau_slice.iter_mut().zip(&other.tau_slice) {
            add(a, b);
        }
    }
}

/// Thinned post-burn-in draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain: usize,
    /// Iteration index (0-based, burn-in included) of each stored draw.
    pub iters: Vec<usize>,
    pub states: Vec<ModelState>,
    pub acceptance: AcceptanceLedger,
}

/// Draws from every chain of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub fit: FitConfig,
    pub sampler: SamplerConfig,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn jstar(&self) -> usize {
        self.fit.jstar
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.states.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_draws() == 0
    }

    /// All stored states, chain by chain.
    pub fn states(&self) -> impl Iterator<Item = &ModelState> {
        self.chains.iter().flat_map(|c| c.states.iter())
    }

    /// One scalar per draw, split by chain.
    pub fn per_chain<F: Fn(&ModelState) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.states.iter().map(&f).collect())
            .collect()
    }

    pub fn acceptance(&self) -> AcceptanceLedger {
        let mut total = AcceptanceLedger::new(self.jstar());
        for c in &self.chains {
            total.merge(&c.acceptance);
        }
        total
    }
}

/// RNG for chain `index`: ChaCha8 seeded with `seed`, on stream `index`.
pub fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone)]
struct Scales {
    alpha_beta0: f64,
    // Cholesky factor of the inverse null-model Fisher information.
    alpha_beta0_shape: Matrix2<f64>,
    beta: Vec<f64>,
    tau: Vec<f64>,
}

/// One Markov chain with its cached linear predictor and Gram matrix.
pub struct Chain<'a> {
    data: &'a SeriesData,
    fit: FitConfig,
    prior_only: bool,
    target: f64,
    state: ModelState,
    centred: Vec<f64>,
    columns: DMatrix<f64>,
    eta: Vec<f64>,
    weights: Vec<f64>,
    gram: DMatrix<f64>,
    loglik: f64,
    lp_beta: f64,
    scales: Scales,
    ledger: AcceptanceLedger,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    /// Chain started from the null state.
    pub fn new(
        data: &'a SeriesData,
        fit: FitConfig,
        prior_only: bool,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        fit.validate(data.grid())?;
        if data.counts().iter().all(|&y| y == 0) {
            return Err(Error::InvalidData("all counts are zero".into()));
        }
        let state = ModelState::null(data, fit.jstar);
        Self::from_state(data, fit, prior_only, state, rng)
    }

    pub fn from_state(
        data: &'a SeriesData,
        fit: FitConfig,
        prior_only: bool,
        state: ModelState,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let jstar = fit.jstar;
        if state.jstar() != jstar || state.tau.len() != jstar || state.delta.len() != jstar {
            return Err(Error::InvalidConfig("state dimension differs from jstar".into()));
        }
        if !in_omega(&state.tau, data.grid(), fit.gap) {
            return Err(Error::OutsideOmega(state.tau.clone()));
        }
        let n = data.len();
        let mut columns = DMatrix::zeros(n, jstar);
        for (j, &tau) in state.tau.iter().enumerate() {
            columns
                .column_mut(j)
                .copy_from_slice(&breakpoint_column(data.grid(), tau)?);
        }
        let eta = linear_predictor(
            data,
            state.alpha,
            state.beta0,
            &state.beta,
            &state.delta,
            &columns,
        );
        let weights = fisher_weights(data, state.alpha, state.beta0);
        let gram = gram(&columns, &weights);
        let loglik = if prior_only {
            0.0
        } else {
            poisson_log_likelihood(data, &eta)?
        };
        let lp_beta = log_prior_beta_from_gram(&state.beta, &state.delta, &gram, n, state.gamma)?;

        let centred = data.grid().centred();
        let alpha_beta0_shape = null_fisher_shape(&weights, &centred)?;
        let scales = Scales {
            alpha_beta0: 1.7,
            alpha_beta0_shape,
            beta: vec![2.4; jstar],
            tau: vec![fit.gap; jstar],
        };
        Ok(Self {
            data,
            fit,
            prior_only,
            target: 0.3,
            state,
            centred,
            columns,
            eta,
            weights,
            gram,
            loglik,
            lp_beta,
            scales,
            ledger: AcceptanceLedger::new(jstar),
            rng,
        })
    }

    pub fn with_target_accept(mut self, target: f64) -> Self {
        self.target = target;
        self
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn ledger(&self) -> &AcceptanceLedger {
        &self.ledger
    }

    pub fn reset_ledger(&mut self) {
        self.ledger = AcceptanceLedger::new(self.fit.jstar);
    }

    /// Cached log-likelihood (0 in prior-only mode).
    pub fn log_likelihood(&self) -> f64 {
        self.loglik
    }

    /// Cached log prior density of `beta`.
    pub fn log_prior_beta(&self) -> f64 {
        self.lp_beta
    }

    fn n(&self) -> usize {
        self.data.len()
    }

    fn loglik_of(&self, eta: &[f64]) -> f64 {
        if self.prior_only {
            0.0
        } else {
            poisson_log_likelihood(self.data, eta).unwrap_or(f64::NEG_INFINITY)
        }
    }

    fn lp_beta_of(&self, beta: &[f64], delta: &[bool], gram: &DMatrix<f64>, gamma: f64) -> f64 {
        log_prior_beta_from_gram(beta, delta, gram, self.n(), gamma).unwrap_or(f64::NEG_INFINITY)
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        if log_ratio.is_nan() {
            return false;
        }
        log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio
    }

    /// Exact draw of `gamma` from `InvGamma((1 + J)/2, (1 + beta' Sigma^{-1} beta)/2)`.
    pub fn update_gamma(&mut self) -> Result<()> {
        let jstar = self.fit.jstar as f64;
        let q = sigma_quadratic_form(&self.state.beta, &self.state.delta, &self.gram, self.n());
        let shape = 0.5 * (1.0 + jstar);
        let scale = 0.5 * (1.0 + q);
        let g: f64 = Gamma::new(shape, 1.0)
            .map_err(|e| Error::NonFinite(e.to_string()))?
            .sample(&mut self.rng);
        let gamma = scale / g;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::NonFinite(format!("gamma draw {gamma}")));
        }
        self.state.gamma = gamma;
        self.lp_beta = log_prior_beta_from_gram(
            &self.state.beta,
            &self.state.delta,
            &self.gram,
            self.n(),
            gamma,
        )?;
        Ok(())
    }

    /// Gibbs draw of each indicator from its two-point full conditional.
    pub fn update_delta(&mut self) -> Result<()> {
        for j in 0..self.fit.jstar {
            let current = self.state.delta[j];
            let b = self.state.beta[j];
            let mut eta_alt = self.eta.clone();
            let sign = if current { -1.0 } else { 1.0 };
            for (e, x) in eta_alt.iter_mut().zip(self.columns.column(j).iter()) {
                *e += sign * b * x;
            }
            let ll_alt = self.loglik_of(&eta_alt);
            let mut delta_alt = self.state.delta.clone();
            delta_alt[j] = !current;
            let lpb_alt = self.lp_beta_of(&self.state.beta, &delta_alt, &self.gram, self.state.gamma);
            let lpm_cur = log_prior_model(&self.state.delta, self.fit.prior)?;
            let lpm_alt = log_prior_model(&delta_alt, self.fit.prior)?;

            let log_odds_alt =
                (ll_alt + lpb_alt + lpm_alt) - (self.loglik + self.lp_beta + lpm_cur);
            // P(switch) = 1 / (1 + exp(-log_odds_alt))
            let p_switch = if log_odds_alt.is_nan() {
                0.0
            } else if log_odds_alt >= 0.0 {
                1.0 / (1.0 + (-log_odds_alt).exp())
            } else {
                let e = log_odds_alt.exp();
                e / (1.0 + e)
            };
            if self.rng.random::<f64>() < p_switch {
                self.state.delta = delta_alt;
                self.eta = eta_alt;
                self.loglik = ll_alt;
                self.lp_beta = lpb_alt;
            }
        }
        Ok(())
    }

    /// Metropolis update of each location, random walk and uniform slice moves
    /// alternating at random.
    pub fn update_tau(&mut self, adapt_step: Option<f64>) -> Result<()> {
        let grid = self.data.grid();
        for j in 0..self.fit.jstar {
            let (lo, hi) = omega_slice(&self.state.tau, j, grid, self.fit.gap);
            let walk = self.rng.random_bool(0.5);
            let proposal = if walk {
                let z: f64 = self.rng.sample(StandardNormal);
                self.state.tau[j] + self.scales.tau[j] * z
            } else {
                lo + (hi - lo) * self.rng.random::<f64>()
            };
            let accepted = if proposal > lo && proposal < hi {
                self.try_tau(j, proposal)
            } else {
                false
            };
            if walk {
                self.ledger.tau_walk[j].record(accepted);
                if let Some(step) = adapt_step {
                    self.scales.tau[j] *= (step * (accepted as u8 as f64 - self.target)).exp();
                    // Never let the walk exceed the whole window.
                    let width = grid.last() - grid.first();
                    self.scales.tau[j] = self.scales.tau[j].min(width);
                }
            } else {
                self.ledger.tau_slice[j].record(accepted);
            }
        }
        Ok(())
    }

    fn try_tau(&mut self, j: usize, proposal: f64) -> bool {
        let col = match breakpoint_column(self.data.grid(), proposal) {
            Ok(c) => c,
            Err(_) => return false,
        };
        let jstar = self.fit.jstar;
        let mut gram_new = self.gram.clone();
        for k in 0..jstar {
            let v: f64 = if k == j {
                col.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum()
            } else {
                col.iter()
                    .zip(self.columns.column(k).iter())
                    .zip(&self.weights)
                    .map(|((x, y), w)| w * x * y)
                    .sum()
            };
            gram_new[(j, k)] = v;
            gram_new[(k, j)] = v;
        }
        let active = self.state.delta[j];
        let b = self.state.beta[j];
        let (eta_new, ll_new) = if active {
            let eta_new: Vec<f64> = self
                .eta
                .iter()
                .zip(col.iter().zip(self.columns.column(j).iter()))
                .map(|(e, (x_new, x_old))| e + b * (x_new - x_old))
                .collect();
            let ll = self.loglik_of(&eta_new);
            (Some(eta_new), ll)
        } else {
            (None, self.loglik)
        };
        let lpb_new = self.lp_beta_of(&self.state.beta, &self.state.delta, &gram_new, self.state.gamma);
        let log_ratio = (ll_new + lpb_new) - (self.loglik + self.lp_beta);
        if self.accept(log_ratio) {
            self.state.tau[j] = proposal;
            self.columns.column_mut(j).copy_from_slice(&col);
            if let Some(e) = eta_new {
                self.eta = e;
            }
            self.gram = gram_new;
            self.loglik = ll_new;
            self.lp_beta = lpb_new;
            true
        } else {
            false
        }
    }

    /// Joint random-walk Metropolis step on `(alpha, beta0)`. The prior of
    /// `beta` enters the ratio because the Fisher weights depend on both.
    pub fn update_alpha_beta0(&mut self, adapt_step: Option<f64>) -> Result<()> {
        if self.prior_only {
            return Ok(());
        }
        let z = Vector2::new(
            self.rng.sample::<f64, _>(StandardNormal),
            self.rng.sample::<f64, _>(StandardNormal),
        );
        let step = self.scales.alpha_beta0_shape * z * self.scales.alpha_beta0;
        let (da, db) = (step[0], step[1]);
        let shift: Vec<f64> = self.centred.iter().map(|c| da + db * c).collect();
        let eta_new: Vec<f64> = self.eta.iter().zip(&shift).map(|(e, s)| e + s).collect();
        let weights_new: Vec<f64> = self
            .weights
            .iter()
            .zip(&shift)
            .map(|(w, s)| w * s.exp())
            .collect();
        let gram_new = gram(&self.columns, &weights_new);
        let ll_new = self.loglik_of(&eta_new);
        let lpb_new = self.lp_beta_of(&self.state.beta, &self.state.delta, &gram_new, self.state.gamma);
        let accepted = self.accept((ll_new + lpb_new) - (self.loglik + self.lp_beta));
        if accepted {
            self.state.alpha += da;
            self.state.beta0 += db;
            self.eta = eta_new;
            self.weights = weights_new;
            self.gram = gram_new;
            self.loglik = ll_new;
            self.lp_beta = lpb_new;
        }
        self.ledger.alpha_beta0.record(accepted);
        if let Some(step) = adapt_step {
            self.scales.alpha_beta0 *= (step * (accepted as u8 as f64 - self.target)).exp();
        }
        Ok(())
    }

    /// Coordinate-wise random-walk Metropolis on `beta`. Each proposal is
    /// scaled by the conditional precision `G_jj (delta_j + 1 / (n gamma))`.
    pub fn update_beta(&mut self, adapt_step: Option<f64>) -> Result<()> {
        let n = self.n() as f64;
        for j in 0..self.fit.jstar {
            let active = self.state.delta[j];
            let data_weight = if active && !self.prior_only { 1.0 } else { 0.0 };
            let precision = self.gram[(j, j)] * (data_weight + 1.0 / (n * self.state.gamma));
            let sd = self.scales.beta[j] / precision.sqrt();
            let z: f64 = self.rng.sample(StandardNormal);
            let delta_b = sd * z;
            let mut beta_new = self.state.beta.clone();
            beta_new[j] += delta_b;

            let (eta_new, ll_new) = if active {
                let eta_new: Vec<f64> = self
                    .eta
                    .iter()
                    .zip(self.columns.column(j).iter())
                    .map(|(e, x)| e + delta_b * x)
                    .collect();
                let ll = self.loglik_of(&eta_new);
                (Some(eta_new), ll)
            } else {
                (None, self.loglik)
            };
            let lpb_new = self.lp_beta_of(&beta_new, &self.state.delta, &self.gram, self.state.gamma);
            let accepted = self.accept((ll_new + lpb_new) - (self.loglik + self.lp_beta));
            if accepted {
                self.state.beta = beta_new;
                if let Some(e) = eta_new {
                    self.eta = e;
                }
                self.loglik = ll_new;
                self.lp_beta = lpb_new;
            }
            self.ledger.beta[j].record(accepted);
            if let Some(step) = adapt_step {
                self.scales.beta[j] *= (step * (accepted as u8 as f64 - self.target)).exp();
            }
        }
        Ok(())
    }

    /// One full sweep in the fixed block order. `adapt_step` is the
    /// Robbins-Monro gain, `None` once adaptation is frozen.
    pub fn sweep(&mut self, adapt_step: Option<f64>) -> Result<()> {
        self.update_gamma()?;
        self.update_delta()?;
        self.update_tau(adapt_step)?;
        self.update_alpha_beta0(adapt_step)?;
        self.update_beta(adapt_step)?;
        Ok(())
    }

    /// Run `config.n_iter` sweeps and keep the thinned post-burn-in states.
    pub fn run(mut self, config: &SamplerConfig, index: usize) -> Result<ChainDraws> {
        self.target = config.target_accept;
        let adapt_window = config.adapt_window.min(config.burn_in);
        let mut iters = Vec::with_capacity(config.draws_per_chain());
        let mut states = Vec::with_capacity(config.draws_per_chain());
        for it in 0..config.n_iter {
            let gain = (it < adapt_window).then(|| ((it + 1) as f64).powf(-0.6));
            if it == config.burn_in {
                self.reset_ledger();
            }
            self.sweep(gain)?;
            if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
                iters.push(it);
                states.push(self.state.clone());
            }
        }
        Ok(ChainDraws {
            chain: index,
            iters,
            states,
            acceptance: self.ledger,
        })
    }
}

fn null_fisher_shape(weights: &[f64], centred: &[f64]) -> Result<Matrix2<f64>> {
    let mut info = Matrix2::zeros();
    for (w, c) in weights.iter().zip(centred) {
        info[(0, 0)] += w;
        info[(0, 1)] += w * c;
        info[(1, 1)] += w * c * c;
    }
    info[(1, 0)] = info[(0, 1)];
    let cov = info
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("null-model information".into()))?;
    Ok(cov
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("null-model information".into()))?
        .l())
}

/// Run every chain and collect the thinned draws. Chains are independent;
/// with the `parallel` feature they run on the rayon pool.
pub fn run_chains(
    data: &SeriesData,
    fit: &FitConfig,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    fit.validate(data.grid())?;
    let run_one = |index: usize| -> Result<ChainDraws> {
        let chain = Chain::new(data, *fit, config.prior_only, chain_rng(config.seed, index))?;
        chain.run(config, index)
    };
    #[cfg(feature = "parallel")]
    let chains: Vec<Result<ChainDraws>> = {
        use rayon::prelude::*;
        (0..config.n_chains).into_par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chains: Vec<Result<ChainDraws>> = (0..config.n_chains).map(run_one).collect();

    Ok(PosteriorDraws {
        fit: *fit,
        sampler: *config,
        chains: chains.into_iter().collect::<Result<_>>()?,
    })
}

impl Chain<'_> {
    /// Unnormalised log posterior recomputed from scratch at the current
    /// state (likelihood dropped in prior-only mode).
    pub fn recompute_log_posterior(&self) -> Result<f64> {
        let terms = model::log_posterior_terms(&self.state, self.data, &self.fit)?;
        let ll = if self.prior_only { 0.0 } else { terms.log_likelihood };
        Ok(ll + terms.log_prior_beta + terms.log_prior_gamma + terms.log_prior_model)
    }

    /// The same quantity from the chain's caches.
    pub fn cached_log_posterior(&self) -> Result<f64> {
        Ok(self.loglik
            + self.lp_beta
            + model::log_prior_gamma(self.state.gamma)?
            + log_prior_model(&self.state.delta, self.fit.prior)?)
    }
}
