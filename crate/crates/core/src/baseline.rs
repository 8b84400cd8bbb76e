//! Maximum-likelihood joinpoint fits scored by BIC.
//!
//! For every number of joinpoints `J` the locations are profiled out by an
//! exhaustive search over a regular grid of admissible positions; at each
//! candidate the remaining coefficients come from a Poisson GLM with offset
//! `log P_i`, fitted by Newton-Raphson with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::breakpoint_column;
use crate::error::{Error, Result};
use crate::model::SeriesData;

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 100;
pub const DEFAULT_GRID_STEP: f64 = 0.25;

/// Converged Poisson regression.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coef: DVector<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Inverse Fisher information at the optimum.
    pub covariance: DMatrix<f64>,
}

impl GlmFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

/// Poisson log-likelihood of `log mu = log P + X coef`, constants included.
pub fn glm_log_likelihood(x: &DMatrix<f64>, data: &SeriesData, coef: &DVector<f64>) -> f64 {
    let eta = x * coef;
    eta.iter()
        .zip(data.log_populations())
        .zip(data.counts())
        .zip(data.log_factorials())
        .map(|(((e, lp), &y), lf)| {
            let e = e + lp;
            y as f64 * e - e.exp() - lf
        })
        .sum()
}

/// Score vector `X' (y - mu)`.
pub fn glm_gradient(x: &DMatrix<f64>, data: &SeriesData, coef: &DVector<f64>) -> DVector<f64> {
    let eta = x * coef;
    let resid = DVector::from_iterator(
        data.len(),
        eta.iter()
            .zip(data.log_populations())
            .zip(data.counts())
            .map(|((e, lp), &y)| y as f64 - (e + lp).exp()),
    );
    x.transpose() * resid
}

fn information(x: &DMatrix<f64>, data: &SeriesData, coef: &DVector<f64>) -> DMatrix<f64> {
    let eta = x * coef;
    let mu: Vec<f64> = eta
        .iter()
        .zip(data.log_populations())
        .map(|(e, lp)| (e + lp).exp())
        .collect();
    let p = x.ncols();
    DMatrix::from_fn(p, p, |a, b| {
        (0..x.nrows()).map(|i| mu[i] * x[(i, a)] * x[(i, b)]).sum()
    })
}

/// Newton-Raphson fit. `start` defaults to the crude rate for the first
/// column (assumed to be the intercept) and zeros elsewhere.
pub fn fit_glm(x: &DMatrix<f64>, data: &SeriesData, start: Option<&DVector<f64>>) -> Result<GlmFit> {
    let p = x.ncols();
    if x.nrows() != data.len() || p == 0 || p > data.len() {
        return Err(Error::SingularDesign);
    }
    let xtx = x.transpose() * x;
    if crate::model::rcond_1(&xtx).is_none_or(|r| r < 1e-12) {
        return Err(Error::SingularDesign);
    }
    let mut coef = match start {
        Some(s) => s.clone(),
        None => {
            let mut c = DVector::zeros(p);
            c[0] = data.crude_log_rate();
            c
        }
    };
    if !coef.iter().all(|v| v.is_finite()) {
        return Err(Error::NoConvergence(0));
    }
    let mut ll = glm_log_likelihood(x, data, &coef);
    for iteration in 0..=MAX_NEWTON_ITERATIONS {
        let grad = glm_gradient(x, data, &coef);
        let info = information(x, data, &coef);
        let chol = info.cholesky().ok_or(Error::SingularDesign)?;
        let gnorm = grad.norm();
        if gnorm < GRADIENT_TOLERANCE {
            return Ok(GlmFit {
                covariance: chol.inverse(),
                coef,
                log_likelihood: ll,
                iterations: iteration,
                gradient_norm: gnorm,
            });
        }
        if iteration == MAX_NEWTON_ITERATIONS {
            break;
        }
        let step = chol.solve(&grad);
        // Near the optimum the likelihood gain is below its rounding error,
        // so the full step is taken without a line search.
        if step.dot(&grad) < 1e-10 {
            coef += step;
            ll = glm_log_likelihood(x, data, &coef);
            continue;
        }
        // Halve the step until the likelihood does not decrease.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &coef + &step * scale;
            let trial_ll = glm_log_likelihood(x, data, &trial);
            if trial_ll.is_finite() && trial_ll >= ll {
                coef = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence(iteration));
        }
    }
    Err(Error::NoConvergence(MAX_NEWTON_ITERATIONS))
}

/// `[1, t - tbar]` followed by the break-point columns at `taus`.
pub fn joinpoint_design(data: &SeriesData, taus: &[f64]) -> Result<DMatrix<f64>> {
    let n = data.len();
    let centred = data.grid().centred();
    let mut x = DMatrix::zeros(n, 2 + taus.len());
    x.column_mut(0).fill(1.0);
    x.column_mut(1).copy_from_slice(&centred);
    for (j, &tau) in taus.iter().enumerate() {
        x.column_mut(2 + j)
            .copy_from_slice(&breakpoint_column(data.grid(), tau)?);
    }
    Ok(x)
}

/// Maximum-likelihood fit with `J` joinpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    pub taus: Vec<f64>,
    /// `(alpha, beta0, beta_1..beta_J)`.
    pub coef: Vec<f64>,
    pub log_likelihood: f64,
}

/// Admissible grid positions `t1 + k step` strictly inside `(t1 + gap, tn - gap)`.
pub fn candidate_locations(data: &SeriesData, gap: f64, step: f64) -> Vec<f64> {
    let (t1, tn) = (data.grid().first(), data.grid().last());
    let eps = 1e-9 * step;
    (1..)
        .map(|k| t1 + k as f64 * step)
        .skip_while(|&c| c <= t1 + gap + eps)
        .take_while(|&c| c < tn - gap - eps)
        .collect()
}

struct Search<'a> {
    data: &'a SeriesData,
    base: DMatrix<f64>,
    candidates: Vec<f64>,
    columns: Vec<Vec<f64>>,
    gap: f64,
    start: DVector<f64>,
}

impl Search<'_> {
    fn fit(&self, idx: &[usize]) -> Option<(f64, DVector<f64>)> {
        let n = self.data.len();
        let mut x = DMatrix::zeros(n, 2 + idx.len());
        x.columns_mut(0, 2).copy_from(&self.base);
        for (j, &k) in idx.iter().enumerate() {
            x.column_mut(2 + j).copy_from_slice(&self.columns[k]);
        }
        let mut start = DVector::zeros(2 + idx.len());
        start.rows_mut(0, 2).copy_from(&self.start);
        fit_glm(&x, self.data, Some(&start))
            .ok()
            .map(|f| (f.log_likelihood, f.coef))
    }

    /// Best extension of `prefix` to `remaining` more locations, in
    /// lexicographic order with strict improvement.
    fn best(
        &self,
        prefix: &mut Vec<usize>,
        remaining: usize,
        best: &mut Option<(f64, Vec<usize>, DVector<f64>)>,
    ) {
        if remaining == 0 {
            if let Some((ll, coef)) = self.fit(prefix) {
                if best.as_ref().is_none_or(|(b, _, _)| ll > *b) {
                    *best = Some((ll, prefix.clone(), coef));
                }
            }
            return;
        }
        let from = match prefix.last() {
            None => 0,
            Some(&k) => k + 1,
        };
        for k in from..self.candidates.len() {
            if let Some(&prev) = prefix.last() {
                if self.candidates[k] - self.candidates[prev] <= self.gap + 1e-9 {
                    continue;
                }
            }
            prefix.push(k);
            self.best(prefix, remaining - 1, best);
            prefix.pop();
        }
    }
}

/// Profile the locations of `j` joinpoints over the candidate grid.
pub fn profile_fit(data: &SeriesData, j: usize, gap: f64, grid_step: f64) -> Result<ProfileFit> {
    let base_x = joinpoint_design(data, &[])?;
    let null = fit_glm(&base_x, data, None)?;
    if j == 0 {
        return Ok(ProfileFit {
            taus: vec![],
            coef: null.coef.iter().copied().collect(),
            log_likelihood: null.log_likelihood,
        });
    }
    if !(grid_step > 0.0) {
        return Err(Error::InvalidConfig(format!("grid step {grid_step}")));
    }
    let candidates = candidate_locations(data, gap, grid_step);
    let columns = candidates
        .iter()
        .map(|&c| breakpoint_column(data.grid(), c))
        .collect::<Result<Vec<_>>>()?;
    let search = Search {
        data,
        base: base_x,
        candidates,
        columns,
        gap,
        start: null.coef.clone(),
    };

    let first_level = |k: usize| {
        let mut best = None;
        let mut prefix = vec![k];
        search.best(&mut prefix, j - 1, &mut best);
        best
    };
    let n_first = search.candidates.len();
    #[cfg(feature = "parallel")]
    let per_first: Vec<_> = {
        use rayon::prelude::*;
        (0..n_first).into_par_iter().map(first_level).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_first: Vec<_> = (0..n_first).map(first_level).collect();

    // Ordered reduction keeps the lexicographically first maximiser.
    let mut best: Option<(f64, Vec<usize>, DVector<f64>)> = None;
    for cand in per_first.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _, _)| cand.0 > *b) {
            best = Some(cand);
        }
    }
    let (ll, idx, coef) = best.ok_or(Error::EmptyGrid)?;
    Ok(ProfileFit {
        taus: idx.iter().map(|&k| search.candidates[k]).collect(),
        coef: coef.iter().copied().collect(),
        log_likelihood: ll,
    })
}

/// Number of free parameters of a `J`-joinpoint fit: the intercept and slope plus a
/// location plus a magnitude per joinpoint.
pub fn bic_parameter_count(j: usize) -> usize {
    2 + 2 * j
}

pub fn bic(log_likelihood: f64, j: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + bic_parameter_count(j) as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub j: usize,
    pub fit: ProfileFit,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicSelection {
    pub rows: Vec<BicRow>,
    pub chosen: usize,
}

impl BicSelection {
    pub fn chosen_row(&self) -> &BicRow {
        &self.rows[self.chosen]
    }
}

/// Fit `J = 0..=jmax` and pick the smallest BIC (ties go to the smaller `J`).
/// `J` values with no admissible grid configuration are left out.
pub fn select_bic(data: &SeriesData, jmax: usize, gap: f64, grid_step: f64) -> Result<BicSelection> {
    let mut rows = Vec::with_capacity(jmax + 1);
    for j in 0..=jmax {
        match profile_fit(data, j, gap, grid_step) {
            Ok(fit) => {
                let bic = bic(fit.log_likelihood, j, data.len());
                rows.push(BicRow { j, fit, bic });
            }
            Err(Error::EmptyGrid) => break,
            Err(e) => return Err(e),
        }
    }
    let mut chosen = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.bic < rows[chosen].bic {
            chosen = i;
        }
    }
    Ok(BicSelection { rows, chosen })
}
