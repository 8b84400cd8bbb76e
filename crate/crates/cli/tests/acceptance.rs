//! Acceptance suite: one line per criterion, nonzero exit if any binding
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use bayes_joinpoint::baseline::{fit_glm, glm_gradient, glm_log_likelihood, joinpoint_design, profile_fit};
use bayes_joinpoint::diagnostics::effective_sample_size;
use bayes_joinpoint::model::{
    fisher_scale_matrix, log_prior_model_bayes1, log_prior_model_bayes2, ModelState,
};
use bayes_joinpoint::simstudy::{
    default_scenarios, generate_series, replicate_seed, run_study, summarize, Method, StudyConfig,
};
use bayes_joinpoint::{
    run_chains, solve_breakpoint, FitConfig, PriorKind, SamplerConfig, SeriesData,
    TimeGrid,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn single_break_series(seed: u64) -> SeriesData {
    generate_series(&default_scenarios()[1], seed).unwrap()
}

fn patterns(j: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1usize << j).map(move |m| (0..j).map(|i| m >> i & 1 == 1).collect())
}

// 1 ------------------------------------------------------------------------

fn basis_constraints() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = [0.0f64; 4];
    for _ in 0..1000 {
        let n = rng.random_range(5..=60);
        let mut t = rng.random_range(-100.0..2100.0);
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            times.push(t);
            t += rng.random_range(0.2..3.0);
        }
        let (t1, tn) = (times[0], times[n - 1]);
        let tau = rng.random_range(t1 + 0.05 * (tn - t1)..tn - 0.05 * (tn - t1));
        let grid = TimeGrid::new(times.clone()).unwrap();
        let b = solve_breakpoint(&grid, tau).unwrap();
        let (a0, b0, a1, b1) = b.coefficients();
        let vals: Vec<f64> = times.iter().map(|&x| b.eval(x)).collect();
        let scale = times.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        let v = [
            ((a0 + b0 * tau) - (a1 + b1 * tau)).abs(),
            vals.iter().sum::<f64>().abs(),
            vals.iter().zip(&times).map(|(v, x)| v * x).sum::<f64>().abs() / scale,
            (b.eval(tau) - 1.0).abs(),
        ];
        for (w, x) in worst.iter_mut().zip(v) {
            *w = w.max(x);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max < 1e-10 && secs < 5.0,
        format!(
            "1000 grids; max |continuity| {:.1e}, |sum B| {:.1e}, |sum B t|/sum|t| {:.1e}, |B(tau)-1| {:.1e}; {secs:.2}s",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn prior_normalization() -> Outcome {
    let mut worst_sum = 0.0f64;
    let mut worst_count = 0.0f64;
    let mut worst_mean = 0.0f64;
    for j in 2..=10 {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut mean2 = 0.0;
        let mut by_count = vec![0.0; j + 1];
        for d in patterns(j) {
            let k = d.iter().filter(|&&x| x).count();
            let p1 = log_prior_model_bayes1(&d).exp();
            let p2 = log_prior_model_bayes2(&d).unwrap().exp();
            s1 += p1;
            s2 += p2;
            mean2 += k as f64 * p2;
            by_count[k] += p1;
        }
        worst_sum = worst_sum.max((s1 - 1.0).abs()).max((s2 - 1.0).abs());
        for c in by_count {
            worst_count = worst_count.max((c - 1.0 / (j + 1) as f64).abs());
        }
        worst_mean = worst_mean.max((mean2 - 1.0).abs());
    }
    let p0 = log_prior_model_bayes2(&[false; 50]).unwrap().exp();
    let e = (-1.0f64).exp();
    outcome(
        worst_sum < 1e-12 && worst_count < 1e-12 && worst_mean < 1e-12 && (p0 - e).abs() < 0.02,
        format!(
            "|sum-1| {worst_sum:.1e}; bayes1 count error {worst_count:.1e}; bayes2 |E[k]-1| {worst_mean:.1e}; P2(k=0; J*=50) = {p0:.4} vs e^-1 {e:.4}"
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn random_omega_point(rng: &mut ChaCha8Rng, grid: &TimeGrid, j: usize, gap: f64) -> Vec<f64> {
    let l = grid.last() - grid.first() - (j as f64 + 1.0) * gap;
    let mut u: Vec<f64> = (0..j).map(|_| rng.random_range(0.0..l)).collect();
    u.sort_by(f64::total_cmp);
    u.iter()
        .enumerate()
        .map(|(i, &x)| grid.first() + (i as f64 + 1.0) * gap + x)
        .collect()
}

/// `B' W B` with the basis and weights computed here.
fn oracle_gram(data: &SeriesData, state: &ModelState) -> DMatrix<f64> {
    let t = data.grid().times();
    let tbar = t.iter().sum::<f64>() / t.len() as f64;
    let cols: Vec<Vec<f64>> = state.tau.iter().map(|&tau| oracle_basis(t, tau)).collect();
    let w: Vec<f64> = t
        .iter()
        .zip(data.populations())
        .map(|(&ti, p)| p * (state.alpha + state.beta0 * (ti - tbar)).exp())
        .collect();
    let j = cols.len();
    DMatrix::from_fn(j, j, |a, b| (0..t.len()).map(|i| w[i] * cols[a][i] * cols[b][i]).sum())
}

fn scale_matrix() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = single_break_series(5);
    let n = data.len() as f64;
    let mut failures = 0;
    let mut checked = 0;
    let mut worst_i = 0.0f64;
    let mut worst_0 = 0.0f64;
    for _ in 0..500 {
        let j = rng.random_range(1..=4);
        let mut state = ModelState {
            alpha: (62.4f64 / 285000.0).ln() + rng.random_range(-1.0..1.0),
            beta0: rng.random_range(-0.05..0.05),
            beta: (0..j).map(|_| rng.random_range(-1.0..1.0)).collect(),
            tau: random_omega_point(&mut rng, data.grid(), j, 2.0),
            delta: vec![false; j],
            gamma: 1.0,
        };
        let g = oracle_gram(&data, &state);
        for d in patterns(j) {
            state.delta = d.clone();
            checked += 1;
            let sigma = match fisher_scale_matrix(&state, &data) {
                Ok(s) => s,
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            if sigma.clone().cholesky().is_none() {
                failures += 1;
            }
            let size = sigma.amax();
            if d.iter().all(|&x| x) {
                let closed = g.clone().try_inverse().unwrap() * n;
                worst_i = worst_i.max((&sigma - closed).amax() / size);
            }
            if d.iter().all(|&x| !x) {
                let closed = DMatrix::from_fn(j, j, |a, b| if a == b { n / g[(a, a)] } else { 0.0 });
                worst_0 = worst_0.max((&sigma - closed).amax() / size);
            }
        }
    }
    outcome(
        failures == 0 && worst_i < 1e-10 && worst_0 < 1e-10,
        format!(
            "{checked} (state, delta) pairs, {failures} Cholesky failures; delta=1 rel error {worst_i:.1e}, delta=0 rel error {worst_0:.1e}"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn indicator_check(chains: &[Vec<f64>], target: f64) -> (f64, f64) {
    let n: usize = chains.iter().map(Vec::len).sum();
    let p = chains.iter().flatten().sum::<f64>() / n as f64;
    let ess = effective_sample_size(chains).max(1.0);
    let se = (target * (1.0 - target) / ess).sqrt();
    (p, se)
}

fn ks_distance(mut u: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// CDF of the `j`-th of `m` ordered uniforms: `P(Bin(m, u) >= j)`.
fn order_stat_cdf(j: usize, m: usize, u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    let mut binom = 1.0;
    let mut total = 0.0;
    for i in 0..=m {
        if i > 0 {
            binom = binom * (m - i + 1) as f64 / i as f64;
        }
        if i >= j {
            total += binom * u.powi(i as i32) * (1.0 - u).powi((m - i) as i32);
        }
    }
    total
}

fn evenly(values: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|i| values[i * values.len() / k]).collect()
}

fn prior_recovery() -> Outcome {
    let start = Instant::now();
    let data = single_break_series(8);
    let fit = FitConfig {
        jstar: 3,
        gap: 2.0,
        prior: PriorKind::Bayes1,
    };
    let sampler = SamplerConfig {
        n_chains: 4,
        n_iter: 50_000,
        burn_in: 10_000,
        thin: 10,
        seed: 2024,
        adapt_window: 5_000,
        prior_only: true,
        ..SamplerConfig::default()
    };
    let draws = run_chains(&data, &fit, &sampler).unwrap();
    let mut msgs = Vec::new();
    let mut pass = true;

    let mut worst_z = 0.0f64;
    for d in patterns(3) {
        let target = log_prior_model_bayes1(&d).exp();
        let chains = draws.per_chain(|s| f64::from(u8::from(s.delta == d)));
        let (p, se) = indicator_check(&chains, target);
        worst_z = worst_z.max((p - target).abs() / se);
    }
    pass &= worst_z < 3.0;
    msgs.push(format!("delta patterns max |z| {worst_z:.2}"));

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst_g = 0.0f64;
    for i in 1..=9 {
        let p = i as f64 / 10.0;
        let q = normal.inverse_cdf(1.0 - p / 2.0).powi(-2);
        let chains = draws.per_chain(|s| f64::from(u8::from(s.gamma <= q)));
        let (freq, se) = indicator_check(&chains, p);
        worst_g = worst_g.max((freq - p).abs() / se);
    }
    pass &= worst_g < 3.0;
    msgs.push(format!("gamma deciles max |z| {worst_g:.2}"));

    let grid = data.grid();
    let m = fit.jstar;
    let l = grid.last() - grid.first() - (m as f64 + 1.0) * fit.gap;
    let crit = 1.6276 / (10_000f64).sqrt();
    let states: Vec<&ModelState> = draws.states().collect();
    let mut worst_marg = 0.0f64;
    let mut worst_slice = 0.0f64;
    for j in 0..m {
        let u: Vec<f64> = states
            .iter()
            .map(|s| (s.tau[j] - grid.first() - (j as f64 + 1.0) * fit.gap) / l)
            .collect();
        let d = ks_distance(evenly(&u, 10_000), |x| order_stat_cdf(j + 1, m, x));
        worst_marg = worst_marg.max(d);
        let v: Vec<f64> = states
            .iter()
            .map(|s| {
                let lo = if j == 0 { grid.first() } else { s.tau[j - 1] } + fit.gap;
                let hi = if j + 1 == m { grid.last() } else { s.tau[j + 1] } - fit.gap;
                (s.tau[j] - lo) / (hi - lo)
            })
            .collect();
        let d = ks_distance(evenly(&v, 10_000), |x| x.clamp(0.0, 1.0));
        worst_slice = worst_slice.max(d);
    }
    pass &= worst_marg < crit && worst_slice < crit;
    msgs.push(format!(
        "tau KS marginal {worst_marg:.4}, slice {worst_slice:.4} (1% critical {crit:.4})"
    ));
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    msgs.push(format!("{secs:.1}s"));
    outcome(pass, msgs.join("; "))
}

// 5 ------------------------------------------------------------------------

/// Break-point values on `t`, written as `1 + b (t - tau)` on each side and
/// solved from the two moment conditions by Cramer's rule.
fn oracle_basis(t: &[f64], tau: f64) -> Vec<f64> {
    let (mut l1, mut r1, mut l2, mut r2) = (0.0, 0.0, 0.0, 0.0);
    for &x in t {
        if x <= tau {
            l1 += x - tau;
            l2 += x * (x - tau);
        } else {
            r1 += x - tau;
            r2 += x * (x - tau);
        }
    }
    let n = t.len() as f64;
    let s: f64 = t.iter().sum();
    // b0 l1 + b1 r1 = -n ; b0 l2 + b1 r2 = -s
    let det = l1 * r2 - r1 * l2;
    let b0 = (-n * r2 + s * r1) / det;
    let b1 = (-s * l1 + n * l2) / det;
    t.iter()
        .map(|&x| 1.0 + if x <= tau { b0 } else { b1 } * (x - tau))
        .collect()
}

struct Tiny {
    t: Vec<f64>,
    y: Vec<f64>,
    p: Vec<f64>,
}

impl Tiny {
    fn loglik(&self, eta: impl Fn(usize) -> f64) -> f64 {
        (0..self.t.len())
            .map(|i| {
                let e = self.p[i].ln() + eta(i);
                self.y[i] * e - e.exp()
            })
            .sum()
    }

    /// Newton maximiser and Cholesky factor of the inverse information for
    /// `log mu = log P + X theta`.
    fn laplace<const K: usize>(&self, x: &[[f64; K]]) -> ([f64; K], DMatrix<f64>) {
        let mut th = DVector::zeros(K);
        th[0] = (self.y.iter().sum::<f64>() / self.p.iter().sum::<f64>()).ln();
        let xm = DMatrix::from_fn(self.t.len(), K, |i, k| x[i][k]);
        let mut info = DMatrix::zeros(K, K);
        for _ in 0..100 {
            let eta = &xm * &th;
            let mu: Vec<f64> = (0..self.t.len()).map(|i| self.p[i] * eta[i].exp()).collect();
            let g = DVector::from_fn(K, |k, _| (0..self.t.len()).map(|i| (self.y[i] - mu[i]) * x[i][k]).sum());
            info = DMatrix::from_fn(K, K, |a, b| (0..self.t.len()).map(|i| mu[i] * x[i][a] * x[i][b]).sum());
            let step = info.clone().lu().solve(&g).unwrap();
            th += &step;
            if step.amax() < 1e-13 {
                break;
            }
        }
        let cov = info.try_inverse().unwrap();
        let l = cov.cholesky().unwrap().l();
        let mut out = [0.0; K];
        out.copy_from_slice(th.as_slice());
        (out, l)
    }
}

/// Trapezoid nodes on `[-8, 8]`.
fn nodes() -> Vec<(f64, f64)> {
    let m = 49;
    let h = 16.0 / (m - 1) as f64;
    (0..m)
        .map(|i| {
            let w = if i == 0 || i == m - 1 { 0.5 * h } else { h };
            (-8.0 + i as f64 * h, w)
        })
        .collect()
}

/// `P(delta_1 = 1 | y)` for `J* = 1`, Bayes1, by quadrature. With one
/// break-point the scale matrix is `n / G_11` whatever `delta`, so `gamma`
/// integrates out to a Cauchy prior on `beta_1` with scale `sqrt(n / G_11)`;
/// with `delta = 0` the `beta_1` and `tau` integrals are 1.
fn quadrature_inclusion(tiny: &Tiny, omega: (f64, f64)) -> f64 {
    let n = tiny.t.len();
    let tbar = tiny.t.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = tiny.t.iter().map(|x| x - tbar).collect();
    let z = nodes();

    let x0: Vec<[f64; 2]> = c.iter().map(|&ci| [1.0, ci]).collect();
    let (m0, l0) = tiny.laplace(&x0);
    let shift0 = tiny.loglik(|i| m0[0] + m0[1] * c[i]);
    let mut z0 = 0.0;
    for &(u, wu) in &z {
        for &(v, wv) in &z {
            let a = m0[0] + l0[(0, 0)] * u;
            let b = m0[1] + l0[(1, 0)] * u + l0[(1, 1)] * v;
            z0 += wu * wv * (tiny.loglik(|i| a + b * c[i]) - shift0).exp();
        }
    }
    z0 *= l0.determinant();

    let cells = 400;
    let width = (omega.1 - omega.0) / cells as f64;
    let mut z1 = 0.0;
    for k in 0..cells {
        let tau = omega.0 + (k as f64 + 0.5) * width;
        let bcol = oracle_basis(&tiny.t, tau);
        let x1: Vec<[f64; 3]> = (0..n).map(|i| [1.0, c[i], bcol[i]]).collect();
        let (m1, l1) = tiny.laplace(&x1);
        let l1 = Matrix3::from_fn(|a, b| l1[(a, b)]);
        let mut inner = 0.0;
        for &(u, wu) in &z {
            for &(v, wv) in &z {
                for &(s, ws) in &z {
                    let th = Vector3::new(m1[0], m1[1], m1[2]) + l1 * Vector3::new(u, v, s);
                    let ll = tiny.loglik(|i| th[0] + th[1] * c[i] + th[2] * bcol[i]);
                    let g11: f64 = (0..n)
                        .map(|i| tiny.p[i] * (th[0] + th[1] * c[i]).exp() * bcol[i] * bcol[i])
                        .sum();
                    let scale = (n as f64 / g11).sqrt();
                    let r = th[2] / scale;
                    let cauchy = 1.0 / (std::f64::consts::PI * scale * (1.0 + r * r));
                    inner += wu * wv * ws * (ll - shift0).exp() * cauchy;
                }
            }
        }
        z1 += inner * l1.determinant() * width / (omega.1 - omega.0);
    }
    // Equal prior mass on delta = 0 and delta = 1.
    z1 / (z0 + z1)
}

const TINY_COUNTS: [u64; 5] = [30, 42, 52, 44, 37];
const TINY_POP: f64 = 10_000.0;

fn brute_force() -> Outcome {
    let start = Instant::now();
    let t = vec![1.0, 2.0, 3.0, 4.0, 5.0];
    let tiny = Tiny {
        t: t.clone(),
        y: TINY_COUNTS.iter().map(|&y| y as f64).collect(),
        p: vec![TINY_POP; 5],
    };
    let oracle = quadrature_inclusion(&tiny, (2.0, 4.0));
    let oracle_secs = start.elapsed().as_secs_f64();
    let data = SeriesData::from_years(&t, TINY_COUNTS.to_vec(), vec![TINY_POP; 5]).unwrap();
    let fit = FitConfig {
        jstar: 1,
        gap: 1.0,
        prior: PriorKind::Bayes1,
    };
    let sampler = SamplerConfig {
        n_chains: 4,
        n_iter: 100_000,
        burn_in: 10_000,
        thin: 5,
        seed: 99,
        adapt_window: 5_000,
        ..SamplerConfig::default()
    };
    let draws = run_chains(&data, &fit, &sampler).unwrap();
    let mcmc = draws.states().filter(|s| s.delta[0]).count() as f64 / draws.n_draws() as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (mcmc - oracle).abs() < 0.03 && secs < 300.0,
        format!(
            "P(delta_1=1|y): quadrature {oracle:.4}, MCMC {mcmc:.4}, |diff| {:.4}; oracle {oracle_secs:.1}s, total {secs:.1}s",
            (mcmc - oracle).abs()
        ),
    )
}

// 6 and 7 -----------------------------------------------------------------

fn recovery() -> (Outcome, Outcome) {
    let start = Instant::now();
    let scenarios = vec![default_scenarios()[1].clone()];
    let config = StudyConfig {
        replicates: 10,
        master_seed: 20,
        ..StudyConfig::default()
    };
    let outcomes = run_study(&scenarios, &config).unwrap();
    let rows = summarize(&scenarios, &config, &outcomes);
    let row = |m: Method| rows.iter().find(|r| r.method == m).unwrap();
    let (b1, b2, bic) = (row(Method::Bayes1), row(Method::Bayes2), row(Method::Bic));
    let cov = |r: &bayes_joinpoint::simstudy::MethodSummary| r.coverage.map_or(0, |c| c.0);
    let secs = start.elapsed().as_secs_f64();
    let pass = b1.selection_counts[1] >= 8
        && b2.selection_counts[1] >= 8
        && cov(b1) >= 8
        && cov(b2) >= 8
        && bic.selection_counts[1] >= 8
        && secs < 1800.0;
    let six = outcome(
        pass,
        format!(
            "mode J=1: bayes1 {}/10, bayes2 {}/10; tau covered: bayes1 {}/10, bayes2 {}/10; BIC J=1 {}/10; {secs:.0}s",
            b1.selection_counts[1],
            b2.selection_counts[1],
            cov(b1),
            cov(b2),
            bic.selection_counts[1]
        ),
    );

    let mean_over = |m: Method, f: &dyn Fn(&[f64]) -> f64| {
        let v: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.method == m && !o.pmf.is_empty())
            .map(|o| f(&o.pmf))
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let modal = |p: &[f64]| p.iter().copied().fold(0.0, f64::max);
    let zero = |p: &[f64]| p[0];
    let (m1, m2) = (mean_over(Method::Bayes1, &modal), mean_over(Method::Bayes2, &modal));
    let (z1, z2) = (mean_over(Method::Bayes1, &zero), mean_over(Method::Bayes2, &zero));
    let seven = outcome(
        m2 > m1 && z1 < 0.1 && z2 < 0.1,
        format!(
            "mean modal mass bayes1 {m1:.3}, bayes2 {m2:.3}; mean P(J=0) bayes1 {z1:.3}, bayes2 {z2:.3}"
        ),
    );
    (six, seven)
}

// 8 ------------------------------------------------------------------------

fn glm_baseline() -> Outcome {
    let mut worst_fd = 0.0f64;
    let mut worst_int = 0.0f64;
    let mut monotone = true;
    let mut inputs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (s, sc) in default_scenarios().iter().enumerate() {
        for r in 0..3 {
            let data = generate_series(sc, replicate_seed(88, s, r)).unwrap();
            inputs += 1;

            let x = DMatrix::from_element(data.len(), 1, 1.0);
            let f = fit_glm(&x, &data, None).unwrap();
            worst_int = worst_int.max((f.coef[0] - data.crude_log_rate()).abs());

            for j in 0..=2 {
                let taus = random_omega_point(&mut rng, data.grid(), j, 2.0);
                let x = joinpoint_design(&data, &taus).unwrap();
                let f = fit_glm(&x, &data, None).unwrap();
                let g = glm_gradient(&x, &data, &f.coef);
                let h = 1e-5;
                for k in 0..x.ncols() {
                    let mut up = f.coef.clone();
                    let mut dn = f.coef.clone();
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (glm_log_likelihood(&x, &data, &up) - glm_log_likelihood(&x, &data, &dn))
                        / (2.0 * h);
                    worst_fd = worst_fd.max((fd - g[k]).abs());
                }
            }

            let mut prev = f64::NEG_INFINITY;
            for j in 0..=3 {
                let ll = profile_fit(&data, j, 2.0, 0.25).unwrap().log_likelihood;
                monotone &= ll >= prev;
                prev = ll;
            }
        }
    }
    outcome(
        worst_fd < 1e-4 && worst_int < 1e-12 && monotone,
        format!(
            "{inputs} inputs; max |FD - gradient| {worst_fd:.1e}; intercept-only error {worst_int:.1e}; profile loglik nondecreasing in J: {monotone}"
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_joinpoint"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_tree(a: &Path, b: &Path) -> (bool, usize) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let same = names
        .iter()
        .all(|n| fs::read(a.join(n)).ok() == fs::read(b.join(n)).ok())
        && fs::read_dir(b).unwrap().count() == names.len();
    (same, names.len())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("series.csv");
    let data = single_break_series(9);
    let mut text = String::from("year,deaths,population\n");
    for ((t, y), p) in data.grid().times().iter().zip(data.counts()).zip(data.populations()) {
        text.push_str(&format!("{t},{y},{p}\n"));
    }
    fs::write(&input, text).unwrap();
    let inp = input.to_str().unwrap();
    let dirs: Vec<String> = ["f1", "f2", "s1", "s2"]
        .iter()
        .map(|n| d.join(n).to_str().unwrap().to_string())
        .collect();
    let mut ran = true;
    for out in &dirs[..2] {
        ran &= run_cli(&["fit", inp, "--seed", "7", "--svg", "--out-dir", out]);
    }
    for out in &dirs[2..] {
        ran &= run_cli(&[
            "study", "--replicates", "2", "--seed", "7", "--iters", "6000", "--burnin", "2000",
            "--adapt", "1000", "--grid-step", "0.5", "--out-dir", out,
        ]);
    }
    if !ran {
        return outcome(false, "a command failed");
    }
    let (fit_same, fit_files) = same_tree(&d.join("f1"), &d.join("f2"));
    let (study_same, study_files) = same_tree(&d.join("s1"), &d.join("s2"));
    outcome(
        fit_same && study_same,
        format!(
            "fit: {fit_files} files identical: {fit_same}; study: {study_files} files identical: {study_same}"
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter skips the suite when it
    // does not mention it.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let mut results: Vec<(&str, &str, bool, Outcome)> = vec![
        ("1", "basis constraints", true, basis_constraints()),
        ("2", "prior normalization and structure", true, prior_normalization()),
        ("3", "scale matrix", true, scale_matrix()),
        ("4", "prior recovery", true, prior_recovery()),
        ("5", "brute-force equivalence", true, brute_force()),
    ];
    let (six, seven) = recovery();
    results.push(("6", "recovery study", true, six));
    results.push(("7", "qualitative anchor (reported only)", false, seven));
    results.push(("8", "GLM baseline", true, glm_baseline()));
    results.push(("9", "determinism", true, determinism()));

    let mut failed = 0;
    for (id, name, binding, o) in &results {
        let tag = match (o.pass, binding) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        if !o.pass && *binding {
            failed += 1;
        }
        println!("[{tag}] criterion {id}: {name}: {}", o.detail);
    }
    if failed > 0 {
        println!("{failed} binding criteria failed");
        std::process::exit(1);
    }
    println!("all binding criteria passed");
}
