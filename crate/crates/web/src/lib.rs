//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export returns a JSON string; the plain functions behind them are
//! usable from Rust as well.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use bayes_joinpoint::model::{log_prior_model_bayes1, log_prior_model_bayes2};
use bayes_joinpoint::simstudy::{generate_series, Scenario};
use bayes_joinpoint::{
    build_report, run_chains, solve_breakpoint, FitConfig, PriorKind, Result, SamplerConfig,
    TimeGrid,
};

#[derive(Debug, Serialize)]
pub struct Curve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Intercept and slope left of the break, then right of it.
    pub coefficients: [f64; 4],
}

/// Break-point basis on `n` equally spaced times starting at `start`.
pub fn curve(start: f64, n: usize, tau: f64) -> Result<Curve> {
    let grid = TimeGrid::regular(start, n)?;
    let b = solve_breakpoint(&grid, tau)?;
    let (a0, b0, a1, b1) = b.coefficients();
    Ok(Curve {
        times: grid.times().to_vec(),
        values: b.eval_grid(&grid),
        coefficients: [a0, b0, a1, b1],
    })
}

#[derive(Debug, Serialize)]
pub struct CountPriors {
    pub bayes1: Vec<f64>,
    /// Empty when `jstar < 2`.
    pub bayes2: Vec<f64>,
}

/// Prior probability of `k = 0..=jstar` active joinpoints under both priors.
pub fn count_priors(jstar: usize) -> Result<CountPriors> {
    let mut bayes1 = vec![0.0; jstar + 1];
    let mut bayes2 = vec![0.0; jstar + 1];
    for m in 0..1usize << jstar {
        let d: Vec<bool> = (0..jstar).map(|i| m >> i & 1 == 1).collect();
        let k = d.iter().filter(|&&x| x).count();
        bayes1[k] += log_prior_model_bayes1(&d).exp();
        if jstar >= 2 {
            bayes2[k] += log_prior_model_bayes2(&d)?.exp();
        }
    }
    if jstar < 2 {
        bayes2.clear();
    }
    Ok(CountPriors { bayes1, bayes2 })
}

#[derive(Debug, Serialize)]
pub struct QuickFit {
    pub times: Vec<f64>,
    pub observed_rate: Vec<f64>,
    pub true_rate: Vec<f64>,
    pub fitted_rate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub joinpoint_pmf: Vec<f64>,
    pub cumulative_change: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct QuickFitConfig {
    pub slopes: Vec<f64>,
    pub knots: Vec<f64>,
    pub mean_deaths: f64,
    pub jstar: usize,
    pub prior: PriorKind,
    pub iterations: usize,
    pub seed: u64,
}

const YEARS: usize = 28;
const POPULATION: f64 = 285_000.0;
const PER: f64 = 100_000.0;

/// Simulate one series from a piecewise log-linear trend and fit it with a
/// single short chain.
pub fn quick_fit(cfg: &QuickFitConfig) -> Result<QuickFit> {
    let years: Vec<f64> = (0..YEARS).map(|i| 1980.0 + i as f64).collect();
    let scenario = Scenario::from_trend(
        "demo".into(),
        years.clone(),
        vec![POPULATION; YEARS],
        cfg.mean_deaths,
        &cfg.slopes,
        &cfg.knots,
        2.0,
    )?;
    let data = generate_series(&scenario, cfg.seed)?;
    let fit = FitConfig {
        jstar: cfg.jstar,
        gap: 2.0,
        prior: cfg.prior,
    };
    let sampler = SamplerConfig {
        n_chains: 1,
        n_iter: cfg.iterations,
        burn_in: cfg.iterations / 5,
        thin: 5,
        seed: cfg.seed,
        adapt_window: cfg.iterations / 10,
        ..SamplerConfig::default()
    };
    let draws = run_chains(&data, &fit, &sampler)?;
    let report = build_report(&draws, &data, 0, None, String::new())?;
    let rate = |y: f64| y / POPULATION * PER;
    Ok(QuickFit {
        times: years,
        observed_rate: data.counts().iter().map(|&y| rate(y as f64)).collect(),
        true_rate: scenario.expected_counts()?.iter().map(|&m| rate(m)).collect(),
        fitted_rate: report.trend.iter().map(|p| p.mean).collect(),
        lower: report.trend.iter().map(|p| p.lower).collect(),
        upper: report.trend.iter().map(|p| p.upper).collect(),
        joinpoint_pmf: report.joinpoint_pmf,
        cumulative_change: report.cumulative_change,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen]
pub fn breakpoint_curve(start: f64, n: usize, tau: f64) -> std::result::Result<String, JsValue> {
    to_js(curve(start, n, tau))
}

#[wasm_bindgen]
pub fn prior_counts(jstar: usize) -> std::result::Result<String, JsValue> {
    to_js(count_priors(jstar))
}

/// `knots` may be empty; `slopes` must have one more entry than `knots`.
#[wasm_bindgen]
pub fn simulate_and_fit(
    slopes: Vec<f64>,
    knots: Vec<f64>,
    mean_deaths: f64,
    jstar: usize,
    bayes2: bool,
    iterations: usize,
    seed: f64,
) -> std::result::Result<String, JsValue> {
    to_js(quick_fit(&QuickFitConfig {
        slopes,
        knots,
        mean_deaths,
        jstar,
        prior: if bayes2 { PriorKind::Bayes2 } else { PriorKind::Bayes1 },
        iterations,
        seed: seed.max(0.0) as u64,
    }))
}
