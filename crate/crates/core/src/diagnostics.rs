//! Convergence diagnostics for multi-chain output.
//!
//! `split_rhat` is the rank-normalised split potential scale reduction
//! (maximum of the bulk and folded-tail versions) and `effective_sample_size`
//! the multi-chain ESS with Geyer's initial monotone sequence, both in the
//! form popularised by Stan.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split every chain in two halves of equal length (middle draw dropped for
/// odd lengths). Chains are first trimmed to the shortest length.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..n].to_vec()])
        .collect()
}

/// Classic potential scale reduction on already-split chains.
pub fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let within = mean(&chains.iter().map(|c| variance(&c[..n])).collect::<Vec<_>>());
    let between = n as f64 * variance(&means);
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    (var_plus / within).sqrt()
}

/// Replace every value by the normal score of its pooled rank (ties averaged).
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < pooled.len() {
        let mut k = i;
        while k + 1 < pooled.len() && pooled[k + 1].0 == pooled[i].0 {
            k += 1;
        }
        // Average 1-based rank of the tie group.
        let rank = (i + k) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, idx) in &pooled[i..=k] {
            out[c][idx] = z;
        }
        i = k + 1;
    }
    out
}

/// Rank-normalised split R-hat: max of the bulk and the folded (tail) value.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let bulk = basic_rhat(&rank_normalize(&split));
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let median = crate::summaries::quantile_sorted(&sorted, 0.5);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|x| (x - median).abs()).collect())
        .collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size (Geyer initial monotone sequence).
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let total = (m * n) as f64;
    let within: f64 = chains.iter().map(|c| variance(c)).sum::<f64>() / m as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let between = if m > 1 { n as f64 * variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * within + between / n as f64;
    if !(var_plus > 0.0) {
        return total;
    }

    let rho = |lag: usize| -> f64 {
        let acov: f64 = chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m as f64;
        1.0 - (within - acov) / var_plus
    };

    // Pairs (rho_{2k}, rho_{2k+1}) with rho_0 = 1.
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    let ess = total / tau.max(1.0 / (total.log10().max(1.0)));
    ess.min(total * total.log10().max(1.0))
}

/// Monte Carlo standard error of a mean.
pub fn mcse_mean(chains: &[Vec<f64>]) -> f64 {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    if pooled.len() < 2 {
        return f64::NAN;
    }
    (variance(&pooled) / effective_sample_size(chains)).sqrt()
}

/// Diagnostics of one scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarDiagnostics {
    pub rhat: f64,
    pub ess: f64,
}

pub fn diagnose(chains: &[Vec<f64>]) -> ScalarDiagnostics {
    ScalarDiagnostics {
        rhat: split_rhat(chains),
        ess: effective_sample_size(chains),
    }
}
