//! Rank-normalized split R-hat and multi-chain effective sample size.

use statrs::distribution::{ContinuousCDF, Normal};

use super::{ParamDiagnostics, PosteriorMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSummary {
    /// `None` for a constant column.
    pub ess: Option<f64>,
    pub split_rhat: Option<f64>,
}

/// Splits each chain in half, dropping the middle draw of odd-length chains.
fn split(chains: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    if chains.is_empty() || half < 4 {
        return Err(Error::precondition(format!(
            "need at least 8 draws per chain for split diagnostics, got {n}"
        )));
    }
    Ok(chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..n].to_vec()])
        .collect())
}

/// Normal scores of pooled fractional ranks (average rank for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, x)| (*x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = pooled.len() as f64;
    let std = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = std.inverse_cdf((rank - 0.375) / (total + 0.25));
        for &(_, c, k) in &pooled[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// (W, var⁺) for equal-length chains.
fn variance_components(chains: &[Vec<f64>]) -> (f64, f64) {
    let n = chains[0].len() as f64;
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b_over_n = if chains.len() > 1 { variance(&means) } else { 0.0 };
    (w, (n - 1.0) / n * w + b_over_n)
}

fn rhat(chains: &[Vec<f64>]) -> f64 {
    let (w, var_plus) = variance_components(chains);
    (var_plus / w).sqrt()
}

fn autocovariance(c: &[f64], lag: usize) -> f64 {
    let m = mean(c);
    let n = c.len();
    (0..n - lag).map(|i| (c[i] - m) * (c[i + lag] - m)).sum::<f64>() / n as f64
}

/// Geyer initial-monotone-sequence ESS over several chains.
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let (w, var_plus) = variance_components(chains);
    let rho = |lag: usize| -> f64 {
        let acov = chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / ((m * n) as f64).log10());
    (m * n) as f64 / tau
}

/// Diagnostics for one parameter given its per-chain draws.
pub fn chain_diagnostics(chains: &[Vec<f64>]) -> Result<ChainSummary> {
    let halves = split(chains)?;
    let first = halves[0][0];
    if halves.iter().flatten().all(|v| *v == first) {
        return Ok(ChainSummary { ess: None, split_rhat: None });
    }
    let z = rank_normalize(&halves);
    let pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let med = sorted[sorted.len() / 2];
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let zf = rank_normalize(&folded);
    let r = rhat(&z).max(rhat(&zf));
    Ok(ChainSummary { ess: Some(ess(&z)), split_rhat: Some(r) })
}

/// Per-parameter diagnostics of a posterior matrix, grouping rows by chain.
pub fn diagnostics(post: &PosteriorMatrix) -> Result<Vec<ParamDiagnostics>> {
    let n_chains = post.chain.iter().max().map_or(0, |c| c + 1);
    post.schema
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let mut chains = vec![Vec::new(); n_chains];
            for (row, c) in post.draws.iter().zip(&post.chain) {
                chains[*c].push(row[j]);
            }
            chains.retain(|c| !c.is_empty());
            let s = chain_diagnostics(&chains)?;
            Ok(ParamDiagnostics { param: id.to_string(), ess: s.ess, split_rhat: s.split_rhat, acceptance_rate: None })
        })
        .collect()
}
