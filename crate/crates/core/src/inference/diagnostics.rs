//! Convergence diagnostics: rank-normalized split R-hat and bulk effective
//! sample size, plus Monte-Carlo standard errors built on them.

use statrs::distribution::{ContinuousCDF, Normal};

fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Replace values by normal scores of their pooled ranks (ties averaged).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
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
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &pooled[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let grand = crate::stats::mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains.iter().map(|c| crate::stats::variance(c)).sum::<f64>() / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split R-hat over chains of equal length.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let halves = split(chains);
    if halves.is_empty() || halves[0].len() < 2 {
        return f64::NAN;
    }
    rhat_raw(&rank_normalize(&halves))
}

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size (Geyer initial monotone sequence).
fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| crate::stats::variance(c)).collect();
    let w = crate::stats::mean(&vars);
    let nf = n as f64;
    let var_plus = if m > 1 {
        (nf - 1.0) / nf * w + crate::stats::variance(&means)
    } else {
        (nf - 1.0) / nf * w
    };
    if var_plus <= 0.0 {
        return (m * n) as f64;
    }
    let rho = |t: usize| -> f64 {
        let acov: f64 = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, t))
            .sum::<f64>()
            / m as f64;
        // Chain autocovariances are biased by (n-1)/n relative to `w`.
        1.0 - (w * (nf - 1.0) / nf - acov) / var_plus
    };
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (2.0 * tau - 1.0).max(1.0 / (m * n) as f64);
    ((m * n) as f64 / tau).min((m * n) as f64 * (m * n) as f64)
}

/// Bulk effective sample size: ESS of the rank-normalized split chains.
pub fn ess_bulk(chains: &[&[f64]]) -> f64 {
    let halves = split(chains);
    if halves.is_empty() || halves[0].len() < 4 {
        return f64::NAN;
    }
    ess_raw(&rank_normalize(&halves))
}

fn ess_plain(chains: &[&[f64]]) -> f64 {
    let halves = split(chains);
    ess_raw(&halves)
}

/// Monte-Carlo standard error of the posterior mean.
pub fn mcse_mean(chains: &[&[f64]]) -> f64 {
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    crate::stats::sd(&all) / ess_plain(chains).sqrt()
}

/// Monte-Carlo standard error of the posterior standard deviation, by the
/// delta method on the second central moment.
pub fn mcse_sd(chains: &[&[f64]]) -> f64 {
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let mu = crate::stats::mean(&all);
    let sq: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.iter().map(|x| (x - mu) * (x - mu)).collect())
        .collect();
    let sq_refs: Vec<&[f64]> = sq.iter().map(|v| v.as_slice()).collect();
    let sq_all: Vec<f64> = sq.iter().flatten().copied().collect();
    let var = crate::stats::mean(&sq_all);
    let ess = ess_plain(&sq_refs);
    let se_var = crate::stats::sd(&sq_all) / ess.sqrt();
    se_var / (2.0 * var.sqrt())
}
