//! Rank-normalized split-R̂ and bulk effective sample size.

use crate::numerics::probit;

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Splits each chain in half (dropping a middle draw for odd lengths).
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = pooled.len() as f64;
    let r = ranks(&pooled);
    let mut it = r.into_iter();
    chains
        .iter()
        .map(|c| c.iter().map(|_| probit((it.next().unwrap() - 0.375) / (s + 0.25))).collect())
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction on already-split chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let b = n * variance(&means);
    if w <= 0.0 || !w.is_finite() {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split-R̂: the larger of the bulk and folded (tail) values.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.is_empty() || chains[0].len() < 4 {
        return f64::NAN;
    }
    let halves = split(chains);
    if halves.iter().flatten().all(|v| *v == halves[0][0]) {
        return 1.0;
    }
    let bulk = rhat_basic(&rank_normalize(&halves));
    let pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|v| (v - median).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    bulk.max(tail)
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS via Geyer's initial monotone sequence.
fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let var_plus = (nf - 1.0) / nf * w + if chains.len() > 1 { variance(&means) } else { 0.0 };
    if !(var_plus > 0.0) {
        return m * nf;
    }
    let rho = |t: usize| -> f64 {
        let acov = mean(&chains.iter().map(|c| autocovariance(c, t)).collect::<Vec<_>>());
        1.0 - (w - acov) / var_plus
    };
    let mut rho_hat = vec![1.0, rho(1)];
    let mut t = 1;
    // accumulate pairs (rho_{2k} + rho_{2k+1}) while positive and monotone
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    loop {
        let (a, b) = (2 * k, 2 * k + 1);
        while rho_hat.len() <= b {
            t += 1;
            if t >= n - 1 {
                break;
            }
            rho_hat.push(rho(t));
        }
        if rho_hat.len() <= b {
            break;
        }
        let mut pair = rho_hat[a] + rho_hat[b];
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        sum_pairs += pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (m * nf).log10().max(1.0));
    m * nf / tau
}

/// Bulk ESS: ESS of the rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    if chains.is_empty() || chains[0].len() < 4 {
        return f64::NAN;
    }
    let halves = split(chains);
    if halves.iter().flatten().all(|v| *v == halves[0][0]) {
        return f64::NAN;
    }
    ess_basic(&rank_normalize(&halves))
}

/// ESS of the raw (not rank-normalized, not split) chains.
pub fn ess_plain(chains: &[Vec<f64>]) -> f64 {
    let n: usize = chains.iter().map(|c| c.len()).sum();
    if chains.is_empty() || chains[0].len() < 4 || chains.iter().flatten().all(|v| *v == chains[0][0]) {
        return n as f64;
    }
    ess_basic(chains)
}

/// Plain ESS of a single sequence (used for bridge-sampling errors).
pub fn ess_single(x: &[f64]) -> f64 {
    if x.len() < 4 || x.iter().all(|v| *v == x[0]) {
        return x.len() as f64;
    }
    ess_basic(&[x.to_vec()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn iid(chains: usize, n: usize, seed: u64, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..chains)
            .map(|c| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift * c as f64).collect())
            .collect()
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn iid_chains_converged() {
        let c = iid(4, 1000, 1, 0.0);
        let r = split_rhat(&c);
        assert!(r < 1.01, "{r}");
        let e = ess_bulk(&c);
        assert!(e > 3000.0 && e < 5000.0, "{e}");
    }

    #[test]
    fn shifted_chains_flagged() {
        let c = iid(4, 1000, 2, 1.0);
        assert!(split_rhat(&c) > 1.1);
    }

    #[test]
    fn ar1_ess() {
        // AR(1) with phi = 0.9 has ESS/N = (1 - phi)/(1 + phi) ≈ 0.0526
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..5000)
                    .map(|_| {
                        x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let e = ess_bulk(&chains) / 20000.0;
        assert!((e - 0.0526).abs() < 0.015, "{e}");
    }
}
