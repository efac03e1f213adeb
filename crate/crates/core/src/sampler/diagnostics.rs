//! Convergence diagnostics: effective sample size, split potential scale
//! reduction, and cross-chain rank histograms.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::Error;
use crate::sampler::DrawMatrix;
use crate::stats::{mean, sample_var};
use crate::Result;

/// Number of bins in a rank histogram.
pub const RANK_BINS: usize = 20;

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::Diagnostic("need at least 2 chains".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 100 {
        return Err(Error::Diagnostic(format!(
            "need at least 100 kept draws per chain, got {n}"
        )));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Diagnostic("non-finite draw".into()));
    }
    let first = chains[0][0];
    if chains.iter().flatten().all(|&v| v == first) {
        return Err(Error::Diagnostic("degenerate chain: all draws equal".into()));
    }
    Ok(n)
}

/// Autocovariance of each chain at lag `k` (biased, divisor `n`).
fn acov_at(chains: &[Vec<f64>], means: &[f64], n: usize, k: usize) -> f64 {
    let mut acc = 0.0;
    for (c, chain) in chains.iter().enumerate() {
        let m = means[c];
        let mut s = 0.0;
        for t in 0..n - k {
            s += (chain[t] - m) * (chain[t + k] - m);
        }
        acc += s / n as f64;
    }
    acc / chains.len() as f64
}

/// Effective sample size from pooled-chain autocovariances with Geyer's
/// initial monotone positive sequence truncation, capped at the total
/// number of kept draws.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains)?;
    let m = chains.len();
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();

    let acov0 = acov_at(chains, &means, n, 0);
    let mean_var = acov0 * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if var_plus <= 0.0 {
        return Err(Error::Diagnostic("degenerate chain: zero variance".into()));
    }

    let rho = |k: usize| 1.0 - (mean_var - acov_at(chains, &means, n, k)) / var_plus;

    let mut rho_hat: Vec<f64> = vec![1.0, rho(1)];
    let mut rho_even = rho_hat[0];
    let mut rho_odd = rho_hat[1];
    let mut s = 1usize;
    // Geyer initial positive sequence
    while s < n - 4 && rho_even + rho_odd > 0.0 {
        rho_even = rho(s + 1);
        rho_odd = rho(s + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat.push(rho_even);
            rho_hat.push(rho_odd);
        }
        s += 2;
    }
    let max_s = rho_hat.len() - 1;
    // final even term enters as a bias correction when positive
    let tail = if rho_even > 0.0 { rho_even } else { 0.0 };

    // initial monotone sequence: running pair sums must not increase
    let mut i = 1;
    while i + 2 <= max_s {
        if rho_hat[i + 1] + rho_hat[i + 2] > rho_hat[i - 1] + rho_hat[i] {
            let fix = (rho_hat[i - 1] + rho_hat[i]) / 2.0;
            rho_hat[i + 1] = fix;
            rho_hat[i + 2] = fix;
        }
        i += 2;
    }

    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat.iter().sum::<f64>() + tail;
    Ok((total / tau).min(total))
}

/// Split potential scale reduction: each chain is halved (dropping the
/// middle draw when odd) and the usual between/within variance ratio is
/// computed over the half-chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains)?;
    let half = n / 2;
    let mut split: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for chain in chains {
        split.push(&chain[..half]);
        split.push(&chain[n - half..n]);
    }

    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = split.iter().map(|c| sample_var(c)).collect();
    let w = mean(&vars);
    if w <= 0.0 {
        return Err(Error::Diagnostic("degenerate chain: zero within-chain variance".into()));
    }
    let b_over_n = sample_var(&means);
    let nf = half as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

/// Rank histogram of one parameter: per-chain counts of the cross-chain
/// ranks in [`RANK_BINS`] equal bins, plus a chi-square uniformity
/// statistic and p-value per chain. Ties get average ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub bins: Vec<Vec<usize>>,
    pub chi2: Vec<f64>,
    pub p_value: Vec<f64>,
}

pub fn rank_histogram(chains: &[Vec<f64>]) -> Result<RankHistogram> {
    let n = check_chains(chains)?;
    let m = chains.len();
    let total = m * n;

    // global average ranks (1-based)
    let mut order: Vec<usize> = (0..total).collect();
    let value = |idx: usize| chains[idx / n][idx % n];
    order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
    let mut ranks = vec![0.0f64; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && value(order[j + 1]) == value(order[i]) {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let mut bins = vec![vec![0usize; RANK_BINS]; m];
    for c in 0..m {
        for t in 0..n {
            let u = (ranks[c * n + t] - 0.5) / total as f64;
            let b = ((u * RANK_BINS as f64) as usize).min(RANK_BINS - 1);
            bins[c][b] += 1;
        }
    }

    let expected = n as f64 / RANK_BINS as f64;
    let chi2: Vec<f64> = bins
        .iter()
        .map(|chain_bins| {
            chain_bins
                .iter()
                .map(|&o| {
                    let d = o as f64 - expected;
                    d * d / expected
                })
                .sum()
        })
        .collect();
    let df = (RANK_BINS - 1) as f64;
    let p_value = chi2.iter().map(|&x| gamma_ur(df / 2.0, x / 2.0)).collect();

    Ok(RankHistogram { bins, chi2, p_value })
}

/// Per-parameter diagnostics of a draw matrix (analysis scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub params: Vec<String>,
    pub ess: Vec<f64>,
    pub split_rhat: Vec<f64>,
    pub rank_histograms: Vec<RankHistogram>,
    /// Parameters whose diagnostics could not be computed.
    pub failures: Vec<String>,
}

impl ChainDiagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.split_rhat.iter().cloned().fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().cloned().fold(f64::NAN, f64::min)
    }
}

/// Compute ESS, split R-hat, and rank histograms for every parameter.
/// Individual failures are recorded rather than aborting the report.
pub fn diagnose(draws: &DrawMatrix) -> ChainDiagnostics {
    let layout = draws.layout();
    let mut out = ChainDiagnostics {
        params: Vec::with_capacity(layout.len()),
        ess: Vec::with_capacity(layout.len()),
        split_rhat: Vec::with_capacity(layout.len()),
        rank_histograms: Vec::with_capacity(layout.len()),
        failures: Vec::new(),
    };
    for i in 0..layout.len() {
        let name = layout.display_name(i);
        let cols = draws.per_chain_analysis(i);
        let e = ess(&cols);
        let r = split_rhat(&cols);
        let h = rank_histogram(&cols);
        if e.is_err() || r.is_err() || h.is_err() {
            out.failures.push(name.clone());
        }
        out.params.push(name);
        out.ess.push(e.unwrap_or(f64::NAN));
        out.split_rhat.push(r.unwrap_or(f64::NAN));
        out.rank_histograms.push(h.unwrap_or(RankHistogram {
            bins: vec![vec![0; RANK_BINS]; draws.chains().len()],
            chi2: vec![f64::NAN; draws.chains().len()],
            p_value: vec![f64::NAN; draws.chains().len()],
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iid_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_from_seed(seed);
        (0..m)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn ar1_chains(m: usize, n: usize, rho: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_from_seed(seed);
        let innov_sd = (1.0 - rho * rho).sqrt();
        (0..m)
            .map(|_| {
                let mut x = rng.sample::<f64, _>(StandardNormal);
                (0..n)
                    .map(|_| {
                        x = rho * x + innov_sd * rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn ess_of_iid_draws_is_near_total() {
        let chains = iid_chains(4, 2000, 1);
        let e = ess(&chains).unwrap();
        assert!(e >= 0.8 * 8000.0 && e <= 1.2 * 8000.0, "ess {e}");
    }

    #[test]
    fn ess_of_ar1_matches_formula() {
        // ESS ~ total * (1 - rho) / (1 + rho) = 8000/3 for rho = 0.5
        let chains = ar1_chains(4, 2000, 0.5, 2);
        let e = ess(&chains).unwrap();
        let expect = 8000.0 * (1.0 - 0.5) / (1.0 + 0.5);
        assert!((e - expect).abs() / expect < 0.2, "ess {e}, expect {expect}");
    }

    #[test]
    fn degenerate_chains_error() {
        let chains = vec![vec![1.0; 200], vec![1.0; 200]];
        assert!(ess(&chains).is_err());
        assert!(split_rhat(&chains).is_err());
        assert!(rank_histogram(&chains).is_err());
        assert!(ess(&[vec![0.0; 200]]).is_err()); // one chain
        assert!(ess(&iid_chains(4, 50, 3)).is_err()); // too short
    }

    #[test]
    fn rhat_near_one_for_iid() {
        let r = split_rhat(&iid_chains(4, 2000, 4)).unwrap();
        assert!((0.999..=1.01).contains(&r), "rhat {r}");
    }

    #[test]
    fn rhat_flags_separated_chains() {
        let mut chains = iid_chains(2, 1000, 5);
        for v in &mut chains[1] {
            *v += 10.0;
        }
        let r = split_rhat(&chains).unwrap();
        assert!(r > 3.0, "rhat {r}");
    }

    #[test]
    fn rhat_flags_trend_within_single_split_chain() {
        // two chains, each with a strong trend: halves differ in mean
        let mut chains = iid_chains(2, 1000, 6);
        for chain in &mut chains {
            for (t, v) in chain.iter_mut().enumerate() {
                *v += 4.0 * t as f64 / 1000.0;
            }
        }
        let r = split_rhat(&chains).unwrap();
        assert!(r > 1.1, "rhat {r}");
    }

    #[test]
    fn rank_histogram_uniform_for_iid() {
        let chains = iid_chains(4, 2000, 7);
        let h = rank_histogram(&chains).unwrap();
        let expected = 2000.0 / RANK_BINS as f64;
        for chain_bins in &h.bins {
            assert_eq!(chain_bins.iter().sum::<usize>(), 2000);
            for &o in chain_bins {
                assert!(
                    (o as f64 - expected).abs() < 5.0 * expected.sqrt(),
                    "bin count {o} vs expected {expected}"
                );
            }
        }
        assert!(h.p_value.iter().all(|&p| p > 0.001));
    }

    #[test]
    fn rank_histogram_flags_shifted_chain() {
        let mut chains = iid_chains(4, 2000, 8);
        for v in &mut chains[3] {
            *v += 5.0;
        }
        let h = rank_histogram(&chains).unwrap();
        // the shifted chain dominates the top bin
        let top = h.bins[3][RANK_BINS - 1];
        assert!(top as f64 > 3.0 * 2000.0 / RANK_BINS as f64, "top bin {top}");
        assert!(h.p_value[3] < 1e-6);
    }

    #[test]
    fn rank_histogram_handles_ties() {
        let mut chains = iid_chains(2, 500, 9);
        // heavy ties
        for chain in &mut chains {
            for v in chain.iter_mut() {
                *v = (*v * 2.0).round();
            }
        }
        let h = rank_histogram(&chains).unwrap();
        for chain_bins in &h.bins {
            assert_eq!(chain_bins.iter().sum::<usize>(), 500);
        }
    }
}
