//! Moments of the likelihood-weighted posterior from base-model draws.
//!
//! Raising the likelihood to a power `w` multiplies the base posterior
//! density by `pi(y | psi)^(w-1)`, so the weighted posterior's moments are
//! importance-weighted moments of the base draws with per-draw log-weights
//! `(w - 1) * loglik`. No re-sampling is needed; the per-draw log-likelihood
//! stored in the [`DrawMatrix`] is all the mechanism requires.
//!
//! The Kish effective size `(sum c)^2 / (sum c^2)` guards against weight
//! degeneracy: below half the draw count a warning is attached, below 5% the
//! computation refuses and a direct refit should be used instead.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::models::{MetaDataset, ModelSpec};
use crate::sampler::DrawMatrix;
use crate::Result;

/// Weighted posterior moments on the analysis scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedMoments {
    pub w: f64,
    /// Analysis-scale display names, in layout order.
    pub params: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Kish effective size of the importance weights.
    pub kish_ess: f64,
    /// Kish size fell below half the draw count.
    pub degeneracy_warning: bool,
}

/// Stabilized log importance weights `(w - 1) * loglik`, shifted so the
/// largest is zero (weights are defined up to a constant).
pub fn log_weights(loglik: &[f64], w: f64) -> Result<Vec<f64>> {
    if !(w > 0.0) {
        return Err(Error::parameter(format!("weight must be positive, got {w}")));
    }
    if loglik.iter().any(|l| !l.is_finite()) {
        return Err(Error::data("non-finite log-likelihood among draws"));
    }
    let mut lw: Vec<f64> = loglik.iter().map(|&l| (w - 1.0) * l).collect();
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in &mut lw {
        *v -= max;
    }
    Ok(lw)
}

/// Mean and standard deviation of every parameter under the weighted
/// posterior, on its analysis scale (log-precision for scale parameters).
///
/// At `w = 1` this reduces exactly to the plain sample moments.
pub fn weighted_moments(draws: &DrawMatrix, w: f64) -> Result<WeightedMoments> {
    let mut out = moments_multi(draws, &[w])?;
    Ok(out.pop().expect("one weight requested"))
}

/// Weighted moments at `w = 1 - delta` and `w = 1 + delta` from the same
/// draws in a single pass.
pub fn moments_pair(draws: &DrawMatrix, delta: f64) -> Result<(WeightedMoments, WeightedMoments)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::parameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let mut out = moments_multi(draws, &[1.0 - delta, 1.0 + delta])?;
    let plus = out.pop().expect("two weights requested");
    let minus = out.pop().expect("two weights requested");
    Ok((minus, plus))
}

fn moments_multi(draws: &DrawMatrix, ws: &[f64]) -> Result<Vec<WeightedMoments>> {
    let m = draws.total_draws();
    if m == 0 {
        return Err(Error::data("empty draw matrix"));
    }
    let loglik = draws.pooled_loglik();
    let layout = draws.layout();
    let names: Vec<String> = (0..layout.len()).map(|i| layout.display_name(i)).collect();

    let mut results = Vec::with_capacity(ws.len());
    for &w in ws {
        let lw = log_weights(&loglik, w)?;
        let c: Vec<f64> = lw.iter().map(|&v| v.exp()).collect();
        let c_sum: f64 = c.iter().sum();
        let c_sq: f64 = c.iter().map(|v| v * v).sum();
        let kish = c_sum * c_sum / c_sq;

        if kish < 0.05 * m as f64 {
            return Err(Error::WeightDegeneracy(format!(
                "Kish effective size {kish:.1} of {m} draws at w = {w}; refit directly"
            )));
        }

        let mut mean = Vec::with_capacity(layout.len());
        let mut sd = Vec::with_capacity(layout.len());
        for i in 0..layout.len() {
            let x = draws.pooled_analysis(i);
            let mu = if w == 1.0 {
                x.iter().sum::<f64>() / m as f64
            } else {
                x.iter().zip(&c).map(|(&xi, &ci)| ci * xi).sum::<f64>() / c_sum
            };
            let var = if w == 1.0 {
                x.iter().map(|&xi| (xi - mu) * (xi - mu)).sum::<f64>() / m as f64
            } else {
                x.iter()
                    .zip(&c)
                    .map(|(&xi, &ci)| ci * (xi - mu) * (xi - mu))
                    .sum::<f64>()
                    / c_sum
            };
            mean.push(mu);
            sd.push(var.sqrt());
        }

        results.push(WeightedMoments {
            w,
            params: names.clone(),
            mean,
            sd,
            kish_ess: kish,
            degeneracy_warning: kish < 0.5 * m as f64,
        });
    }
    Ok(results)
}

/// Recompute every stored per-draw log-likelihood from scratch and return
/// the largest relative discrepancy.
pub fn audit_loglik(model: &ModelSpec, data: &MetaDataset, draws: &DrawMatrix) -> Result<f64> {
    let p = draws.layout().len();
    let mut worst: f64 = 0.0;
    for chain in draws.chains() {
        for (row, &stored) in chain.loglik.iter().enumerate() {
            let params = &chain.draws[row * p..(row + 1) * p];
            let fresh = model.log_likelihood(data, params)?;
            let denom = stored.abs().max(1.0);
            worst = worst.max((fresh - stored).abs() / denom);
        }
    }
    Ok(worst)
}
