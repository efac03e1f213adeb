//! Relative latent model complexity (RLMC) and heterogeneity-prior grids.
//!
//! `rlmc` is the study-averaged pooling index `(1/k) sum tau^2 / (tau^2 +
//! sigma_i^2)`; evaluated at the prior median of `tau` it summarizes how
//! much pooling a heterogeneity prior induces on a given dataset.
//!
//! The grid solver inverts a reference-variance form of the index,
//! `tau^2 / (tau^2 + sigma_g^2)` with `sigma_g` the geometric mean of the
//! within-study sds. Published heterogeneity-prior grids for half-normal
//! scales follow this construction (it makes the solved scales exactly
//! proportional to `sqrt(t / (1 - t))`), so it is the one `solve_scale`
//! uses; the study-averaged index is reported alongside.

use serde::{Deserialize, Serialize};

use crate::distributions::{DistSpec, HALF_NORMAL_MEDIAN_UNIT};
use crate::error::Error;
use crate::roots;
use crate::Result;

/// Study-averaged relative latent model complexity.
pub fn rlmc(tau: f64, sigmas: &[f64]) -> Result<f64> {
    check_sigmas(sigmas)?;
    if !(tau >= 0.0) {
        return Err(Error::parameter(format!("tau must be >= 0, got {tau}")));
    }
    let t2 = tau * tau;
    Ok(sigmas.iter().map(|s| t2 / (t2 + s * s)).sum::<f64>() / sigmas.len() as f64)
}

/// Geometric mean of the within-study standard deviations.
pub fn geometric_reference_sd(sigmas: &[f64]) -> Result<f64> {
    check_sigmas(sigmas)?;
    Ok((sigmas.iter().map(|s| s.ln()).sum::<f64>() / sigmas.len() as f64).exp())
}

/// Reference-variance RLMC: `tau^2 / (tau^2 + sigma_g^2)`.
pub fn rlmc_ref(tau: f64, sigmas: &[f64]) -> Result<f64> {
    let sg = geometric_reference_sd(sigmas)?;
    if !(tau >= 0.0) {
        return Err(Error::parameter(format!("tau must be >= 0, got {tau}")));
    }
    let t2 = tau * tau;
    Ok(t2 / (t2 + sg * sg))
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::data("empty within-study sd vector"));
    }
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::data("within-study sds must be positive"));
    }
    Ok(())
}

/// Heterogeneity-prior family with a closed-form median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeterogeneityPrior {
    HalfNormal,
    HalfCauchy,
}

impl HeterogeneityPrior {
    /// Median of the unit-scale member.
    pub fn median_unit(&self) -> f64 {
        match self {
            HeterogeneityPrior::HalfNormal => HALF_NORMAL_MEDIAN_UNIT,
            HeterogeneityPrior::HalfCauchy => 1.0,
        }
    }

    pub fn dist(&self, scale: f64) -> Result<DistSpec> {
        match self {
            HeterogeneityPrior::HalfNormal => DistSpec::half_normal(scale),
            HeterogeneityPrior::HalfCauchy => DistSpec::half_cauchy(scale),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hn" | "halfnormal" | "half-normal" => Ok(HeterogeneityPrior::HalfNormal),
            "hc" | "halfcauchy" | "half-cauchy" => Ok(HeterogeneityPrior::HalfCauchy),
            other => Err(Error::parameter(format!("unknown heterogeneity prior `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeterogeneityPrior::HalfNormal => "HN",
            HeterogeneityPrior::HalfCauchy => "HC",
        }
    }
}

/// RLMC at the prior median of `tau` under a `family(scale)` prior
/// (study-averaged form).
pub fn effective_median_rlmc(
    scale: f64,
    family: HeterogeneityPrior,
    sigmas: &[f64],
) -> Result<f64> {
    rlmc(scale * family.median_unit(), sigmas)
}

/// Solve for the prior scale whose median-`tau` reference RLMC equals
/// `target`. The map from scale to reference RLMC is strictly increasing,
/// so the root is unique; it is found by bracketed Brent iteration to an
/// RLMC residual below 1e-8.
pub fn solve_scale(target: f64, sigmas: &[f64], family: HeterogeneityPrior) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::parameter(format!(
            "RLMC target must lie in (0, 1), got {target}"
        )));
    }
    let sg = geometric_reference_sd(sigmas)?;
    let unit = family.median_unit();
    let f = |c: f64| {
        let tau = c * unit;
        let t2 = tau * tau;
        t2 / (t2 + sg * sg) - target
    };
    let guess = sg / unit;
    let (lo, hi) = roots::expand_bracket(f, guess, 1e-12, 1e15)
        .ok_or_else(|| Error::Numeric("bracket expansion failed for RLMC scale".into()))?;
    let c = roots::brent(f, lo, hi, 0.0, 1e-12, 200)
        .ok_or_else(|| Error::Numeric("root finding failed for RLMC scale".into()))?;
    if f(c).abs() > 1e-8 {
        return Err(Error::Numeric(format!(
            "RLMC solver residual {} above tolerance",
            f(c).abs()
        )));
    }
    Ok(c)
}

/// A solved grid of heterogeneity-prior scales for a set of RLMC targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlmcGrid {
    pub targets: Vec<f64>,
    pub scales: Vec<f64>,
    pub family: HeterogeneityPrior,
    pub sigmas: Vec<f64>,
}

impl RlmcGrid {
    /// Solve every target; targets must be strictly increasing.
    pub fn solve(targets: &[f64], sigmas: &[f64], family: HeterogeneityPrior) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::parameter("empty RLMC target grid".into()));
        }
        if targets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::parameter("RLMC targets must be strictly increasing".into()));
        }
        let scales = targets
            .iter()
            .map(|&t| solve_scale(t, sigmas, family))
            .collect::<Result<Vec<_>>>()?;
        debug_assert!(scales.windows(2).all(|w| w[0] < w[1]));
        Ok(RlmcGrid { targets: targets.to_vec(), scales, family, sigmas: sigmas.to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{eight_schools, MetaDataset};
    use approx::assert_abs_diff_eq;

    fn sigmas() -> Vec<f64> {
        let MetaDataset::NormalEffects(d) = eight_schools() else { unreachable!() };
        d.sigma
    }

    #[test]
    fn boundary_values() {
        let s = sigmas();
        assert_eq!(rlmc(0.0, &s).unwrap(), 0.0);
        assert!(rlmc(1e6 * 18.0, &s).unwrap() >= 1.0 - 1e-9);
        assert!(rlmc(1.0, &[]).is_err());
        assert!(rlmc(-1.0, &s).is_err());
    }

    #[test]
    fn effective_median_rlmc_of_hn5() {
        // direct arithmetic on the study-averaged index at the HN(5) median
        let v = effective_median_rlmc(5.0, HeterogeneityPrior::HalfNormal, &sigmas()).unwrap();
        assert_abs_diff_eq!(v, 0.0779710, epsilon = 1e-6);
        assert!((v - 0.08).abs() < 0.005);
    }

    #[test]
    fn monotone_in_tau_and_scale_equivariant() {
        let s = sigmas();
        let mut prev = -1.0;
        for i in 1..40 {
            let v = rlmc(i as f64 * 0.5, &s).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let c = 3.7;
        let scaled: Vec<f64> = s.iter().map(|x| c * x).collect();
        for tau in [0.5, 2.0, 11.0] {
            assert_abs_diff_eq!(
                rlmc(tau, &s).unwrap(),
                rlmc(c * tau, &scaled).unwrap(),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn solved_grid_matches_closed_form() {
        // closed form: c = sigma_g * sqrt(t / (1 - t)) / median_unit
        let s = sigmas();
        let sg = geometric_reference_sd(&s).unwrap();
        for t in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let c = solve_scale(t, &s, HeterogeneityPrior::HalfNormal).unwrap();
            let closed = sg * (t / (1.0 - t)).sqrt() / HALF_NORMAL_MEDIAN_UNIT;
            assert_abs_diff_eq!(c, closed, epsilon = 1e-6 * closed);
        }
    }

    #[test]
    fn eight_schools_grid_reproduces_published_scales() {
        let grid = RlmcGrid::solve(
            &[0.05, 0.25, 0.5, 0.75, 0.95],
            &sigmas(),
            HeterogeneityPrior::HalfNormal,
        )
        .unwrap();
        let published = [4.1, 10.4, 18.0, 31.2, 78.4];
        for (c, p) in grid.scales.iter().zip(published) {
            assert!((c - p).abs() / p < 0.02, "solved {c} vs published {p}");
        }
    }

    #[test]
    fn grid_round_trip() {
        let s = sigmas();
        for &(family, targets) in &[
            (HeterogeneityPrior::HalfNormal, [0.05, 0.25, 0.5, 0.75, 0.95]),
            (HeterogeneityPrior::HalfCauchy, [0.1, 0.3, 0.5, 0.7, 0.9]),
        ] {
            let grid = RlmcGrid::solve(&targets, &s, family).unwrap();
            assert!(grid.scales.windows(2).all(|w| w[0] < w[1]));
            for (&c, &t) in grid.scales.iter().zip(&targets) {
                let tau = c * family.median_unit();
                let back = rlmc_ref(tau, &s).unwrap();
                assert!((back - t).abs() < 1e-6, "target {t}, got {back}");
            }
        }
    }

    #[test]
    fn solver_input_validation() {
        let s = sigmas();
        assert!(solve_scale(0.0, &s, HeterogeneityPrior::HalfNormal).is_err());
        assert!(solve_scale(1.0, &s, HeterogeneityPrior::HalfNormal).is_err());
        assert!(RlmcGrid::solve(&[0.5, 0.25], &s, HeterogeneityPrior::HalfNormal).is_err());
    }
}
