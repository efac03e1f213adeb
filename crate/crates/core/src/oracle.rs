//! Closed-form and brute-force validators: conjugate posteriors under
//! likelihood weighting, quadrature Bhattacharyya coefficients, and the
//! polygamma values that anchor the log-precision summaries. These back the
//! test suite and the `oracle-check` command; nothing here is used by the
//! estimation pipeline itself.

use serde::{Deserialize, Serialize};

use crate::determinacy::{bc_normal, NormalSummary};
use crate::error::Error;
use crate::Result;

/// Which conjugate summary a [`ConjugateResult`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConjugateKind {
    NormalMean,
    LogPrecision,
}

/// Closed-form posterior summary under likelihood weight `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateResult {
    pub w: f64,
    pub mean: f64,
    pub sd: f64,
    pub kind: ConjugateKind,
}

impl ConjugateResult {
    pub fn summary(&self) -> NormalSummary {
        NormalSummary::new(self.mean, self.sd).expect("conjugate sd is positive")
    }
}

/// Weighted conjugate update for a normal mean with known sampling sd
/// `sigma0` and a normal prior with mean `m0` and variance `v0`:
/// posterior precision `1/v0 + w n / sigma0^2`.
pub fn normal_mean_posterior(
    data: &[f64],
    sigma0: f64,
    m0: f64,
    v0: f64,
    w: f64,
) -> Result<ConjugateResult> {
    if data.is_empty() {
        return Err(Error::data("normal-mean oracle needs data"));
    }
    if !(sigma0 > 0.0) || !(v0 > 0.0) || !(w > 0.0) {
        return Err(Error::parameter(format!(
            "need sigma0 > 0, v0 > 0, w > 0 (got {sigma0}, {v0}, {w})"
        )));
    }
    let n = data.len() as f64;
    let ybar = data.iter().sum::<f64>() / n;
    let prec = 1.0 / v0 + w * n / (sigma0 * sigma0);
    let mean = (m0 / v0 + w * n * ybar / (sigma0 * sigma0)) / prec;
    Ok(ConjugateResult { w, mean, sd: prec.sqrt().recip(), kind: ConjugateKind::NormalMean })
}

/// Weighted conjugate update for a normal precision with known mean: a
/// `Gamma(a, b)` prior (rate parameterization) becomes `Gamma(a + w n / 2,
/// b + w S / 2)` with `S = sum (x - mean)^2`. Returned moments are those of
/// the **log** precision: mean `digamma(a') - ln b'`, sd `sqrt(trigamma(a'))`.
pub fn normal_precision_posterior(
    data: &[f64],
    known_mean: f64,
    a: f64,
    b: f64,
    w: f64,
) -> Result<ConjugateResult> {
    if !(a > 0.0) || !(b > 0.0) || !(w > 0.0) {
        return Err(Error::parameter(format!(
            "need a > 0, b > 0, w > 0 (got {a}, {b}, {w})"
        )));
    }
    let n = data.len() as f64;
    let s: f64 = data.iter().map(|&x| (x - known_mean) * (x - known_mean)).sum();
    let a_post = a + w * n / 2.0;
    let b_post = b + w * s / 2.0;
    Ok(ConjugateResult {
        w,
        mean: digamma(a_post) - b_post.ln(),
        sd: trigamma(a_post).sqrt(),
        kind: ConjugateKind::LogPrecision,
    })
}

/// Trapezoid Bhattacharyya coefficient of two densities sampled on a common
/// grid. Both must integrate to 1 on the grid within 1e-6.
pub fn quadrature_bc(grid: &[f64], f: &[f64], g: &[f64]) -> Result<f64> {
    if grid.len() != f.len() || grid.len() != g.len() || grid.len() < 2 {
        return Err(Error::data("grid and density arrays must share a length >= 2".into()));
    }
    if f.iter().chain(g).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::data("densities must be finite and non-negative"));
    }
    for (name, dens) in [("first", f), ("second", g)] {
        let total = trapezoid(grid, dens);
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::data(format!(
                "{name} density integrates to {total} on the grid; normalize it first"
            )));
        }
    }
    let prod: Vec<f64> = f.iter().zip(g).map(|(&a, &b)| (a * b).sqrt()).collect();
    Ok(trapezoid(grid, &prod))
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| (x[1] - x[0]) * (v[0] + v[1]) / 2.0)
        .sum()
}

/// Audit gap of the moment-matching approximation: the quadrature
/// coefficient between a gridded density and the normal with the given
/// summary, compared against the closed normal-normal form between the
/// density's moment-matched summary and that same normal.
pub fn normal_approx_error(grid: &[f64], density: &[f64], summary: &NormalSummary) -> Result<f64> {
    let normal: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let z = (x - summary.mean) / summary.sd;
            (-0.5 * z * z).exp() / (summary.sd * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let quad = quadrature_bc(grid, density, &normal)?;
    let (m, sd) = moments_on_grid(grid, density);
    let matched = NormalSummary::new(m, sd)?;
    Ok((quad - bc_normal(&matched, summary)).abs())
}

/// Mean and sd of a gridded density by trapezoid integration.
pub fn moments_on_grid(grid: &[f64], density: &[f64]) -> (f64, f64) {
    let weighted: Vec<f64> = grid.iter().zip(density).map(|(&x, &d)| x * d).collect();
    let mean = trapezoid(grid, &weighted);
    let second: Vec<f64> = grid
        .iter()
        .zip(density)
        .map(|(&x, &d)| (x - mean) * (x - mean) * d)
        .collect();
    (mean, trapezoid(grid, &second).sqrt())
}

// ---------------------------------------------------------------------------
// Polygamma functions
// ---------------------------------------------------------------------------

/// Digamma by upward recurrence into the asymptotic regime.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma requires x > 0");
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    // Bernoulli-number series at large x
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln() - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 120.0
                        - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))))
}

/// Trigamma by upward recurrence into the asymptotic regime.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires x > 0");
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv * (1.0
        + inv * (0.5
            + inv * (1.0 / 6.0
                - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0))))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::determinacy::{bc_split, determinacy_from_summaries};
    use approx::assert_abs_diff_eq;

    const EULER_GAMMA: f64 = 0.5772156649015329;

    #[test]
    fn digamma_known_values() {
        assert_abs_diff_eq!(digamma(1.0), -EULER_GAMMA, epsilon = 1e-12);
        assert_abs_diff_eq!(
            digamma(0.5),
            -EULER_GAMMA - 2.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // recurrence spot check: psi(x+1) = psi(x) + 1/x
        for x in [0.3, 1.7, 5.5, 42.0] {
            assert_abs_diff_eq!(digamma(x + 1.0), digamma(x) + 1.0 / x, epsilon = 1e-12);
        }
    }

    #[test]
    fn digamma_matches_reference_implementation() {
        for i in 1..200 {
            let x = i as f64 * 0.37;
            assert_abs_diff_eq!(
                digamma(x),
                statrs::function::gamma::digamma(x),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn trigamma_known_values() {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert_abs_diff_eq!(trigamma(1.0), pi2 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trigamma(0.5), pi2 / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trigamma(2.0), pi2 / 6.0 - 1.0, epsilon = 1e-12);
        for x in [0.4, 2.3, 9.9, 77.0] {
            assert_abs_diff_eq!(
                trigamma(x + 1.0),
                trigamma(x) - 1.0 / (x * x),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn flat_prior_normal_mean() {
        let data: Vec<f64> = (0..50).map(|i| 2.0 + (i as f64 % 7.0) * 0.1).collect();
        let n = data.len() as f64;
        let ybar = data.iter().sum::<f64>() / n;
        let r = normal_mean_posterior(&data, 1.0, 0.0, 1e12, 1.0).unwrap();
        assert_abs_diff_eq!(r.mean, ybar, epsilon = 1e-9);
        assert_abs_diff_eq!(r.sd, (1.0 / n).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn doubling_weight_halves_variance_under_flat_prior() {
        let data = vec![1.0, 2.0, 3.0, 4.0];
        let r1 = normal_mean_posterior(&data, 2.0, 0.0, 1e12, 1.0).unwrap();
        let r2 = normal_mean_posterior(&data, 2.0, 0.0, 1e12, 2.0).unwrap();
        assert_abs_diff_eq!(r2.sd, r1.sd / 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn analytic_ted_triple_for_flat_prior_mean_path() {
        let data: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let delta = 0.01;
        let at = |w: f64| normal_mean_posterior(&data, 1.3, 0.0, 1e12, w).unwrap().summary();
        let t = determinacy_from_summaries(&at(1.0), &at(1.0 - delta), &at(1.0 + delta), delta);
        assert_abs_diff_eq!(t.ted, 0.125, epsilon = 1e-4);
        assert!(t.pedl.unwrap() < 1e-6);
        assert!((t.peds.unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn precision_posterior_prior_returned_without_data() {
        let r = normal_precision_posterior(&[], 0.0, 2.0, 3.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.mean, digamma(2.0) - 3.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.sd, trigamma(2.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn precision_log_sd_decreases_in_w() {
        let data: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.2 - 1.0).collect();
        let mut prev = f64::INFINITY;
        for w in [0.5, 1.0, 2.0, 4.0] {
            let r = normal_precision_posterior(&data, 0.0, 0.001, 0.001, w).unwrap();
            assert!(r.sd < prev);
            prev = r.sd;
        }
    }

    #[test]
    fn precision_path_peds_near_one() {
        let data: Vec<f64> = (0..50).map(|i| ((i * 29) % 13) as f64 * 0.3 - 1.8).collect();
        let delta = 0.01;
        let at = |w: f64| {
            normal_precision_posterior(&data, 0.0, 0.001, 0.001, w)
                .unwrap()
                .summary()
        };
        let t = determinacy_from_summaries(&at(1.0), &at(1.0 - delta), &at(1.0 + delta), delta);
        assert!(t.peds.unwrap() >= 0.95, "peds {}", t.peds.unwrap());
    }

    fn normal_grid(mean: f64, sd: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lo = mean - 10.0 * sd;
        let hi = mean + 10.0 * sd;
        let grid: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n as f64 - 1.0))
            .collect();
        let dens = grid
            .iter()
            .map(|&x| {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        (grid, dens)
    }

    #[test]
    fn quadrature_matches_closed_form_for_normals() {
        let (grid, f) = normal_grid(0.0, 1.0, 10_000);
        // same grid must cover the second density too
        let g: Vec<f64> = grid
            .iter()
            .map(|&x| {
                let z = (x - 0.8) / 1.4;
                (-0.5 * z * z).exp() / (1.4 * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        let bc = quadrature_bc(&grid, &f, &g).unwrap();
        let closed = bc_normal(
            &NormalSummary::new(0.0, 1.0).unwrap(),
            &NormalSummary::new(0.8, 1.4).unwrap(),
        );
        assert_abs_diff_eq!(bc, closed, epsilon = 1e-6);
    }

    #[test]
    fn quadrature_identity_and_disjoint_cases() {
        let (grid, f) = normal_grid(0.0, 1.0, 10_000);
        assert_abs_diff_eq!(quadrature_bc(&grid, &f, &f).unwrap(), 1.0, epsilon = 1e-6);

        // disjoint supports on a shared grid
        let n = 4000;
        let grid: Vec<f64> = (0..n).map(|i| -10.0 + 20.0 * i as f64 / (n as f64 - 1.0)).collect();
        let h = 20.0 / (n as f64 - 1.0);
        let mut f = vec![0.0; n];
        let mut g = vec![0.0; n];
        let width = 800;
        for i in 0..width {
            f[200 + i] = 1.0 / (h * (width - 1) as f64);
            g[2400 + i] = 1.0 / (h * (width - 1) as f64);
        }
        let bc = quadrature_bc(&grid, &f, &g).unwrap();
        assert_abs_diff_eq!(bc, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_rejects_unnormalized_or_mismatched() {
        let (grid, mut f) = normal_grid(0.0, 1.0, 1000);
        assert!(quadrature_bc(&grid[..999], &f[..998], &f[..999]).is_err());
        for v in &mut f {
            *v *= 2.0;
        }
        let (_, g) = normal_grid(0.0, 1.0, 1000);
        assert!(quadrature_bc(&grid, &f, &g).is_err());
    }

    fn gamma_density_grid(shape: f64, rate: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mean = shape / rate;
        let sd = shape.sqrt() / rate;
        let lo = (mean - 10.0 * sd).max(1e-9);
        let hi = mean + 12.0 * sd;
        let grid: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n as f64 - 1.0))
            .collect();
        let ln_norm = shape * rate.ln() - statrs::function::gamma::ln_gamma(shape);
        let dens: Vec<f64> = grid
            .iter()
            .map(|&x| (ln_norm + (shape - 1.0) * x.ln() - rate * x).exp())
            .collect();
        // renormalize on the grid to absorb tail truncation
        let total = trapezoid(&grid, &dens);
        (grid, dens.into_iter().map(|d| d / total).collect())
    }

    #[test]
    fn normal_approx_error_shrinks_for_near_normal_shapes() {
        let (grid, f) = normal_grid(1.0, 2.0, 10_000);
        let s = NormalSummary::new(1.0, 2.0).unwrap();
        assert!(normal_approx_error(&grid, &f, &s).unwrap() < 1e-6);

        let (grid, dens) = gamma_density_grid(50.0, 5.0, 20_000);
        let (m, sd) = moments_on_grid(&grid, &dens);
        let s = NormalSummary::new(m, sd).unwrap();
        let err_near_normal = normal_approx_error(&grid, &dens, &s).unwrap();
        assert!(err_near_normal < 1e-3, "gamma(50) error {err_near_normal}");

        let (grid2, dens2) = gamma_density_grid(2.0, 1.0, 20_000);
        let (m2, sd2) = moments_on_grid(&grid2, &dens2);
        let s2 = NormalSummary::new(m2, sd2).unwrap();
        let err_skewed = normal_approx_error(&grid2, &dens2, &s2).unwrap();
        assert!(err_skewed > err_near_normal, "{err_skewed} vs {err_near_normal}");

        // log transform brings the skewed case closer to normal
        let log_grid: Vec<f64> = grid2.iter().map(|&x| x.ln()).collect();
        let log_dens: Vec<f64> = dens2.iter().zip(&grid2).map(|(&d, &x)| d * x).collect();
        let (ml, sdl) = moments_on_grid(&log_grid, &log_dens);
        let sl = NormalSummary::new(ml, sdl).unwrap();
        let err_log = normal_approx_error(&log_grid, &log_dens, &sl).unwrap();
        assert!(err_log < err_skewed, "log {err_log} vs raw {err_skewed}");
    }

    #[test]
    fn split_factors_bound_by_one_on_conjugate_paths() {
        let data = vec![0.2, -0.4, 1.1, 0.7];
        let base = normal_mean_posterior(&data, 1.0, 0.0, 4.0, 1.0).unwrap().summary();
        for w in [0.9, 0.99, 1.01, 1.1] {
            let s = normal_mean_posterior(&data, 1.0, 0.0, 4.0, w).unwrap().summary();
            let (l, sp) = bc_split(&base, &s);
            assert!(l > 0.0 && l <= 1.0 && sp > 0.0 && sp <= 1.0);
        }
    }
}
