//! Probability distributions used by priors, likelihoods, and the RLMC solver.
//!
//! Only the six families the model zoo requires are implemented. Conventions:
//!
//! - `Normal(m, v)` and `ExpNormal(m, v)` are parameterized by mean and
//!   **variance**, so the config string `N(0,16)` means standard deviation 4.
//! - Half-distributions take the scale of the underlying symmetric
//!   distribution centered at 0; support is `[0, inf)`.
//! - `SqrtInvGamma(a, b)` is the distribution of `X` with `X^2 ~
//!   InverseGamma(a, b)`, evaluated through the inverse-gamma density with an
//!   explicit Jacobian.

use std::fmt;

use rand::Rng;
use rand_distr::Distribution as _;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::Error;
use crate::rng::RngStream;
use crate::roots;
use crate::Result;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Median of a half-normal with unit scale: sqrt(2) * erfinv(1/2).
pub const HALF_NORMAL_MEDIAN_UNIT: f64 = 0.674_489_750_196_081_7;

/// Log-density of a normal with mean `m` and variance `v`.
#[inline]
pub(crate) fn normal_log_pdf(x: f64, m: f64, v: f64) -> f64 {
    let d = x - m;
    -0.5 * (LN_2PI + v.ln()) - d * d / (2.0 * v)
}

/// Standard normal CDF.
#[inline]
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// A validated distribution specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistSpec {
    /// Mean and variance.
    Normal { mean: f64, var: f64 },
    /// Scale of the underlying normal; support `[0, inf)`.
    HalfNormal { scale: f64 },
    /// Scale of the underlying Cauchy; support `[0, inf)`.
    HalfCauchy { scale: f64 },
    /// `X` with `X^2 ~ InverseGamma(shape, rate)`.
    SqrtInvGamma { shape: f64, rate: f64 },
    /// `exp(Z)` with `Z ~ Normal(mean, var)`.
    ExpNormal { mean: f64, var: f64 },
    /// Trials and success probability.
    Binomial { n: u64, p: f64 },
}

impl DistSpec {
    pub fn normal(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() || var <= 0.0 {
            return Err(Error::parameter(format!(
                "Normal requires finite mean and variance > 0, got N({mean}, {var})"
            )));
        }
        Ok(DistSpec::Normal { mean, var })
    }

    pub fn half_normal(scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::parameter(format!(
                "HalfNormal requires scale > 0, got HN({scale})"
            )));
        }
        Ok(DistSpec::HalfNormal { scale })
    }

    pub fn half_cauchy(scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::parameter(format!(
                "HalfCauchy requires scale > 0, got HC({scale})"
            )));
        }
        Ok(DistSpec::HalfCauchy { scale })
    }

    pub fn sqrt_inv_gamma(shape: f64, rate: f64) -> Result<Self> {
        if !shape.is_finite() || !rate.is_finite() || shape <= 0.0 || rate <= 0.0 {
            return Err(Error::parameter(format!(
                "SqrtInvGamma requires shape > 0 and rate > 0, got SqrtIG({shape}, {rate})"
            )));
        }
        Ok(DistSpec::SqrtInvGamma { shape, rate })
    }

    pub fn exp_normal(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() || var <= 0.0 {
            return Err(Error::parameter(format!(
                "ExpNormal requires finite mean and variance > 0, got expN({mean}, {var})"
            )));
        }
        Ok(DistSpec::ExpNormal { mean, var })
    }

    pub fn binomial(n: u64, p: f64) -> Result<Self> {
        if n == 0 || !(0.0..=1.0).contains(&p) {
            return Err(Error::parameter(format!(
                "Binomial requires n >= 1 and p in [0,1], got Bin({n}, {p})"
            )));
        }
        Ok(DistSpec::Binomial { n, p })
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, DistSpec::Binomial { .. })
    }

    /// Support is a subset of `(0, inf)` (admissible as a scale-parameter prior).
    pub fn is_positive(&self) -> bool {
        matches!(
            self,
            DistSpec::HalfNormal { .. }
                | DistSpec::HalfCauchy { .. }
                | DistSpec::SqrtInvGamma { .. }
                | DistSpec::ExpNormal { .. }
        )
    }

    /// Natural-log density (continuous) or mass (Binomial) at `x`.
    ///
    /// Returns `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            DistSpec::Normal { mean, var } => normal_log_pdf(x, mean, var),
            DistSpec::HalfNormal { scale } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    std::f64::consts::LN_2 + normal_log_pdf(x, 0.0, scale * scale)
                }
            }
            DistSpec::HalfCauchy { scale } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    // pdf = (2/pi) * c / (c^2 + x^2)
                    (2.0 / std::f64::consts::PI).ln() + scale.ln()
                        - (scale * scale + x * x).ln()
                }
            }
            DistSpec::SqrtInvGamma { shape, rate } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    // inverse-gamma density at x^2 times the Jacobian 2x
                    shape * rate.ln() - ln_gamma(shape) - (2.0 * shape + 1.0) * x.ln()
                        - rate / (x * x)
                        + std::f64::consts::LN_2
                }
            }
            DistSpec::ExpNormal { mean, var } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    normal_log_pdf(x.ln(), mean, var) - x.ln()
                }
            }
            DistSpec::Binomial { n, p } => {
                if x < 0.0 || x > n as f64 || x.fract() != 0.0 {
                    return f64::NEG_INFINITY;
                }
                let k = x as u64;
                let ln_choose =
                    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0);
                let term_p = if k == 0 { 0.0 } else { k as f64 * p.ln() };
                let term_q = if k == n { 0.0 } else { (n - k) as f64 * (1.0 - p).ln() };
                ln_choose + term_p + term_q
            }
        }
    }

    /// Draw one value; deterministic given the stream state.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            DistSpec::Normal { mean, var } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mean + var.sqrt() * z
            }
            DistSpec::HalfNormal { scale } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (scale * z).abs()
            }
            DistSpec::HalfCauchy { scale } => {
                let c = rand_distr::Cauchy::new(0.0, scale).expect("validated scale");
                c.sample(rng).abs()
            }
            DistSpec::SqrtInvGamma { shape, rate } => {
                // G ~ Gamma(shape, rate) => 1/G ~ InvGamma(shape, rate)
                let g = rand_distr::Gamma::new(shape, 1.0 / rate).expect("validated shape/rate");
                (1.0 / g.sample(rng)).sqrt()
            }
            DistSpec::ExpNormal { mean, var } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (mean + var.sqrt() * z).exp()
            }
            DistSpec::Binomial { n, p } => {
                let b = rand_distr::Binomial::new(n, p).expect("validated n/p");
                b.sample(rng) as f64
            }
        }
    }

    /// Cumulative distribution function at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            DistSpec::Normal { mean, var } => std_normal_cdf((x - mean) / var.sqrt()),
            DistSpec::HalfNormal { scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    erf(x / (scale * std::f64::consts::SQRT_2))
                }
            }
            DistSpec::HalfCauchy { scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    2.0 / std::f64::consts::PI * (x / scale).atan()
                }
            }
            DistSpec::SqrtInvGamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    // P(X <= x) = P(X^2 <= x^2) = Q(shape, rate / x^2)
                    gamma_ur(shape, rate / (x * x))
                }
            }
            DistSpec::ExpNormal { mean, var } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - mean) / var.sqrt())
                }
            }
            DistSpec::Binomial { n, p } => {
                if x < 0.0 {
                    0.0
                } else if x >= n as f64 {
                    1.0
                } else {
                    let k = x.floor();
                    beta_reg((n as f64 - k).max(f64::MIN_POSITIVE), k + 1.0, 1.0 - p)
                }
            }
        }
    }

    /// Median of a continuous family; closed form where one exists, otherwise
    /// a bracketed root of the CDF.
    pub fn median(&self) -> Result<f64> {
        match *self {
            DistSpec::Normal { mean, .. } => Ok(mean),
            DistSpec::HalfNormal { scale } => Ok(scale * HALF_NORMAL_MEDIAN_UNIT),
            DistSpec::HalfCauchy { scale } => Ok(scale),
            DistSpec::ExpNormal { mean, .. } => Ok(mean.exp()),
            DistSpec::SqrtInvGamma { shape, rate } => {
                // crude scale guess to seed the bracket
                let guess = (rate / shape).sqrt().max(f64::MIN_POSITIVE);
                let f = |x: f64| self.cdf(x) - 0.5;
                let (lo, hi) = roots::expand_bracket(f, guess, 1e-300, 1e300)
                    .ok_or_else(|| Error::Numeric("median bracket expansion failed".into()))?;
                roots::brent(f, lo, hi, 0.0, 1e-13, 200)
                    .ok_or_else(|| Error::Numeric("median root finding failed".into()))
            }
            DistSpec::Binomial { .. } => Err(Error::parameter(
                "median is defined for continuous families only".into(),
            )),
        }
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistSpec::Normal { mean, var } => write!(f, "N({mean}, {var})"),
            DistSpec::HalfNormal { scale } => write!(f, "HN({scale})"),
            DistSpec::HalfCauchy { scale } => write!(f, "HC({scale})"),
            DistSpec::SqrtInvGamma { shape, rate } => write!(f, "SqrtIG({shape}, {rate})"),
            DistSpec::ExpNormal { mean, var } => write!(f, "expN({mean}, {var})"),
            DistSpec::Binomial { n, p } => write!(f, "Bin({n}, {p})"),
        }
    }
}

/// Parse a prior specification such as `HN(5)`, `hc(1)`, `N(0,16)`,
/// `SqrtIG(4,1)` or `expN(0,1000)`. Family names are case-insensitive.
pub fn parse_dist(s: &str) -> Result<DistSpec> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| Error::parameter(format!("malformed distribution `{s}`: missing `(`")))?;
    if !s.ends_with(')') {
        return Err(Error::parameter(format!(
            "malformed distribution `{s}`: missing closing `)`"
        )));
    }
    let family = s[..open].trim().to_ascii_lowercase();
    let args: Vec<f64> = s[open + 1..s.len() - 1]
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::parameter(format!("malformed number `{}` in `{s}`", a.trim())))
        })
        .collect::<Result<_>>()?;

    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(Error::parameter(format!(
                "`{s}`: expected {n} parameter(s), got {}",
                args.len()
            )))
        }
    };

    match family.as_str() {
        "n" | "normal" => {
            arity(2)?;
            DistSpec::normal(args[0], args[1])
        }
        "hn" | "halfnormal" => {
            arity(1)?;
            DistSpec::half_normal(args[0])
        }
        "hc" | "halfcauchy" => {
            arity(1)?;
            DistSpec::half_cauchy(args[0])
        }
        "sqrtig" | "sqrtinvgamma" => {
            arity(2)?;
            DistSpec::sqrt_inv_gamma(args[0], args[1])
        }
        "expn" | "expnormal" => {
            arity(2)?;
            DistSpec::exp_normal(args[0], args[1])
        }
        other => Err(Error::parameter(format!(
            "unknown distribution family `{other}` in `{s}`"
        ))),
    }
}
