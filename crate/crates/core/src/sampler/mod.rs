//! MCMC engine: Gibbs updates for conditionally conjugate blocks, adaptive
//! random-walk Metropolis for everything else.
//!
//! Location blocks (`theta`, `mu` in the hierarchical families, the
//! standardized effects in the non-centered parameterization) are sampled
//! from their exact normal full conditionals. Scale parameters move by
//! random-walk Metropolis on the log scale (with the Jacobian folded into
//! the target), and the logit model's regression terms and random effects
//! move by scalar random-walk Metropolis. Proposal scales adapt toward a
//! 0.44 acceptance rate in batches during burn-in and are frozen afterwards,
//! so the post-burn-in kernel satisfies detailed balance.
//!
//! Chains run concurrently; each derives a private RNG stream from
//! `(seed, chain index)`, so a run is bit-identical regardless of the
//! number of threads.

pub mod diagnostics;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistSpec;
use crate::error::Error;
use crate::models::{
    softplus, ArmRow, MetaDataset, ModelFamily, ModelSpec, ParamLayout, ParamRole, ScaleTag,
};
use crate::rng::{chain_stream, RngStream};
use crate::Result;

/// Largest admissible value of any scale parameter before the run is
/// declared divergent.
const SCALE_DIVERGENCE_LIMIT: f64 = 1e12;

/// Target acceptance rate for scalar Metropolis components.
const TARGET_ACCEPT: f64 = 0.44;

/// MCMC run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    /// Iterations per chain, including burn-in.
    pub iterations: usize,
    /// Iterations discarded from the front of each chain.
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in iteration.
    pub thin: usize,
    pub seed: u64,
    /// Batch length for proposal-scale adaptation during burn-in.
    pub adapt_window: usize,
}

impl McmcConfig {
    pub fn new(
        chains: usize,
        iterations: usize,
        burn_in: usize,
        thin: usize,
        seed: u64,
        adapt_window: usize,
    ) -> Result<Self> {
        let cfg = McmcConfig { chains, iterations, burn_in, thin, seed, adapt_window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::parameter("chains must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::parameter("thin must be >= 1".into()));
        }
        if self.adapt_window == 0 {
            return Err(Error::parameter("adapt_window must be >= 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::parameter(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.kept_per_chain() < 100 {
            return Err(Error::parameter(format!(
                "(iterations - burn_in) / thin = {} kept draws per chain; need at least 100",
                self.kept_per_chain()
            )));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

impl Default for McmcConfig {
    /// Four chains of 4e5 iterations, half burn-in, thinning 100: 2000 kept
    /// draws per chain.
    fn default() -> Self {
        McmcConfig {
            chains: 4,
            iterations: 400_000,
            burn_in: 200_000,
            thin: 100,
            seed: 42,
            adapt_window: 50,
        }
    }
}

/// Kept draws of one chain: a row-major `kept x params` matrix plus the
/// per-draw log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub draws: Vec<f64>,
    pub loglik: Vec<f64>,
}

/// Posterior draws across chains, with layout and config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawMatrix {
    layout: ParamLayout,
    chains: Vec<ChainDraws>,
    config: McmcConfig,
    /// Likelihood weight the draws were sampled under (1 for the base model).
    weight: f64,
}

impl DrawMatrix {
    pub fn from_parts(
        layout: ParamLayout,
        chains: Vec<ChainDraws>,
        config: McmcConfig,
        weight: f64,
    ) -> Result<Self> {
        let p = layout.len();
        for (c, chain) in chains.iter().enumerate() {
            if chain.draws.len() != chain.loglik.len() * p {
                return Err(Error::data(format!(
                    "chain {c}: draw matrix shape does not match loglik length"
                )));
            }
        }
        Ok(DrawMatrix { layout, chains, config, weight })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn chains(&self) -> &[ChainDraws] {
        &self.chains
    }

    pub fn kept_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.loglik.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.loglik.len()).sum()
    }

    /// Parameter column on its natural (sampled) scale, pooled over chains.
    pub fn pooled_raw(&self, i: usize) -> Vec<f64> {
        let p = self.layout.len();
        let mut out = Vec::with_capacity(self.total_draws());
        for chain in &self.chains {
            out.extend(chain.draws.iter().skip(i).step_by(p));
        }
        out
    }

    /// Parameter column on its analysis scale, pooled over chains.
    pub fn pooled_analysis(&self, i: usize) -> Vec<f64> {
        let tag = self.layout.scale_tag(i);
        let mut out = self.pooled_raw(i);
        if tag != ScaleTag::Identity {
            for v in &mut out {
                *v = tag.apply(*v);
            }
        }
        out
    }

    /// Per-chain parameter columns on the analysis scale.
    pub fn per_chain_analysis(&self, i: usize) -> Vec<Vec<f64>> {
        let p = self.layout.len();
        let tag = self.layout.scale_tag(i);
        self.chains
            .iter()
            .map(|chain| {
                chain
                    .draws
                    .iter()
                    .skip(i)
                    .step_by(p)
                    .map(|&v| tag.apply(v))
                    .collect()
            })
            .collect()
    }

    /// Per-draw log-likelihood pooled over chains.
    pub fn pooled_loglik(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_draws());
        for chain in &self.chains {
            out.extend_from_slice(&chain.loglik);
        }
        out
    }

    /// Write draws as CSV with columns `chain,iter,<param...>,loglik`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let p = self.layout.len();
        write!(w, "chain,iter")?;
        for name in self.layout.names() {
            write!(w, ",{name}")?;
        }
        writeln!(w, ",loglik")?;
        for (c, chain) in self.chains.iter().enumerate() {
            for row in 0..chain.loglik.len() {
                write!(w, "{},{}", c + 1, row + 1)?;
                for v in &chain.draws[row * p..(row + 1) * p] {
                    write!(w, ",{v}")?;
                }
                writeln!(w, ",{}", chain.loglik[row])?;
            }
        }
        Ok(())
    }
}

/// Draw posterior samples under likelihood weight `w` (1 = base model).
pub fn run(model: &ModelSpec, data: &MetaDataset, cfg: &McmcConfig, w: f64) -> Result<DrawMatrix> {
    cfg.validate()?;
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::parameter(format!("likelihood weight must be positive, got {w}")));
    }
    let layout = model.layout(data)?;

    let chains: Vec<ChainDraws> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain_idx| run_chain(model, data, cfg, w, chain_idx, &layout))
        .collect::<Result<_>>()?;

    DrawMatrix::from_parts(layout, chains, cfg.clone(), w)
}

fn run_chain(
    model: &ModelSpec,
    data: &MetaDataset,
    cfg: &McmcConfig,
    w: f64,
    chain_idx: usize,
    layout: &ParamLayout,
) -> Result<ChainDraws> {
    let mut rng = chain_stream(cfg.seed, chain_idx);
    let mut kernel = build_kernel(model, data, w, cfg.adapt_window)?;
    let mut p = kernel.initial_state();
    debug_assert_eq!(p.len(), layout.len());

    let kept = cfg.kept_per_chain();
    let n_params = layout.len();
    let mut draws = Vec::with_capacity(kept * n_params);
    let mut loglik = Vec::with_capacity(kept);
    let scale_idx = kernel.scale_indices();

    for it in 0..cfg.iterations {
        if it == cfg.burn_in {
            kernel.freeze();
        }
        kernel.sweep(&mut p, &mut rng);

        for &si in &scale_idx {
            if !(p[si] < SCALE_DIVERGENCE_LIMIT) {
                return Err(Error::Sampling(format!(
                    "chain {chain_idx}: scale parameter {} diverged ({}) at iteration {it}",
                    layout.name(si),
                    p[si]
                )));
            }
        }

        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == cfg.thin - 1 && loglik.len() < kept
        {
            draws.extend_from_slice(&p);
            loglik.push(model.log_likelihood(data, &p)?);
        }
    }

    for (name, rate) in kernel.post_rates() {
        if rate < 0.01 {
            return Err(Error::Sampling(format!(
                "chain {chain_idx}: component {name} acceptance rate {rate:.4} after adaptation"
            )));
        }
    }

    Ok(ChainDraws { draws, loglik })
}

// ---------------------------------------------------------------------------
// Adaptive scalar Metropolis machinery
// ---------------------------------------------------------------------------

/// Proposal-scale adaptation state for one scalar Metropolis component
/// (batched Robbins-Monro on the log proposal sd).
#[derive(Debug, Clone)]
struct Adapt {
    log_sd: f64,
    window: usize,
    batch_accepts: usize,
    batch_len: usize,
    batch_index: usize,
    frozen: bool,
    post_accepts: u64,
    post_total: u64,
}

impl Adapt {
    fn new(window: usize) -> Self {
        Adapt {
            log_sd: 0.0,
            window,
            batch_accepts: 0,
            batch_len: 0,
            batch_index: 0,
            frozen: false,
            post_accepts: 0,
            post_total: 0,
        }
    }

    #[inline]
    fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    #[inline]
    fn record(&mut self, accepted: bool) {
        if self.frozen {
            self.post_total += 1;
            self.post_accepts += accepted as u64;
            return;
        }
        self.batch_len += 1;
        self.batch_accepts += accepted as usize;
        if self.batch_len == self.window {
            self.batch_index += 1;
            let step = 0.05f64.min(1.0 / (self.batch_index as f64).sqrt());
            let rate = self.batch_accepts as f64 / self.batch_len as f64;
            self.log_sd += if rate > TARGET_ACCEPT { step } else { -step };
            // keep proposals within sane magnitudes
            self.log_sd = self.log_sd.clamp(-15.0, 15.0);
            self.batch_len = 0;
            self.batch_accepts = 0;
        }
    }

    fn freeze(&mut self) {
        self.frozen = true;
    }

    fn post_rate(&self) -> f64 {
        if self.post_total == 0 {
            1.0
        } else {
            self.post_accepts as f64 / self.post_total as f64
        }
    }
}

/// One scalar random-walk Metropolis step. `log_target` must be the full
/// conditional log-density of the coordinate being updated.
#[inline]
fn mh_step(
    x: &mut f64,
    adapt: &mut Adapt,
    rng: &mut RngStream,
    log_target: impl Fn(f64) -> f64,
) {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let proposal = *x + adapt.sd() * z;
    let current = log_target(*x);
    let candidate = log_target(proposal);
    let accept = candidate.is_finite() && {
        let u: f64 = rng.random();
        u.ln() < candidate - current
    };
    if accept {
        *x = proposal;
    }
    adapt.record(accept);
}

#[inline]
fn draw_normal(rng: &mut RngStream, mean: f64, prec: f64) -> f64 {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    mean + z / prec.sqrt()
}

fn normal_prior_params(d: &DistSpec) -> (f64, f64) {
    match *d {
        DistSpec::Normal { mean, var } => (mean, var),
        _ => unreachable!("location priors are validated to be normal"),
    }
}

// ---------------------------------------------------------------------------
// Family kernels
// ---------------------------------------------------------------------------

trait FamilyKernel {
    fn initial_state(&self) -> Vec<f64>;
    fn sweep(&mut self, p: &mut [f64], rng: &mut RngStream);
    fn freeze(&mut self);
    /// `(component, post-freeze acceptance rate)` for each Metropolis component.
    fn post_rates(&self) -> Vec<(String, f64)>;
    /// Layout indices of scale parameters (for the divergence guard).
    fn scale_indices(&self) -> Vec<usize>;
}

fn build_kernel(
    model: &ModelSpec,
    data: &MetaDataset,
    w: f64,
    window: usize,
) -> Result<Box<dyn FamilyKernel>> {
    match (model.family(), data) {
        (ModelFamily::NnhmCentered | ModelFamily::SimB, MetaDataset::NormalEffects(nd)) => {
            Ok(Box::new(CenteredKernel::new(
                nd.y.clone(),
                nd.sigma.clone(),
                w,
                normal_prior_params(model.prior(ParamRole::Mu)),
                *model.prior(ParamRole::Tau),
                window,
            )))
        }
        (ModelFamily::NnhmNonCentered, MetaDataset::NormalEffects(nd)) => {
            Ok(Box::new(NonCenteredKernel::new(
                nd.y.clone(),
                nd.sigma.clone(),
                w,
                normal_prior_params(model.prior(ParamRole::Mu)),
                *model.prior(ParamRole::Tau),
                window,
            )))
        }
        (ModelFamily::SimA, MetaDataset::NormalEffects(nd)) => Ok(Box::new(SimAKernel::new(
            nd.y.clone(),
            w,
            normal_prior_params(model.prior(ParamRole::Mu)),
            *model.prior(ParamRole::Gamma),
            window,
        ))),
        (ModelFamily::SimC, MetaDataset::NormalEffects(nd)) => Ok(Box::new(SimCKernel::new(
            nd.y.clone(),
            w,
            normal_prior_params(model.prior(ParamRole::Mu)),
            *model.prior(ParamRole::Sigma),
            *model.prior(ParamRole::Tau),
            window,
        ))),
        (ModelFamily::LogitRe, MetaDataset::BinomialArms(bd)) => Ok(Box::new(LogitKernel::new(
            bd.stacked_rows(),
            w,
            normal_prior_params(model.prior(ParamRole::Alpha)),
            normal_prior_params(model.prior(ParamRole::Beta)),
            *model.prior(ParamRole::Tau),
            window,
        ))),
        (f, _) => Err(Error::model(format!("{f}: incompatible dataset kind"))),
    }
}

fn data_location_scale(y: &[f64]) -> (f64, f64) {
    let mean = crate::stats::mean(y);
    let sd = if y.len() > 1 { crate::stats::sd_pop(y) } else { 1.0 };
    (mean, sd.clamp(1e-3, 1e3))
}

/// Centered NNHM (and the known-within-sd simulation variant): layout
/// `[mu, tau, theta...]`.
struct CenteredKernel {
    y: Vec<f64>,
    inv_sig2: Vec<f64>,
    w: f64,
    mu_prior: (f64, f64),
    tau_prior: DistSpec,
    tau_adapt: Adapt,
    init: (f64, f64),
}

impl CenteredKernel {
    fn new(
        y: Vec<f64>,
        sigma: Vec<f64>,
        w: f64,
        mu_prior: (f64, f64),
        tau_prior: DistSpec,
        window: usize,
    ) -> Self {
        let inv_sig2 = sigma.iter().map(|s| 1.0 / (s * s)).collect();
        let init = data_location_scale(&y);
        CenteredKernel { y, inv_sig2, w, mu_prior, tau_prior, tau_adapt: Adapt::new(window), init }
    }
}

impl FamilyKernel for CenteredKernel {
    fn initial_state(&self) -> Vec<f64> {
        let (ybar, sdy) = self.init;
        let mut p = vec![ybar, sdy];
        p.extend_from_slice(&self.y);
        p
    }

    fn sweep(&mut self, p: &mut [f64], rng: &mut RngStream) {
        let k = self.y.len();
        let (mu0, v0) = self.mu_prior;
        let mu = p[0];
        let tau = p[1];
        let inv_tau2 = 1.0 / (tau * tau);

        for j in 0..k {
            let prec = self.w * self.inv_sig2[j] + inv_tau2;
            let mean = (self.w * self.y[j] * self.inv_sig2[j] + mu * inv_tau2) / prec;
            p[2 + j] = draw_normal(rng, mean, prec);
        }

        let theta_sum: f64 = p[2..2 + k].iter().sum();
        let prec_mu = 1.0 / v0 + k as f64 * inv_tau2;
        let mean_mu = (mu0 / v0 + theta_sum * inv_tau2) / prec_mu;
        p[0] = draw_normal(rng, mean_mu, prec_mu);

        let mu = p[0];
        let s_theta: f64 = p[2..2 + k].iter().map(|&t| (t - mu) * (t - mu)).sum();
        let prior = &self.tau_prior;
        let kf = k as f64;
        let mut log_tau = p[1].ln();
        mh_step(&mut log_tau, &mut self.tau_adapt, rng, |l| {
            let tau = l.exp();
            -kf * l - s_theta / (2.0 * tau * tau) + prior.log_pdf(tau) + l
        });
        p[1] = log_tau.exp();
    }

    fn freeze(&mut self) {
        self.tau_adapt.freeze();
    }

    fn post_rates(&self) -> Vec<(String, f64)> {
        vec![("tau".into(), self.tau_adapt.post_rate())]
    }

    fn scale_indices(&self) -> Vec<usize> {
        vec![1]
    }
}

/// Non-centered NNHM: layout `[mu, tau, theta_tilde...]`.
struct NonCenteredKernel {
    y: Vec<f64>,
    inv_sig2: Vec<f64>,
    w: f64,
    mu_prior: (f64, f64),
    tau_prior: DistSpec,
    tau_adapt: Adapt,
    init: (f64, f64),
}

impl NonCenteredKernel {
    fn new(
        y: Vec<f64>,
        sigma: Vec<f64>,
        w: f64,
        mu_prior: (f64, f64),
        tau_prior: DistSpec,
        window: usize,
    ) -> Self {
        let inv_sig2 = sigma.iter().map(|s| 1.0 / (s * s)).collect();
        let init = data_location_scale(&y);
        NonCenteredKernel {
            y,
            inv_sig2,
            w,
            mu_prior,
            tau_prior,
            tau_adapt: Adapt::new(window),
            init,
        }
    }
}

impl FamilyKernel for NonCenteredKernel {
    fn initial_state(&self) -> Vec<f64> {
        let (ybar, sdy) = self.init;
        let mut p = vec![ybar, sdy];
        p.extend(std::iter::repeat(0.0).take(self.y.len()));
        p
    }

    fn sweep(&mut self, p: &mut [f64], rng: &mut RngStream) {
        let k = self.y.len();
        let (mu0, v0) = self.mu_prior;
        let (mu, tau) = (p[0], p[1]);

        for j in 0..k {
            let prec = self.w * tau * tau * self.inv_sig2[j] + 1.0;
            let mean = self.w * tau * (self.y[j] - mu) * self.inv_sig2[j] / prec;
            p[2 + j] = draw_normal(rng, mean, prec);
        }

        let mut prec_mu = 1.0 / v0;
        let mut num = mu0 / v0;
        for j in 0..k {
            prec_mu += self.w * self.inv_sig2[j];
            num += self.w * (self.y[j] - tau * p[2 + j]) * self.inv_sig2[j];
        }
        p[0] = draw_normal(rng, num / prec_mu, prec_mu);

        // residual form y_j - mu = tau * tilde_j + noise: quadratic in tau
        let mu = p[0];
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for j in 0..k {
            let d = self.y[j] - mu;
            a += d * d * self.inv_sig2[j];
            b += d * p[2 + j] * self.inv_sig2[j];
            c += p[2 + j] * p[2 + j] * self.inv_sig2[j];
        }
        let prior = &self.tau_prior;
        let w = self.w;
        let mut log_tau = p[1].ln();
        mh_step(&mut log_tau, &mut self.tau_adapt, rng, |l| {
            let tau = l.exp();
            let q = a - 2.0 * b * tau + c * tau * tau;
            -w * q / 2.0 + prior.log_pdf(tau) + l
        });
        p[1] = log_tau.exp();
    }

    fn freeze(&mut self) {
        self.tau_adapt.freeze();
    }

    fn post_rates(&self) -> Vec<(String, f64)> {
        vec![("tau".into(), self.tau_adapt.post_rate())]
    }

    fn scale_indices(&self) -> Vec<usize> {
        vec![1]
    }
}

/// Homogeneous normal model without random effects: layout `[mu, gamma]`.
struct SimAKernel {
    y: Vec<f64>,
    w: f64,
    mu_prior: (f64, f64),
    gamma_prior: DistSpec,
    gamma_adapt: Adapt,
    init: (f64, f64),
}

impl SimAKernel {
    fn new(y: Vec<f64>, w: f64, mu_prior: (f64, f64), gamma_prior: DistSpec, window: usize) -> Self {
        let init = data_location_scale(&y);
        SimAKernel { y, w, mu_prior, gamma_prior, gamma_adapt: Adapt::new(window), init }
    }
}

impl FamilyKernel for SimAKernel {
    fn initial_state(&self) -> Vec<f64> {
        vec![self.init.0, self.init.1]
    }

    fn sweep(&mut self, p: &mut [f64], rng: &mut RngStream) {
        let n = self.y.len() as f64;
        let (mu0, v0) = self.mu_prior;
        let gamma = p[1];
        let inv_g2 = 1.0 / (gamma * gamma);

        let y_sum: f64 = self.y.iter().sum();
        let prec = 1.0 / v0 + self.w * n * inv_g2;
        let mean = (mu0 / v0 + self.w * y_sum * inv_g2) / prec;
        p[0] = draw_normal(rng, mean, prec);

        let mu = p[0];
        let s: f64 = self.y.iter().map(|&y| (y - mu) * (y - mu)).sum();
        let prior = &self.gamma_prior;
        let w = self.w;
        let mut log_gamma = p[1].ln();
        mh_step(&mut log_gamma, &mut self.gamma_adapt, rng, |l| {
            let g = l.exp();
            -n * w * l - w * s / (2.0 * g * g) + prior.log_pdf(g) + l
        });
        p[1] = log_gamma.exp();
    }

    fn freeze(&mut self) {
        self.gamma_adapt.freeze();
    }

    fn post_rates(&self) -> Vec<(String, f64)> {
        vec![("gamma".into(), self.gamma_adapt.post_rate())]
    }

    fn scale_indices(&self) -> Vec<usize> {
        vec![1]
    }
}

/// NNHM with unknown common within-study sd: layout `[mu, sigma, tau, theta...]`.
struct SimCKernel {
    y: Vec<f64>,
    w: f64,
    mu_prior: (f64, f64),
    sigma_prior: DistSpec,
    tau_prior: DistSpec,
    sigma_adapt: Adapt,
    tau_adapt: Adapt,
    init: (f64, f64),
}

impl SimCKernel {
    fn new(
        y: Vec<f64>,
        w: f64,
        mu_prior: (f64, f64),
        sigma_prior: DistSpec,
        tau_prior: DistSpec,
        window: usize,
    ) -> Self {
        let init = data_location_scale(&y);
        SimCKernel {
            y,
            w,
            mu_prior,
            sigma_prior,
            tau_prior,
            sigma_adapt: Adapt::new(window),
            tau_adapt: Adapt::new(window),
            init,
        }
    }
}

impl FamilyKernel for SimCKernel {
    fn initial_state(&self) -> Vec<f64> {
        let (ybar, sdy) = self.init;
        let half = (sdy / std::f64::consts::SQRT_2).clamp(1e-3, 1e3);
        let mut p = vec![ybar, half, half];
        p.extend_from_slice(&self.y);
        p
    }

    fn sweep(&mut self, p: &mut [f64], rng: &mut RngStream) {
        let k = self.y.len();
        let kf = k as f64;
        let (mu0, v0) = self.mu_prior;
        let (mu, sigma, tau) = (p[0], p[1], p[2]);
        let inv_s2 = 1.0 / (sigma * sigma);
        let inv_t2 = 1.0 / (tau * tau);

        for j in 0..k {
            let prec = self.w * inv_s2 + inv_t2;
            let mean = (self.w * self.y[j] * inv_s2 + mu * inv_t2) / prec;
            p[3 + j] = draw_normal(rng, mean, prec);
        }

        let theta_sum: f64 = p[3..3 + k].iter().sum();
        let prec_mu = 1.0 / v0 + kf * inv_t2;
        let mean_mu = (mu0 / v0 + theta_sum * inv_t2) / prec_mu;
        p[0] = draw_normal(rng, mean_mu, prec_mu);
        let mu = p[0];

        let s_y: f64 = self
            .y
            .iter()
            .zip(&p[3..3 + k])
            .map(|(&y, &t)| (y - t) * (y - t))
            .sum();
        let w = self.w;
        let sigma_prior = &self.sigma_prior;
        let mut log_sigma = p[1].ln();
        mh_step(&mut log_sigma, &mut self.sigma_adapt, rng, |l| {
            let s = l.exp();
            -kf * w * l - w * s_y / (2.0 * s * s) + sigma_prior.log_pdf(s) + l
        });
        p[1] = log_sigma.exp();

        let s_theta: f64 = p[3..3 + k].iter().map(|&t| (t - mu) * (t - mu)).sum();
        let tau_prior = &self.tau_prior;
        let mut log_tau = p[2].ln();
        mh_step(&mut log_tau, &mut self.tau_adapt, rng, |l| {
            let t = l.exp();
            -kf * l - s_theta / (2.0 * t * t) + tau_prior.log_pdf(t) + l
        });
        p[2] = log_tau.exp();
    }

    fn freeze(&mut self) {
        self.sigma_adapt.freeze();
        self.tau_adapt.freeze();
    }

    fn post_rates(&self) -> Vec<(String, f64)> {
        vec![
            ("sigma".into(), self.sigma_adapt.post_rate()),
            ("tau".into(), self.tau_adapt.post_rate()),
        ]
    }

    fn scale_indices(&self) -> Vec<usize> {
        vec![1, 2]
    }
}

/// Binomial random-effects logit model: layout `[alpha, beta, tau, eta...]`.
struct LogitKernel {
    rows: Vec<ArmRow>,
    w: f64,
    alpha_prior: (f64, f64),
    beta_prior: (f64, f64),
    tau_prior: DistSpec,
    alpha_adapt: Adapt,
    beta_adapt: Adapt,
    tau_adapt: Adapt,
    eta_adapts: Vec<Adapt>,
}

impl LogitKernel {
    fn new(
        rows: Vec<ArmRow>,
        w: f64,
        alpha_prior: (f64, f64),
        beta_prior: (f64, f64),
        tau_prior: DistSpec,
        window: usize,
    ) -> Self {
        let r = rows.len();
        LogitKernel {
            rows,
            w,
            alpha_prior,
            beta_prior,
            tau_prior,
            alpha_adapt: Adapt::new(window),
            beta_adapt: Adapt::new(window),
            tau_adapt: Adapt::new(window),
            eta_adapts: vec![Adapt::new(window); r],
        }
    }

    /// Binomial log-likelihood kernel of one row at linear predictor `lp`
    /// (the combinatorial constant cancels in Metropolis ratios).
    #[inline]
    fn row_term(row: &ArmRow, lp: f64) -> f64 {
        row.events as f64 * (-softplus(-lp)) + (row.total - row.events) as f64 * (-softplus(lp))
    }
}

impl FamilyKernel for LogitKernel {
    fn initial_state(&self) -> Vec<f64> {
        let events: u64 = self.rows.iter().map(|r| r.events).sum();
        let total: u64 = self.rows.iter().map(|r| r.total).sum();
        let rate = (events as f64 / total as f64).clamp(1e-3, 1.0 - 1e-3);
        let mut p = vec![(rate / (1.0 - rate)).ln(), 0.0, 1.0];
        p.extend(std::iter::repeat(0.0).take(self.rows.len()));
        p
    }

    fn sweep(&mut self, p: &mut [f64], rng: &mut RngStream) {
        let r = self.rows.len();
        let w = self.w;

        // alpha: affects every row
        {
            let (m0, v0) = self.alpha_prior;
            let rows = &self.rows;
            let beta = p[1];
            let eta = &p[3..3 + r];
            let mut alpha = p[0];
            mh_step(&mut alpha, &mut self.alpha_adapt, rng, |a| {
                let ll: f64 = rows
                    .iter()
                    .zip(eta)
                    .map(|(row, &e)| Self::row_term(row, a + beta * row.treatment + e))
                    .sum();
                w * ll - (a - m0) * (a - m0) / (2.0 * v0)
            });
            p[0] = alpha;
        }

        // beta: affects treatment rows only
        {
            let (m0, v0) = self.beta_prior;
            let rows = &self.rows;
            let alpha = p[0];
            let eta = &p[3..3 + r];
            let mut beta = p[1];
            mh_step(&mut beta, &mut self.beta_adapt, rng, |b| {
                let ll: f64 = rows
                    .iter()
                    .zip(eta)
                    .filter(|(row, _)| row.treatment > 0.0)
                    .map(|(row, &e)| Self::row_term(row, alpha + b + e))
                    .sum();
                w * ll - (b - m0) * (b - m0) / (2.0 * v0)
            });
            p[1] = beta;
        }

        // random effects, one scalar step each
        let (alpha, beta, tau) = (p[0], p[1], p[2]);
        let inv_t2 = 1.0 / (tau * tau);
        for j in 0..r {
            let row = &self.rows[j];
            let base = alpha + beta * row.treatment;
            let mut e = p[3 + j];
            mh_step(&mut e, &mut self.eta_adapts[j], rng, |x| {
                w * Self::row_term(row, base + x) - x * x * inv_t2 / 2.0
            });
            p[3 + j] = e;
        }

        // tau from the random-effects layer
        let s_eta: f64 = p[3..3 + r].iter().map(|&e| e * e).sum();
        let rf = r as f64;
        let prior = &self.tau_prior;
        let mut log_tau = p[2].ln();
        mh_step(&mut log_tau, &mut self.tau_adapt, rng, |l| {
            let t = l.exp();
            -rf * l - s_eta / (2.0 * t * t) + prior.log_pdf(t) + l
        });
        p[2] = log_tau.exp();
    }

    fn freeze(&mut self) {
        self.alpha_adapt.freeze();
        self.beta_adapt.freeze();
        self.tau_adapt.freeze();
        for a in &mut self.eta_adapts {
            a.freeze();
        }
    }

    fn post_rates(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("alpha".into(), self.alpha_adapt.post_rate()),
            ("beta".into(), self.beta_adapt.post_rate()),
            ("tau".into(), self.tau_adapt.post_rate()),
        ];
        for (j, a) in self.eta_adapts.iter().enumerate() {
            out.push((format!("eta[{}]", j + 1), a.post_rate()));
        }
        out
    }

    fn scale_indices(&self) -> Vec<usize> {
        vec![2]
    }
}
