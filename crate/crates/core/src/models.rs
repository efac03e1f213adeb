//! Model definitions: datasets, parameter layout, log-likelihood,
//! log-latent-field, and log-prior for every supported model family.
//!
//! Six families are hand-coded. `NnhmCentered`/`NnhmNonCentered` are the
//! usual random-effects meta-analysis parameterizations, `LogitRe` is a
//! binomial random-effects model on stacked treatment/control arms, and
//! `SimA`/`SimB`/`SimC` are the homoscedastic variants used for simulation
//! studies (`SimC` puts priors on both the within- and between-study
//! standard deviations, leaving only their variance sum identified).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{normal_log_pdf, DistSpec};
use crate::error::Error;
use crate::rng::RngStream;
use crate::Result;

/// Study-level effects with known within-study standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalEffectsData {
    pub labels: Vec<String>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Per-study binomial arm counts (events/totals for treatment and control).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialArmsData {
    pub labels: Vec<String>,
    pub ft: Vec<u64>,
    pub nt: Vec<u64>,
    pub fc: Vec<u64>,
    pub nc: Vec<u64>,
}

/// One stacked arm row of a [`BinomialArmsData`] set: treatment rows first
/// (indicator 1), then control rows (indicator 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmRow {
    pub events: u64,
    pub total: u64,
    pub treatment: f64,
}

/// A meta-analysis dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetaDataset {
    NormalEffects(NormalEffectsData),
    BinomialArms(BinomialArmsData),
}

impl MetaDataset {
    pub fn normal_effects(labels: Vec<String>, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if y.len() != sigma.len() || labels.len() != y.len() {
            return Err(Error::data("y, sigma, and labels must have equal length"));
        }
        if y.is_empty() {
            return Err(Error::data("dataset must contain at least one study"));
        }
        if let Some(j) = sigma.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::data(format!(
                "study {}: within-study sd must be positive and finite, got {}",
                labels[j], sigma[j]
            )));
        }
        if let Some(j) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("study {}: non-finite effect", labels[j])));
        }
        Ok(MetaDataset::NormalEffects(NormalEffectsData { labels, y, sigma }))
    }

    pub fn binomial_arms(
        labels: Vec<String>,
        ft: Vec<u64>,
        nt: Vec<u64>,
        fc: Vec<u64>,
        nc: Vec<u64>,
    ) -> Result<Self> {
        let k = labels.len();
        if [ft.len(), nt.len(), fc.len(), nc.len()].iter().any(|&l| l != k) || k == 0 {
            return Err(Error::data("all arm-count columns must have equal, nonzero length"));
        }
        for j in 0..k {
            if nt[j] == 0 || nc[j] == 0 {
                return Err(Error::data(format!("study {}: arm total must be >= 1", labels[j])));
            }
            if ft[j] > nt[j] || fc[j] > nc[j] {
                return Err(Error::data(format!(
                    "study {}: events exceed arm total",
                    labels[j]
                )));
            }
        }
        Ok(MetaDataset::BinomialArms(BinomialArmsData { labels, ft, nt, fc, nc }))
    }

    /// Number of studies.
    pub fn k(&self) -> usize {
        match self {
            MetaDataset::NormalEffects(d) => d.y.len(),
            MetaDataset::BinomialArms(d) => d.labels.len(),
        }
    }
}

impl BinomialArmsData {
    /// Stacked arm rows: `k` treatment rows followed by `k` control rows.
    pub fn stacked_rows(&self) -> Vec<ArmRow> {
        let k = self.labels.len();
        let mut rows = Vec::with_capacity(2 * k);
        for j in 0..k {
            rows.push(ArmRow { events: self.ft[j], total: self.nt[j], treatment: 1.0 });
        }
        for j in 0..k {
            rows.push(ArmRow { events: self.fc[j], total: self.nc[j], treatment: 0.0 });
        }
        rows
    }

    /// Convert to study-level log odds ratios with large-sample standard
    /// deviations. The 0.5 continuity correction is applied to all four
    /// cells of a study only when one of its cells is zero.
    pub fn to_log_odds_ratios(&self) -> Result<MetaDataset> {
        let k = self.labels.len();
        let mut y = Vec::with_capacity(k);
        let mut sigma = Vec::with_capacity(k);
        for j in 0..k {
            let cells = [
                self.ft[j] as f64,
                (self.nt[j] - self.ft[j]) as f64,
                self.fc[j] as f64,
                (self.nc[j] - self.fc[j]) as f64,
            ];
            let c = if cells.iter().any(|&v| v == 0.0) { 0.5 } else { 0.0 };
            let [a, b, cc, d] = [cells[0] + c, cells[1] + c, cells[2] + c, cells[3] + c];
            y.push((a * d / (b * cc)).ln());
            sigma.push((1.0 / a + 1.0 / b + 1.0 / cc + 1.0 / d).sqrt());
        }
        MetaDataset::normal_effects(self.labels.clone(), y, sigma)
    }
}

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    NnhmCentered,
    NnhmNonCentered,
    LogitRe,
    SimA,
    SimB,
    SimC,
}

impl ModelFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nnhm-centered" | "nnhm" => Ok(ModelFamily::NnhmCentered),
            "nnhm-noncentered" | "nnhm-nc" => Ok(ModelFamily::NnhmNonCentered),
            "logit" | "logit-re" => Ok(ModelFamily::LogitRe),
            "sim-a" => Ok(ModelFamily::SimA),
            "sim-b" => Ok(ModelFamily::SimB),
            "sim-c" => Ok(ModelFamily::SimC),
            other => Err(Error::model(format!("unknown model family `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::NnhmCentered => "nnhm-centered",
            ModelFamily::NnhmNonCentered => "nnhm-noncentered",
            ModelFamily::LogitRe => "logit",
            ModelFamily::SimA => "sim-a",
            ModelFamily::SimB => "sim-b",
            ModelFamily::SimC => "sim-c",
        }
    }

    /// Prior roles this family requires.
    pub fn required_roles(&self) -> &'static [ParamRole] {
        match self {
            ModelFamily::NnhmCentered | ModelFamily::NnhmNonCentered | ModelFamily::SimB => {
                &[ParamRole::Mu, ParamRole::Tau]
            }
            ModelFamily::LogitRe => &[ParamRole::Alpha, ParamRole::Beta, ParamRole::Tau],
            ModelFamily::SimA => &[ParamRole::Mu, ParamRole::Gamma],
            ModelFamily::SimC => &[ParamRole::Mu, ParamRole::Tau, ParamRole::Sigma],
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Prior roles a model can assign distributions to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    Mu,
    Tau,
    Sigma,
    Gamma,
    Alpha,
    Beta,
}

impl ParamRole {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mu" => Ok(ParamRole::Mu),
            "tau" => Ok(ParamRole::Tau),
            "sigma" => Ok(ParamRole::Sigma),
            "gamma" => Ok(ParamRole::Gamma),
            "alpha" => Ok(ParamRole::Alpha),
            "beta" => Ok(ParamRole::Beta),
            other => Err(Error::model(format!("unknown parameter role `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParamRole::Mu => "mu",
            ParamRole::Tau => "tau",
            ParamRole::Sigma => "sigma",
            ParamRole::Gamma => "gamma",
            ParamRole::Alpha => "alpha",
            ParamRole::Beta => "beta",
        }
    }

    /// Scale roles are summarized on the log-precision scale.
    pub fn is_scale(&self) -> bool {
        matches!(self, ParamRole::Tau | ParamRole::Sigma | ParamRole::Gamma)
    }
}

impl fmt::Display for ParamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Analysis scale of a parameter: identity, or `log(psi^-2)` for scale
/// parameters summarized as log-precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleTag {
    Identity,
    LogPrecision,
}

impl ScaleTag {
    /// Map a draw to its analysis scale.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ScaleTag::Identity => x,
            ScaleTag::LogPrecision => -2.0 * x.ln(),
        }
    }

    /// Display name of the transformed parameter.
    pub fn display_name(&self, base: &str) -> String {
        match self {
            ScaleTag::Identity => base.to_string(),
            ScaleTag::LogPrecision => format!("log({base}^-2)"),
        }
    }
}

/// Ordered parameter layout of a model applied to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    names: Vec<String>,
    scale_tags: Vec<ScaleTag>,
}

impl ParamLayout {
    fn new(names: Vec<String>, scale_tags: Vec<ScaleTag>) -> Self {
        debug_assert_eq!(names.len(), scale_tags.len());
        ParamLayout { names, scale_tags }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn scale_tags(&self) -> &[ScaleTag] {
        &self.scale_tags
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn scale_tag(&self, i: usize) -> ScaleTag {
        self.scale_tags[i]
    }

    /// Name on the analysis scale (`log(tau^-2)` for log-precision entries).
    pub fn display_name(&self, i: usize) -> String {
        self.scale_tags[i].display_name(&self.names[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A model family together with its prior specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    family: ModelFamily,
    priors: BTreeMap<ParamRole, DistSpec>,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, priors: BTreeMap<ParamRole, DistSpec>) -> Result<Self> {
        for role in family.required_roles() {
            let prior = priors
                .get(role)
                .ok_or_else(|| Error::model(format!("{family}: missing prior for `{role}`")))?;
            if role.is_scale() && !prior.is_positive() {
                return Err(Error::model(format!(
                    "{family}: prior for scale parameter `{role}` must have support in (0, inf), got {prior}"
                )));
            }
            if !role.is_scale() && !matches!(prior, DistSpec::Normal { .. }) {
                return Err(Error::model(format!(
                    "{family}: prior for location parameter `{role}` must be normal, got {prior}"
                )));
            }
        }
        for role in priors.keys() {
            if !family.required_roles().contains(role) {
                return Err(Error::model(format!(
                    "{family}: prior given for `{role}`, which the family does not use"
                )));
            }
        }
        Ok(ModelSpec { family, priors })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn prior(&self, role: ParamRole) -> &DistSpec {
        &self.priors[&role]
    }

    pub fn priors(&self) -> &BTreeMap<ParamRole, DistSpec> {
        &self.priors
    }

    fn check_data(&self, d: &MetaDataset) -> Result<()> {
        match (self.family, d) {
            (ModelFamily::LogitRe, MetaDataset::BinomialArms(_)) => Ok(()),
            (ModelFamily::LogitRe, _) => {
                Err(Error::model("logit model requires binomial arm data".into()))
            }
            (_, MetaDataset::NormalEffects(_)) => Ok(()),
            (f, _) => Err(Error::model(format!(
                "{f} requires normal-effects data (convert arm counts to log odds ratios first)"
            ))),
        }
    }

    /// Deterministic parameter layout of this model applied to `d`.
    pub fn layout(&self, d: &MetaDataset) -> Result<ParamLayout> {
        self.check_data(d)?;
        let k = d.k();
        let mut names: Vec<String> = Vec::new();
        let mut tags: Vec<ScaleTag> = Vec::new();
        let mut push = |name: String, tag: ScaleTag| {
            names.push(name);
            tags.push(tag);
        };
        match self.family {
            ModelFamily::NnhmCentered | ModelFamily::SimB => {
                push("mu".into(), ScaleTag::Identity);
                push("tau".into(), ScaleTag::LogPrecision);
                for j in 1..=k {
                    push(format!("theta[{j}]"), ScaleTag::Identity);
                }
            }
            ModelFamily::NnhmNonCentered => {
                push("mu".into(), ScaleTag::Identity);
                push("tau".into(), ScaleTag::LogPrecision);
                for j in 1..=k {
                    push(format!("theta_tilde[{j}]"), ScaleTag::Identity);
                }
            }
            ModelFamily::LogitRe => {
                push("alpha".into(), ScaleTag::Identity);
                push("beta".into(), ScaleTag::Identity);
                push("tau".into(), ScaleTag::LogPrecision);
                for j in 1..=2 * k {
                    push(format!("eta[{j}]"), ScaleTag::Identity);
                }
            }
            ModelFamily::SimA => {
                push("mu".into(), ScaleTag::Identity);
                push("gamma".into(), ScaleTag::LogPrecision);
            }
            ModelFamily::SimC => {
                push("mu".into(), ScaleTag::Identity);
                push("sigma".into(), ScaleTag::LogPrecision);
                push("tau".into(), ScaleTag::LogPrecision);
                for j in 1..=k {
                    push(format!("theta[{j}]"), ScaleTag::Identity);
                }
            }
        }
        Ok(ParamLayout::new(names, tags))
    }

    fn check_params(&self, d: &MetaDataset, p: &[f64]) -> Result<()> {
        let expected = self.layout(d)?.len();
        if p.len() != expected {
            return Err(Error::Dimension { expected, got: p.len() });
        }
        Ok(())
    }

    /// Log-likelihood `log pi(y | psi)` of the full parameter vector.
    pub fn log_likelihood(&self, d: &MetaDataset, p: &[f64]) -> Result<f64> {
        self.check_params(d, p)?;
        Ok(match (self.family, d) {
            (ModelFamily::NnhmCentered | ModelFamily::SimB, MetaDataset::NormalEffects(nd)) => {
                sum_normal_loglik(&nd.y, &nd.sigma, |j| p[2 + j])
            }
            (ModelFamily::NnhmNonCentered, MetaDataset::NormalEffects(nd)) => {
                let (mu, tau) = (p[0], p[1]);
                sum_normal_loglik(&nd.y, &nd.sigma, |j| mu + tau * p[2 + j])
            }
            (ModelFamily::SimA, MetaDataset::NormalEffects(nd)) => {
                let (mu, gamma) = (p[0], p[1]);
                if gamma <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let v = gamma * gamma;
                nd.y.iter().map(|&y| normal_log_pdf(y, mu, v)).sum()
            }
            (ModelFamily::SimC, MetaDataset::NormalEffects(nd)) => {
                let sigma = p[1];
                if sigma <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let v = sigma * sigma;
                nd.y.iter()
                    .enumerate()
                    .map(|(j, &y)| normal_log_pdf(y, p[3 + j], v))
                    .sum()
            }
            (ModelFamily::LogitRe, MetaDataset::BinomialArms(bd)) => {
                let (alpha, beta) = (p[0], p[1]);
                bd.stacked_rows()
                    .iter()
                    .enumerate()
                    .map(|(r, row)| {
                        binomial_log_mass(row.events, row.total, alpha + beta * row.treatment + p[3 + r])
                    })
                    .sum()
            }
            _ => unreachable!("check_params verified compatibility"),
        })
    }

    /// Log-density of the latent field `log pi(theta | eta)`.
    pub fn log_latent(&self, d: &MetaDataset, p: &[f64]) -> Result<f64> {
        self.check_params(d, p)?;
        let k = d.k();
        Ok(match self.family {
            ModelFamily::NnhmCentered | ModelFamily::SimB => {
                let (mu, tau) = (p[0], p[1]);
                if tau <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let v = tau * tau;
                (0..k).map(|j| normal_log_pdf(p[2 + j], mu, v)).sum()
            }
            ModelFamily::NnhmNonCentered => {
                (0..k).map(|j| normal_log_pdf(p[2 + j], 0.0, 1.0)).sum()
            }
            ModelFamily::LogitRe => {
                let tau = p[2];
                if tau <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let v = tau * tau;
                (0..2 * k).map(|j| normal_log_pdf(p[3 + j], 0.0, v)).sum()
            }
            ModelFamily::SimA => 0.0,
            ModelFamily::SimC => {
                let (mu, tau) = (p[0], p[2]);
                if tau <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let v = tau * tau;
                (0..k).map(|j| normal_log_pdf(p[3 + j], mu, v)).sum()
            }
        })
    }

    /// Log-density of the priors `log pi(eta)` at the role parameters.
    pub fn log_prior(&self, d: &MetaDataset, p: &[f64]) -> Result<f64> {
        self.check_params(d, p)?;
        Ok(self
            .family
            .required_roles()
            .iter()
            .map(|role| self.priors[role].log_pdf(p[self.role_index(*role)]))
            .sum())
    }

    /// Deviance `-2 log pi(y | psi)`.
    pub fn deviance(&self, d: &MetaDataset, p: &[f64]) -> Result<f64> {
        Ok(-2.0 * self.log_likelihood(d, p)?)
    }

    /// Position of a role parameter in the layout.
    pub fn role_index(&self, role: ParamRole) -> usize {
        match (self.family, role) {
            (_, ParamRole::Mu) => 0,
            (ModelFamily::SimA, ParamRole::Gamma) => 1,
            (ModelFamily::SimC, ParamRole::Sigma) => 1,
            (ModelFamily::SimC, ParamRole::Tau) => 2,
            (ModelFamily::LogitRe, ParamRole::Alpha) => 0,
            (ModelFamily::LogitRe, ParamRole::Beta) => 1,
            (ModelFamily::LogitRe, ParamRole::Tau) => 2,
            (_, ParamRole::Tau) => 1,
            _ => panic!("role {role} not present in {}", self.family),
        }
    }
}

#[inline]
fn sum_normal_loglik(y: &[f64], sigma: &[f64], theta: impl Fn(usize) -> f64) -> f64 {
    y.iter()
        .zip(sigma)
        .enumerate()
        .map(|(j, (&yj, &sj))| normal_log_pdf(yj, theta(j), sj * sj))
        .sum()
}

/// Numerically stable `log(1 + exp(t))`.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Log binomial mass of `z` events in `n` trials with success log-odds `eta`.
#[inline]
pub(crate) fn binomial_log_mass(z: u64, n: u64, eta: f64) -> f64 {
    ln_choose(n, z) + z as f64 * (-softplus(-eta)) + (n - z) as f64 * (-softplus(eta))
}

#[inline]
pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Simulate a homoscedastic NNHM dataset: `theta_i ~ N(mu, tau^2)`,
/// `y_i ~ N(theta_i, sigma^2)`, all within-study sds equal to `sigma`.
pub fn simulate_nnhm(mu: f64, tau: f64, sigma: f64, n: usize, rng: &mut RngStream) -> Result<MetaDataset> {
    if !(tau >= 0.0) || !(sigma > 0.0) || n == 0 {
        return Err(Error::parameter(format!(
            "simulate_nnhm requires tau >= 0, sigma > 0, n >= 1 (got tau={tau}, sigma={sigma}, n={n})"
        )));
    }
    let theta_prior = DistSpec::normal(0.0, 1.0)?;
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = mu + tau * theta_prior.sample(rng);
        y.push(theta + sigma * theta_prior.sample(rng));
    }
    let labels = (1..=n).map(|i| i.to_string()).collect();
    MetaDataset::normal_effects(labels, y, vec![sigma; n])
}

/// The classic eight-schools coaching dataset (SAT-V score effects).
pub fn eight_schools() -> MetaDataset {
    MetaDataset::normal_effects(
        (1..=8).map(|i| i.to_string()).collect(),
        vec![28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0],
        vec![15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0],
    )
    .expect("bundled dataset is valid")
}

// ---------------------------------------------------------------------------
// CSV ingestion and emission
// ---------------------------------------------------------------------------

const NORMAL_HEADER: [&str; 3] = ["study", "y", "sigma"];
const BINOMIAL_HEADER: [&str; 5] = ["study", "ft", "nt", "fc", "nc"];

/// Read a dataset from CSV. The header decides the kind:
/// `study,y,sigma` for normal effects, `study,ft,nt,fc,nc` for arm counts.
/// Lines starting with `#` are ignored.
pub fn read_dataset_csv(path: &Path) -> Result<MetaDataset> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{display}: {e}")))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("{display}: {e}")))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();

    let line_of = |rec: &csv::StringRecord| {
        rec.position().map(|p| p.line()).unwrap_or(0)
    };

    if headers == NORMAL_HEADER {
        let (mut labels, mut y, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::data(format!("{display}: {e}")))?;
            let line = line_of(&rec);
            if rec.len() != 3 {
                return Err(Error::data(format!("{display}:{line}: expected 3 fields")));
            }
            labels.push(rec[0].to_string());
            y.push(parse_field::<f64>(&rec[1], &display, line, "y")?);
            sigma.push(parse_field::<f64>(&rec[2], &display, line, "sigma")?);
        }
        MetaDataset::normal_effects(labels, y, sigma)
    } else if headers == BINOMIAL_HEADER {
        let (mut labels, mut ft, mut nt, mut fc, mut nc) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::data(format!("{display}: {e}")))?;
            let line = line_of(&rec);
            if rec.len() != 5 {
                return Err(Error::data(format!("{display}:{line}: expected 5 fields")));
            }
            labels.push(rec[0].to_string());
            ft.push(parse_field::<u64>(&rec[1], &display, line, "ft")?);
            nt.push(parse_field::<u64>(&rec[2], &display, line, "nt")?);
            fc.push(parse_field::<u64>(&rec[3], &display, line, "fc")?);
            nc.push(parse_field::<u64>(&rec[4], &display, line, "nc")?);
        }
        MetaDataset::binomial_arms(labels, ft, nt, fc, nc)
    } else {
        Err(Error::data(format!(
            "{display}:1: unrecognized header `{}`; expected `study,y,sigma` or `study,ft,nt,fc,nc`",
            headers.join(",")
        )))
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, file: &str, line: u64, col: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::data(format!("{file}:{line}: malformed `{col}` value `{s}`")))
}

/// Write a dataset in the schema `read_dataset_csv` accepts.
pub fn write_dataset_csv(d: &MetaDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    match d {
        MetaDataset::NormalEffects(nd) => {
            w.write_record(NORMAL_HEADER)?;
            for j in 0..nd.y.len() {
                w.write_record([nd.labels[j].as_str(), &nd.y[j].to_string(), &nd.sigma[j].to_string()])?;
            }
        }
        MetaDataset::BinomialArms(bd) => {
            w.write_record(BINOMIAL_HEADER)?;
            for j in 0..bd.labels.len() {
                w.write_record([
                    bd.labels[j].as_str(),
                    &bd.ft[j].to_string(),
                    &bd.nt[j].to_string(),
                    &bd.fc[j].to_string(),
                    &bd.nc[j].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::parse_dist;
    use crate::rng::stream_from_seed;
    use approx::assert_abs_diff_eq;

    pub(crate) fn nnhm_spec(family: ModelFamily, mu: &str, tau: &str) -> ModelSpec {
        let mut priors = BTreeMap::new();
        priors.insert(ParamRole::Mu, parse_dist(mu).unwrap());
        priors.insert(ParamRole::Tau, parse_dist(tau).unwrap());
        ModelSpec::new(family, priors).unwrap()
    }

    fn single_study(y: f64, sigma: f64) -> MetaDataset {
        MetaDataset::normal_effects(vec!["1".into()], vec![y], vec![sigma]).unwrap()
    }

    #[test]
    fn layout_centered_eight_schools() {
        let m = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let l = m.layout(&eight_schools()).unwrap();
        assert_eq!(l.len(), 10);
        assert_eq!(l.name(0), "mu");
        assert_eq!(l.name(1), "tau");
        assert_eq!(l.name(2), "theta[1]");
        assert_eq!(l.name(9), "theta[8]");
        assert_eq!(l.scale_tag(1), ScaleTag::LogPrecision);
        assert_eq!(l.scale_tag(0), ScaleTag::Identity);
        assert_eq!(l.display_name(1), "log(tau^-2)");
    }

    #[test]
    fn layout_logit_has_one_effect_per_arm_row() {
        let mut priors = BTreeMap::new();
        priors.insert(ParamRole::Alpha, parse_dist("N(0,16)").unwrap());
        priors.insert(ParamRole::Beta, parse_dist("N(0,16)").unwrap());
        priors.insert(ParamRole::Tau, parse_dist("HC(1)").unwrap());
        let m = ModelSpec::new(ModelFamily::LogitRe, priors).unwrap();
        let k = 22;
        let d = MetaDataset::binomial_arms(
            (1..=k).map(|i| i.to_string()).collect(),
            vec![1; k],
            vec![10; k],
            vec![2; k],
            vec![10; k],
        )
        .unwrap();
        let l = m.layout(&d).unwrap();
        assert_eq!(l.names()[..3], ["alpha", "beta", "tau"]);
        assert_eq!(l.len(), 3 + 44);
        assert_eq!(l.name(3 + 43), "eta[44]");
    }

    #[test]
    fn layout_sim_c() {
        let mut priors = BTreeMap::new();
        priors.insert(ParamRole::Mu, parse_dist("N(0,1000)").unwrap());
        priors.insert(ParamRole::Tau, parse_dist("SqrtIG(150,6)").unwrap());
        priors.insert(ParamRole::Sigma, parse_dist("SqrtIG(150,6)").unwrap());
        let m = ModelSpec::new(ModelFamily::SimC, priors).unwrap();
        let d = simulate_nnhm(2.5, 0.5, 0.2, 50, &mut stream_from_seed(1)).unwrap();
        let l = m.layout(&d).unwrap();
        assert_eq!(l.names()[..3], ["mu", "sigma", "tau"]);
        assert_eq!(l.len(), 53);
    }

    #[test]
    fn incompatible_family_and_data() {
        let m = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let d = MetaDataset::binomial_arms(vec!["1".into()], vec![1], vec![2], vec![1], vec![2]).unwrap();
        assert!(m.layout(&d).is_err());
    }

    #[test]
    fn scale_prior_must_be_positive() {
        let mut priors = BTreeMap::new();
        priors.insert(ParamRole::Mu, parse_dist("N(0,16)").unwrap());
        priors.insert(ParamRole::Tau, parse_dist("N(0,1)").unwrap());
        assert!(ModelSpec::new(ModelFamily::NnhmCentered, priors).is_err());
    }

    #[test]
    fn single_study_standard_normal_loglik() {
        let m = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let d = single_study(0.0, 1.0);
        let ll = m.log_likelihood(&d, &[0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(ll, -0.9189385332046727, epsilon = 1e-12);
        assert_abs_diff_eq!(m.deviance(&d, &[0.0, 1.0, 0.0]).unwrap(), 1.8378770664093453, epsilon = 1e-12);
    }

    #[test]
    fn logit_single_arm_hand_value() {
        let mut priors = BTreeMap::new();
        priors.insert(ParamRole::Alpha, parse_dist("N(0,16)").unwrap());
        priors.insert(ParamRole::Beta, parse_dist("N(0,16)").unwrap());
        priors.insert(ParamRole::Tau, parse_dist("HC(1)").unwrap());
        let m = ModelSpec::new(ModelFamily::LogitRe, priors).unwrap();
        let d = MetaDataset::binomial_arms(vec!["1".into()], vec![1], vec![2], vec![0], vec![1]).unwrap();
        // both arms at linear predictor 0: ln C(2,1) + 2 ln(1/2) for the
        // treatment row, ln(1/2) for the control row
        let ll = m.log_likelihood(&d, &[0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let expect = (2f64.ln() + 2.0 * 0.5f64.ln()) + 0.5f64.ln();
        assert_abs_diff_eq!(ll, expect, epsilon = 1e-12);
    }

    #[test]
    fn deviance_is_additive_over_studies() {
        let m = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let d12 = MetaDataset::normal_effects(
            vec!["1".into(), "2".into()],
            vec![1.0, -2.0],
            vec![2.0, 3.0],
        )
        .unwrap();
        let p12 = [0.5, 1.0, 0.3, -0.7];
        let d1 = single_study(1.0, 2.0);
        let d2 = single_study(-2.0, 3.0);
        let total = m.deviance(&d12, &p12).unwrap();
        let part1 = m.deviance(&d1, &[0.5, 1.0, 0.3]).unwrap();
        let part2 = m.deviance(&d2, &[0.5, 1.0, -0.7]).unwrap();
        assert_abs_diff_eq!(total, part1 + part2, epsilon = 1e-12);
    }

    #[test]
    fn latent_density_values() {
        let m = nnhm_spec(ModelFamily::NnhmNonCentered, "N(0,16)", "HN(5)");
        let d = eight_schools();
        // all theta_tilde at 0: 8 standard-normal modes
        let mut p = vec![0.0; 10];
        p[1] = 1.0;
        assert_abs_diff_eq!(
            m.log_latent(&d, &p).unwrap(),
            8.0 * -0.9189385332046727,
            epsilon = 1e-10
        );

        let mc = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let tau = 2.0;
        let mut p = vec![1.5; 10];
        p[1] = tau;
        // all theta_j equal to mu: k times the latent density at its mode
        let expect = 8.0 * normal_log_pdf(0.0, 0.0, tau * tau);
        assert_abs_diff_eq!(mc.log_latent(&d, &p).unwrap(), expect, epsilon = 1e-10);
    }

    #[test]
    fn prior_composes_role_densities() {
        let m = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let d = single_study(0.0, 1.0);
        let tau = DistSpec::half_normal(5.0).unwrap().median().unwrap();
        let lp = m.log_prior(&d, &[0.0, tau, 0.0]).unwrap();
        let expect = DistSpec::normal(0.0, 16.0).unwrap().log_pdf(0.0)
            + DistSpec::half_normal(5.0).unwrap().log_pdf(tau);
        assert_abs_diff_eq!(lp, expect, epsilon = 1e-12);
    }

    #[test]
    fn centered_and_noncentered_match_on_matched_states() {
        // log-likelihood must agree when theta_j = mu + tau * theta_tilde_j
        let mc = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let mnc = nnhm_spec(ModelFamily::NnhmNonCentered, "N(0,16)", "HN(5)");
        let d = eight_schools();
        let (mu, tau) = (3.0, 2.5);
        let tilde: Vec<f64> = (0..8).map(|j| (j as f64 - 4.0) / 3.0).collect();
        let mut pc = vec![mu, tau];
        pc.extend(tilde.iter().map(|t| mu + tau * t));
        let mut pnc = vec![mu, tau];
        pnc.extend(&tilde);
        assert_abs_diff_eq!(
            mc.log_likelihood(&d, &pc).unwrap(),
            mnc.log_likelihood(&d, &pnc).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn likelihood_invariant_under_study_permutation() {
        let m = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let d = eight_schools();
        let p: Vec<f64> = vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let base = m.log_likelihood(&d, &p).unwrap();

        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let MetaDataset::NormalEffects(nd) = eight_schools() else { unreachable!() };
        let d2 = MetaDataset::normal_effects(
            perm.iter().map(|&j| nd.labels[j].clone()).collect(),
            perm.iter().map(|&j| nd.y[j]).collect(),
            perm.iter().map(|&j| nd.sigma[j]).collect(),
        )
        .unwrap();
        let mut p2 = vec![3.0, 2.0];
        p2.extend(perm.iter().map(|&j| p[2 + j]));
        assert_abs_diff_eq!(m.log_likelihood(&d2, &p2).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn sim_c_likelihood_depends_only_on_stated_density() {
        // swapping the roles of the variance components while keeping theta
        // fixed changes the likelihood only through sigma
        let mut priors = BTreeMap::new();
        priors.insert(ParamRole::Mu, parse_dist("N(0,1000)").unwrap());
        priors.insert(ParamRole::Tau, parse_dist("expN(0,1000)").unwrap());
        priors.insert(ParamRole::Sigma, parse_dist("expN(0,1000)").unwrap());
        let m = ModelSpec::new(ModelFamily::SimC, priors).unwrap();
        let d = simulate_nnhm(2.5, 0.5, 0.2, 10, &mut stream_from_seed(2)).unwrap();
        let mut p = vec![2.5, 0.2, 0.5];
        p.extend(vec![2.5; 10]);
        let a = m.log_likelihood(&d, &p).unwrap();
        p[2] = 9.0; // tau does not enter the likelihood
        let b = m.log_likelihood(&d, &p).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn simulate_nnhm_marginal_mean() {
        let mut rng = stream_from_seed(99);
        let d = simulate_nnhm(2.5, 0.5, 0.2, 50, &mut rng).unwrap();
        let MetaDataset::NormalEffects(nd) = d else { unreachable!() };
        let mean = nd.y.iter().sum::<f64>() / 50.0;
        let tol = 4.0 * ((0.25 + 0.04) / 50.0f64).sqrt();
        assert!((mean - 2.5).abs() < tol, "mean {mean}");
        assert!(nd.sigma.iter().all(|&s| s == 0.2));
    }

    #[test]
    fn simulate_nnhm_zero_tau_and_determinism() {
        let d1 = simulate_nnhm(1.0, 0.0, 0.5, 20, &mut stream_from_seed(7)).unwrap();
        let d2 = simulate_nnhm(1.0, 0.0, 0.5, 20, &mut stream_from_seed(7)).unwrap();
        assert_eq!(d1, d2);
        assert!(simulate_nnhm(0.0, -1.0, 1.0, 5, &mut stream_from_seed(1)).is_err());
        assert!(simulate_nnhm(0.0, 1.0, 0.0, 5, &mut stream_from_seed(1)).is_err());
    }

    #[test]
    fn dimension_error_on_wrong_vector() {
        let m = nnhm_spec(ModelFamily::NnhmCentered, "N(0,16)", "HN(5)");
        let d = eight_schools();
        match m.log_likelihood(&d, &[0.0, 1.0]) {
            Err(Error::Dimension { expected: 10, got: 2 }) => {}
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn log_odds_ratio_conversion() {
        // no zero cells: plain log-OR
        let d = BinomialArmsData {
            labels: vec!["1".into()],
            ft: vec![3],
            nt: vec![10],
            fc: vec![5],
            nc: vec![10],
        };
        let MetaDataset::NormalEffects(nd) = d.to_log_odds_ratios().unwrap() else {
            unreachable!()
        };
        assert_abs_diff_eq!(nd.y[0], (3.0 * 5.0 / (7.0 * 5.0f64)).ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_odds_ratio_zero_cell_correction() {
        let d = BinomialArmsData {
            labels: vec!["1".into()],
            ft: vec![0],
            nt: vec![10],
            fc: vec![5],
            nc: vec![10],
        };
        let MetaDataset::NormalEffects(nd) = d.to_log_odds_ratios().unwrap() else {
            unreachable!()
        };
        let (a, b, c, dd) = (0.5, 10.5, 5.5, 5.5);
        assert_abs_diff_eq!(nd.y[0], (a * dd / (b * c)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            nd.sigma[0],
            (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / dd).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn csv_round_trip_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("ne.csv");
        write_dataset_csv(&eight_schools(), &p1).unwrap();
        assert_eq!(read_dataset_csv(&p1).unwrap(), eight_schools());

        let d = MetaDataset::binomial_arms(
            vec!["a".into(), "b".into()],
            vec![1, 2],
            vec![10, 20],
            vec![3, 4],
            vec![30, 40],
        )
        .unwrap();
        let p2 = dir.path().join("ba.csv");
        write_dataset_csv(&d, &p2).unwrap();
        assert_eq!(read_dataset_csv(&p2).unwrap(), d);
    }

    #[test]
    fn csv_errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "study,y,sigma\n1,2.0,1.0\n2,oops,1.0\n").unwrap();
        let err = read_dataset_csv(&p).unwrap_err().to_string();
        assert!(err.contains("bad.csv:3"), "error was: {err}");
        assert!(err.contains("`y`"), "error was: {err}");

        std::fs::write(&p, "effect,se\n1.0,2.0\n").unwrap();
        let err = read_dataset_csv(&p).unwrap_err().to_string();
        assert!(err.contains("unrecognized header"), "error was: {err}");
    }

    #[test]
    fn dataset_validation() {
        assert!(MetaDataset::normal_effects(vec!["1".into()], vec![1.0], vec![0.0]).is_err());
        assert!(MetaDataset::normal_effects(vec![], vec![], vec![]).is_err());
        assert!(
            MetaDataset::binomial_arms(vec!["1".into()], vec![3], vec![2], vec![0], vec![1]).is_err()
        );
        assert!(
            MetaDataset::binomial_arms(vec!["1".into()], vec![0], vec![0], vec![0], vec![1]).is_err()
        );
    }
}
