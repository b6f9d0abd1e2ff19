//! Scalar distributions over the social preference β.
//!
//! Every training, proposal and naturalistic distribution in the framework is
//! one of four shapes: uniform, Gaussian, Gaussian mixture with constructed
//! components, or a Gaussian-kernel density estimate over observed β values.
//! Values are immutable after construction and validated once.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Distribution over β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawDistribution")]
pub enum ScenarioDistribution {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mu: f64, sigma: f64 },
    Mixture { components: Vec<(f64, f64)>, weights: Vec<f64> },
    Kde { samples: Vec<f64>, bandwidth: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawDistribution {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mu: f64, sigma: f64 },
    Mixture { components: Vec<(f64, f64)>, weights: Vec<f64> },
    Kde { samples: Vec<f64>, bandwidth: f64 },
}

impl TryFrom<RawDistribution> for ScenarioDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        let d = match raw {
            RawDistribution::Uniform { lo, hi } => ScenarioDistribution::Uniform { lo, hi },
            RawDistribution::Gaussian { mu, sigma } => ScenarioDistribution::Gaussian { mu, sigma },
            RawDistribution::Mixture { components, weights } => {
                ScenarioDistribution::Mixture { components, weights }
            }
            RawDistribution::Kde { samples, bandwidth } => {
                ScenarioDistribution::Kde { samples, bandwidth }
            }
        };
        d.validate()?;
        Ok(d)
    }
}

/// Upper bound applied to importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightCap {
    Unbounded,
    Capped(f64),
}

impl WeightCap {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            WeightCap::Unbounded => w,
            WeightCap::Capped(c) => w.min(c),
        }
    }
}

/// Kernel bandwidth selection for [`fit_kde`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Silverman's rule of thumb, `1.06 · sd · n^(-1/5)`.
    Auto,
    Fixed(f64),
}

/// Mixture weights for [`make_gmm`].
#[derive(Debug, Clone, PartialEq)]
pub enum MixtureWeights {
    Equal,
    Given(Vec<f64>),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("{name} must be finite, got {v}")))
    }
}

fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

impl ScenarioDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = Self::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        let d = Self::Gaussian { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn mixture(components: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self> {
        let d = Self::Mixture { components, weights };
        d.validate()?;
        Ok(d)
    }

    pub fn kde(samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        let d = Self::Kde { samples, bandwidth };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform { lo, hi } => {
                finite("lo", *lo)?;
                finite("hi", *hi)?;
                if lo >= hi {
                    return Err(Error::InvalidDistribution(format!(
                        "uniform requires lo < hi, got ({lo}, {hi})"
                    )));
                }
            }
            Self::Gaussian { mu, sigma } => {
                finite("mu", *mu)?;
                positive("sigma", *sigma)?;
            }
            Self::Mixture { components, weights } => {
                if components.is_empty() {
                    return Err(Error::InvalidDistribution("mixture has no components".into()));
                }
                if components.len() != weights.len() {
                    return Err(Error::InvalidDistribution(format!(
                        "{} components but {} weights",
                        components.len(),
                        weights.len()
                    )));
                }
                for (mu, sigma) in components {
                    finite("mu", *mu)?;
                    positive("sigma", *sigma)?;
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidDistribution("negative mixture weight".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidDistribution(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
            }
            Self::Kde { samples, bandwidth } => {
                if samples.is_empty() {
                    return Err(Error::InvalidDistribution("kde has no samples".into()));
                }
                for s in samples {
                    finite("kde sample", *s)?;
                }
                positive("bandwidth", *bandwidth)?;
            }
        }
        Ok(())
    }

    /// Natural log of the density; `-inf` outside the support.
    pub fn log_density(&self, beta: f64) -> f64 {
        match self {
            Self::Uniform { lo, hi } => {
                if (*lo..=*hi).contains(&beta) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Gaussian { mu, sigma } => log_normal_pdf(beta, *mu, *sigma),
            Self::Mixture { components, weights } => log_sum_exp(
                components
                    .iter()
                    .zip(weights)
                    .map(move |(&(mu, sigma), &w)| w.ln() + log_normal_pdf(beta, mu, sigma)),
            ),
            Self::Kde { samples, bandwidth } => {
                let h = *bandwidth;
                log_sum_exp(samples.iter().map(move |&s| log_normal_pdf(beta, s, h)))
                    - (samples.len() as f64).ln()
            }
        }
    }

    pub fn density(&self, beta: f64) -> f64 {
        match self {
            Self::Uniform { lo, hi } => {
                if (*lo..=*hi).contains(&beta) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Gaussian { mu, sigma } => {
                let z = (beta - mu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            }
            Self::Mixture { components, weights } => components
                .iter()
                .zip(weights)
                .map(|(&(mu, sigma), &w)| {
                    let z = (beta - mu) / sigma;
                    w * (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
                })
                .sum(),
            Self::Kde { samples, bandwidth } => {
                let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * PI).sqrt());
                samples
                    .iter()
                    .map(|s| {
                        let z = (beta - s) / bandwidth;
                        (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
                    * norm
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::Gaussian { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            }
            Self::Mixture { components, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                let (mu, sigma) = components[pick];
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            }
            Self::Kde { samples, bandwidth } => {
                let centre = samples[rng.random_range(0..samples.len())];
                let z: f64 = rng.sample(StandardNormal);
                centre + bandwidth * z
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Gaussian { mu, .. } => *mu,
            Self::Mixture { components, weights } => {
                components.iter().zip(weights).map(|(c, w)| c.0 * w).sum()
            }
            Self::Kde { samples, .. } => samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }

    /// Largest scale parameter (σ or bandwidth); zero for uniform.
    pub fn max_scale(&self) -> f64 {
        match self {
            Self::Uniform { .. } => 0.0,
            Self::Gaussian { sigma, .. } => *sigma,
            Self::Mixture { components, .. } => {
                components.iter().map(|c| c.1).fold(0.0, f64::max)
            }
            Self::Kde { bandwidth, .. } => *bandwidth,
        }
    }

    fn min_scale(&self) -> f64 {
        match self {
            Self::Uniform { lo, hi } => hi - lo,
            Self::Gaussian { sigma, .. } => *sigma,
            Self::Mixture { components, .. } => {
                components.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)
            }
            Self::Kde { bandwidth, .. } => *bandwidth,
        }
    }

    /// Interval holding all but a negligible fraction of the mass: the
    /// location range padded by `pad_scales` of the largest scale.
    pub fn support_bounds(&self, pad_scales: f64) -> (f64, f64) {
        let (lo, hi) = match self {
            Self::Uniform { lo, hi } => (*lo, *hi),
            Self::Gaussian { mu, .. } => (*mu, *mu),
            Self::Mixture { components, .. } => components
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c.0), h.max(c.0))),
            Self::Kde { samples, .. } => samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| (l.min(*s), h.max(*s))),
        };
        let pad = pad_scales * self.max_scale();
        (lo - pad, hi + pad)
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Uniform { lo, hi } => vec![*lo, *hi],
            _ => Vec::new(),
        }
    }
}

/// Composite Simpson integral of the density over `[a, b]`, split at the
/// distribution's density discontinuities.
pub fn quadrature_mass_on(dist: &ScenarioDistribution, a: f64, b: f64) -> f64 {
    let mut cuts = vec![a];
    cuts.extend(dist.breakpoints().into_iter().filter(|x| *x > a && *x < b));
    cuts.push(b);
    let step_target = (dist.min_scale() / 40.0).max(1e-4);
    cuts.windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let mut n = (((hi - lo) / step_target).ceil() as usize).max(2);
            if n % 2 == 1 {
                n += 1;
            }
            let h = (hi - lo) / n as f64;
            // Endpoints of each piece are evaluated from the inside so that
            // one-sided limits are used at discontinuities.
            let eps = h * 1e-9;
            let f = |x: f64| dist.density(x);
            let mut sum = f(lo + eps) + f(hi - eps);
            for i in 1..n {
                let x = lo + i as f64 * h;
                sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            sum * h / 3.0
        })
        .sum()
}

/// Density mass over the support padded by ten of the largest scales.
pub fn quadrature_mass(dist: &ScenarioDistribution) -> f64 {
    let (a, b) = dist.support_bounds(10.0);
    let (a, b) = match dist {
        ScenarioDistribution::Uniform { lo, hi } => (a.min(lo - 1.0), b.max(hi + 1.0)),
        _ => (a, b),
    };
    quadrature_mass_on(dist, a, b)
}

pub fn density(dist: &ScenarioDistribution, beta: f64) -> f64 {
    dist.density(beta)
}

pub fn sample<R: Rng + ?Sized>(dist: &ScenarioDistribution, rng: &mut R) -> f64 {
    dist.sample(rng)
}

/// `min(p(β)/q(β), cap)`, computed in log space.
///
/// Fails when the denominator has no mass at `beta`.
pub fn likelihood_ratio(
    numerator: &ScenarioDistribution,
    denominator: &ScenarioDistribution,
    beta: f64,
    cap: WeightCap,
) -> Result<f64> {
    let log_q = denominator.log_density(beta);
    if log_q == f64::NEG_INFINITY || log_q.is_nan() {
        return Err(Error::SupportViolation { beta });
    }
    let log_p = numerator.log_density(beta);
    Ok(cap.apply((log_p - log_q).exp()))
}

/// Gaussian-kernel density estimate centred on `samples`.
pub fn fit_kde(samples: &[f64], bandwidth: Bandwidth) -> Result<ScenarioDistribution> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSamples(format!(
            "kde needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Auto => {
            let (_, sd) = sample_moments(samples);
            if !(sd > 0.0) {
                return Err(Error::DegenerateSamples(
                    "zero sample variance, cannot pick a bandwidth".into(),
                ));
            }
            1.06 * sd * (samples.len() as f64).powf(-0.2)
        }
    };
    ScenarioDistribution::kde(samples.to_vec(), h)
}

/// Mean and unbiased standard deviation.
pub fn sample_moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mixture with one Gaussian per mean, all sharing `sigma`.
pub fn make_gmm(means: &[f64], sigma: f64, weights: MixtureWeights) -> Result<ScenarioDistribution> {
    if means.is_empty() {
        return Err(Error::Empty("gmm means"));
    }
    let weights = match weights {
        MixtureWeights::Equal => vec![1.0 / means.len() as f64; means.len()],
        MixtureWeights::Given(w) => {
            if w.len() != means.len() {
                return Err(Error::InvalidDistribution(format!(
                    "{} means but {} weights",
                    means.len(),
                    w.len()
                )));
            }
            w
        }
    };
    ScenarioDistribution::mixture(means.iter().map(|&m| (m, sigma)).collect(), weights)
}

// ---------------------------------------------------------------------------
// Literals: uniform(-1,3), gaussian(1.5,0.5), gmm([m1,m2],sigma,equal),
// mixture([m..],[s..],[w..]), kde(path.csv, auto), kde([b..], 0.1)
// ---------------------------------------------------------------------------

fn fmt_list(f: &mut fmt::Formatter<'_>, xs: &[f64]) -> fmt::Result {
    f.write_str("[")?;
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{x}")?;
    }
    f.write_str("]")
}

impl fmt::Display for ScenarioDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            Self::Gaussian { mu, sigma } => write!(f, "gaussian({mu},{sigma})"),
            Self::Mixture { components, weights } => {
                let means: Vec<f64> = components.iter().map(|c| c.0).collect();
                let sigmas: Vec<f64> = components.iter().map(|c| c.1).collect();
                let shared = sigmas.iter().all(|s| *s == sigmas[0]);
                let equal = weights.iter().all(|w| *w == 1.0 / weights.len() as f64);
                if shared {
                    f.write_str("gmm(")?;
                    fmt_list(f, &means)?;
                    write!(f, ",{},", sigmas[0])?;
                    if equal {
                        f.write_str("equal")?;
                    } else {
                        fmt_list(f, weights)?;
                    }
                    f.write_str(")")
                } else {
                    f.write_str("mixture(")?;
                    fmt_list(f, &means)?;
                    f.write_str(",")?;
                    fmt_list(f, &sigmas)?;
                    f.write_str(",")?;
                    fmt_list(f, weights)?;
                    f.write_str(")")
                }
            }
            Self::Kde { samples, bandwidth } => {
                f.write_str("kde(")?;
                fmt_list(f, samples)?;
                write!(f, ",{bandwidth})")
            }
        }
    }
}

impl std::str::FromStr for ScenarioDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_literal(s, None)
    }
}

/// Splits a comma list at top level (outside brackets).
fn split_args(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

/// Parses a distribution literal. Relative `kde(path, ..)` paths are resolved
/// against `base_dir` when given.
pub fn parse_literal(text: &str, base_dir: Option<&Path>) -> Result<ScenarioDistribution> {
    let literal = text.trim();
    let err = |msg: &str| Error::Literal {
        literal: literal.to_string(),
        msg: msg.to_string(),
    };
    let open = literal.find('(').ok_or_else(|| err("expected `name(args)`"))?;
    if !literal.ends_with(')') {
        return Err(err("missing closing parenthesis"));
    }
    let name = literal[..open].trim().to_ascii_lowercase();
    let args = split_args(&literal[open + 1..literal.len() - 1]);
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| err(&format!("`{s}` is not a number")))
    };
    let list = |s: &str| -> Result<Vec<f64>> {
        let inner = s
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| err(&format!("`{s}` is not a [..] list")))?;
        if inner.trim().is_empty() {
            return Ok(Vec::new());
        }
        inner.split(',').map(|x| num(x.trim())).collect()
    };
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(err(&format!("`{name}` takes {n} arguments, got {}", args.len())))
        }
    };
    match name.as_str() {
        "uniform" | "u" => {
            arity(2)?;
            ScenarioDistribution::uniform(num(args[0])?, num(args[1])?)
        }
        "gaussian" | "normal" | "n" => {
            arity(2)?;
            ScenarioDistribution::gaussian(num(args[0])?, num(args[1])?)
        }
        "gmm" => {
            arity(3)?;
            let means = list(args[0])?;
            let sigma = num(args[1])?;
            let weights = if args[2].eq_ignore_ascii_case("equal") {
                MixtureWeights::Equal
            } else {
                MixtureWeights::Given(list(args[2])?)
            };
            make_gmm(&means, sigma, weights)
        }
        "mixture" => {
            arity(3)?;
            let means = list(args[0])?;
            let sigmas = list(args[1])?;
            if means.len() != sigmas.len() {
                return Err(err("means and sigmas differ in length"));
            }
            ScenarioDistribution::mixture(means.into_iter().zip(sigmas).collect(), list(args[2])?)
        }
        "kde" => {
            arity(2)?;
            let bandwidth = if args[1].eq_ignore_ascii_case("auto") {
                Bandwidth::Auto
            } else {
                Bandwidth::Fixed(num(args[1])?)
            };
            let samples = if args[0].starts_with('[') {
                list(args[0])?
            } else {
                let mut path = Path::new(args[0]).to_path_buf();
                if let (true, Some(base)) = (path.is_relative(), base_dir) {
                    path = base.join(path);
                }
                read_beta_column(&path)?
            };
            fit_kde(&samples, bandwidth)
        }
        _ => Err(err("unknown distribution")),
    }
}

/// Reads β values from a CSV file: the `beta` or `beta_hat` column when a
/// header names one, otherwise the last column. Non-numeric first lines are
/// treated as headers.
pub fn read_beta_column(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let mut column: Option<usize> = None;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if column.is_none() && out.is_empty() && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            column = fields
                .iter()
                .position(|f| *f == "beta" || *f == "beta_hat")
                .or(Some(fields.len() - 1));
            continue;
        }
        let idx = column.unwrap_or(fields.len() - 1);
        let field = fields.get(idx).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "missing β column".into(),
        })?;
        out.push(field.parse::<f64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("`{field}` is not a number"),
        })?);
    }
    Ok(out)
}
