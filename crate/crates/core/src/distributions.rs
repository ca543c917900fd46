//! Parametric policy families: a 1-D Gaussian over a real action and a
//! softmax categorical over a finite action set.
//!
//! Every operation is a pure function of its inputs. A [`PolicyFamily`] fixes
//! the family and the chart (coordinate system) its parameters are written in,
//! and a [`ParamVector`] carries the chart it was expressed in so that mixing
//! charts is caught instead of silently producing the wrong distribution.
//!
//! Gaussian parameters are `(μ, σ)` in the natural chart and `(μ, ln σ)` in the
//! log-scale chart. Categorical parameters are unnormalised logits and only
//! have a natural chart.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fisher::{FisherEstimate, Provenance};
use crate::linalg::Matrix;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    GaussianDiag,
    CategoricalSoftmax,
}

/// Coordinate system on a family's parameter manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Chart {
    /// `σ` stored directly (Gaussian) or raw logits (categorical).
    Natural,
    /// `ln σ` stored in place of `σ`. Gaussian only.
    LogScale,
}

impl fmt::Display for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Chart::Natural => "natural",
            Chart::LogScale => "log-scale",
        })
    }
}

impl FromStr for Chart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Chart::Natural),
            "log-scale" => Ok(Chart::LogScale),
            other => Err(Error::InvalidArgument(format!("unknown chart `{other}`"))),
        }
    }
}

/// A policy family together with the chart its parameters are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicyFamily {
    kind: FamilyKind,
    dimension: usize,
    chart: Chart,
}

impl PolicyFamily {
    /// 1-D Gaussian with parameters `(μ, σ)` or `(μ, ln σ)`.
    pub fn gaussian(chart: Chart) -> Self {
        Self {
            kind: FamilyKind::GaussianDiag,
            dimension: 2,
            chart,
        }
    }

    /// Softmax over `categories` logits.
    pub fn categorical(categories: usize) -> Result<Self> {
        if categories == 0 {
            return Err(Error::InvalidArgument(
                "categorical family needs at least one category".into(),
            ));
        }
        Ok(Self {
            kind: FamilyKind::CategoricalSoftmax,
            dimension: categories,
            chart: Chart::Natural,
        })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// Number of distribution parameters.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    /// The same family re-expressed in another chart.
    pub fn with_chart(&self, chart: Chart) -> Result<Self> {
        check_chart_supported(self.kind, chart)?;
        Ok(Self { chart, ..*self })
    }

    /// Checks that `theta` is a valid parameter point of this family.
    pub fn validate(&self, theta: &ParamVector) -> Result<()> {
        if theta.chart != self.chart {
            return Err(Error::InvalidArgument(format!(
                "chart mismatch: family uses {} but parameters are in {}",
                self.chart, theta.chart
            )));
        }
        if theta.len() != self.dimension {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.dimension,
                theta.len()
            )));
        }
        if self.kind == FamilyKind::GaussianDiag && self.chart == Chart::Natural {
            let sigma = theta.values[1];
            if sigma <= 0.0 {
                return Err(Error::Domain(format!("σ must be positive, got {sigma}")));
            }
        }
        Ok(())
    }
}

fn check_chart_supported(kind: FamilyKind, chart: Chart) -> Result<()> {
    if kind == FamilyKind::CategoricalSoftmax && chart == Chart::LogScale {
        return Err(Error::InvalidArgument(
            "categorical family has no log-scale chart".into(),
        ));
    }
    Ok(())
}

/// Flat vector of real policy parameters tagged with its chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    chart: Chart,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, chart: Chart) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values, chart })
    }

    /// Shorthand for natural-chart parameters.
    pub fn natural(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Chart::Natural)
    }

    pub fn zeros(len: usize, chart: Chart) -> Self {
        Self {
            values: vec![0.0; len],
            chart,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A single action drawn from a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Real(f64),
    Index(usize),
}

impl Action {
    pub fn as_real(&self) -> Option<f64> {
        match *self {
            Action::Real(x) => Some(x),
            Action::Index(_) => None,
        }
    }

    pub fn as_index(&self) -> Option<usize> {
        match *self {
            Action::Index(i) => Some(i),
            Action::Real(_) => None,
        }
    }
}

/// `(μ, σ)` of a validated Gaussian parameter vector, whatever its chart.
fn mean_and_scale(theta: &ParamVector) -> (f64, f64) {
    let v = theta.values();
    match theta.chart {
        Chart::Natural => (v[0], v[1]),
        Chart::LogScale => (v[0], v[1].exp()),
    }
}

/// `ln σ` of a validated Gaussian parameter vector.
fn log_scale(theta: &ParamVector) -> f64 {
    let v = theta.values();
    match theta.chart {
        Chart::Natural => v[1].ln(),
        Chart::LogScale => v[1],
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - max - log_sum).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn real_action(x: Action) -> Result<f64> {
    x.as_real()
        .ok_or_else(|| Error::InvalidArgument("Gaussian policy needs a real action".into()))
}

fn index_action(family: &PolicyFamily, x: Action) -> Result<usize> {
    match x {
        Action::Index(i) if i < family.dimension => Ok(i),
        Action::Index(i) => Err(Error::InvalidArgument(format!(
            "action {i} out of range for {} categories",
            family.dimension
        ))),
        Action::Real(_) => Err(Error::InvalidArgument(
            "categorical policy needs an index action".into(),
        )),
    }
}

/// Log-density (Gaussian) or log-mass (categorical) of `x` under `π_θ`.
pub fn log_prob(family: &PolicyFamily, theta: &ParamVector, x: Action) -> Result<f64> {
    family.validate(theta)?;
    match family.kind {
        FamilyKind::GaussianDiag => {
            let x = real_action(x)?;
            let (mu, sigma) = mean_and_scale(theta);
            let z = (x - mu) / sigma;
            Ok(-LN_SQRT_2PI - log_scale(theta) - 0.5 * z * z)
        }
        FamilyKind::CategoricalSoftmax => {
            let i = index_action(family, x)?;
            Ok(log_softmax(theta.values())[i])
        }
    }
}

/// `∇θ log π_θ(x)` in `theta`'s chart.
pub fn score(family: &PolicyFamily, theta: &ParamVector, x: Action) -> Result<ParamVector> {
    family.validate(theta)?;
    let values = match family.kind {
        FamilyKind::GaussianDiag => {
            let x = real_action(x)?;
            let (mu, sigma) = mean_and_scale(theta);
            let d = x - mu;
            let var = sigma * sigma;
            match theta.chart {
                Chart::Natural => vec![d / var, (d * d - var) / (var * sigma)],
                Chart::LogScale => vec![d / var, d * d / var - 1.0],
            }
        }
        FamilyKind::CategoricalSoftmax => {
            let i = index_action(family, x)?;
            let mut g: Vec<f64> = softmax(theta.values()).into_iter().map(|p| -p).collect();
            g[i] += 1.0;
            g
        }
    };
    ParamVector::new(values, theta.chart)
}

/// Draws one action from `π_θ`, deterministically for a given seed.
pub fn sample(family: &PolicyFamily, theta: &ParamVector, seed: u64) -> Result<Action> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(family, theta, &mut rng)
}

/// Draws one action from `π_θ` using the caller's generator.
pub fn sample_with<R: Rng + ?Sized>(
    family: &PolicyFamily,
    theta: &ParamVector,
    rng: &mut R,
) -> Result<Action> {
    family.validate(theta)?;
    Ok(match family.kind {
        FamilyKind::GaussianDiag => {
            let (mu, sigma) = mean_and_scale(theta);
            let z: f64 = rng.sample(StandardNormal);
            Action::Real(mu + sigma * z)
        }
        FamilyKind::CategoricalSoftmax => {
            let probs = softmax(theta.values());
            Action::Index(draw_index(&probs, rng.random::<f64>()))
        }
    })
}

/// Inverse-CDF draw from a probability vector given `u ∈ [0, 1)`.
fn draw_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the cumulative sum just below 1
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `D_KL(π_a ‖ π_b)` in nats.
pub fn kl_closed_form(
    family: &PolicyFamily,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
) -> Result<f64> {
    family.validate(theta_a)?;
    family.validate(theta_b)?;
    let kl = match family.kind {
        FamilyKind::GaussianDiag => {
            let (mu_a, sigma_a) = mean_and_scale(theta_a);
            let (mu_b, sigma_b) = mean_and_scale(theta_b);
            // ln(σb/σa) + (σa²/σb² − 1)/2 written in t = σa/σb − 1 to keep
            // precision when the scales are close
            let t = sigma_a / sigma_b - 1.0;
            let dmu = (mu_a - mu_b) / sigma_b;
            -t.ln_1p() + t + 0.5 * t * t + 0.5 * dmu * dmu
        }
        FamilyKind::CategoricalSoftmax => {
            let log_p = log_softmax(theta_a.values());
            let log_q = log_softmax(theta_b.values());
            log_p
                .iter()
                .zip(&log_q)
                .filter(|(lp, _)| lp.is_finite())
                .map(|(lp, lq)| {
                    let p = lp.exp();
                    if p == 0.0 {
                        0.0
                    } else {
                        p * (lp - lq)
                    }
                })
                .sum()
        }
    };
    Ok(kl.max(0.0))
}

/// Exact Fisher information matrix in `theta`'s chart.
pub fn fisher_analytic(family: &PolicyFamily, theta: &ParamVector) -> Result<FisherEstimate> {
    family.validate(theta)?;
    let matrix = match family.kind {
        FamilyKind::GaussianDiag => {
            let (_, sigma) = mean_and_scale(theta);
            let inv_var = 1.0 / (sigma * sigma);
            match theta.chart {
                Chart::Natural => Matrix::from_diagonal(&[inv_var, 2.0 * inv_var]),
                Chart::LogScale => Matrix::from_diagonal(&[inv_var, 2.0]),
            }
        }
        FamilyKind::CategoricalSoftmax => categorical_fisher(&softmax(theta.values())),
    };
    Ok(FisherEstimate::new(matrix, Provenance::Analytic, 0))
}

/// `diag(p) − p pᵀ`.
pub(crate) fn categorical_fisher(probs: &[f64]) -> Matrix {
    let mut m = Matrix::from_diagonal(probs);
    m.add_outer(probs, -1.0);
    m
}

/// Expresses the distribution `theta` in `target` chart.
pub fn reparameterize(
    family: &PolicyFamily,
    theta: &ParamVector,
    target: Chart,
) -> Result<ParamVector> {
    family.validate(theta)?;
    check_chart_supported(family.kind, target)?;
    if target == theta.chart {
        return Ok(theta.clone());
    }
    // only the Gaussian has two charts
    let v = theta.values();
    let second = match target {
        Chart::Natural => v[1].exp(),
        Chart::LogScale => v[1].ln(),
    };
    ParamVector::new(vec![v[0], second], target)
}
