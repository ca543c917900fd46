//! Fisher information estimates: from sampled score vectors, from finite
//! differences of the KL divergence, and conditioning by diagonal damping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::{self, Chart, FamilyKind, ParamVector, PolicyFamily};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::solver::LinearOperator;

/// Default central-difference step for [`kl_hessian_fd`].
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Default diagonal damping applied before solving against a singular or
/// sampled Fisher matrix.
pub const DEFAULT_DAMPING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Sampled,
    FdHessian,
}

/// A symmetric Fisher matrix and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherEstimate {
    matrix: Matrix,
    provenance: Provenance,
    sample_count: usize,
    damping: f64,
}

impl FisherEstimate {
    /// Wraps `matrix`, symmetrizing it.
    pub fn new(mut matrix: Matrix, provenance: Provenance, sample_count: usize) -> Self {
        matrix.symmetrize();
        Self {
            matrix,
            provenance,
            sample_count,
            damping: 0.0,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Total damping added to the diagonal so far.
    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

impl LinearOperator for FisherEstimate {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(v)
    }
}

fn check_scores(scores: &[ParamVector]) -> Result<(usize, Chart)> {
    let first = scores
        .first()
        .ok_or_else(|| Error::InvalidArgument("no score vectors".into()))?;
    let (n, chart) = (first.len(), first.chart());
    for (i, s) in scores.iter().enumerate() {
        if s.len() != n || s.chart() != chart {
            return Err(Error::InvalidArgument(format!(
                "score {i} has length {} in {} chart, expected {n} in {chart}",
                s.len(),
                s.chart()
            )));
        }
    }
    Ok((n, chart))
}

/// `(1/N) Σ sᵢ sᵢᵀ` over the given score vectors.
pub fn fisher_from_samples(scores: &[ParamVector]) -> Result<FisherEstimate> {
    let (dim, _) = check_scores(scores)?;
    let mut m = Matrix::zeros(dim);
    for s in scores {
        m.add_outer(s.values(), 1.0);
    }
    m.scale(1.0 / scores.len() as f64);
    Ok(FisherEstimate::new(m, Provenance::Sampled, scores.len()))
}

/// Matrix-free sampled Fisher: `v ↦ (1/N) Σ sᵢ (sᵢ·v) + λ v`.
///
/// Applies the same matrix as [`fisher_from_samples`] followed by [`damp`]
/// without ever forming it.
#[derive(Debug, Clone)]
pub struct SampledFisherOperator {
    scores: Vec<Vec<f64>>,
    dim: usize,
    damping: f64,
}

impl SampledFisherOperator {
    pub fn new(scores: &[ParamVector], damping: f64) -> Result<Self> {
        let (dim, _) = check_scores(scores)?;
        if !(damping >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must be nonnegative, got {damping}"
            )));
        }
        Ok(Self {
            scores: scores.iter().map(|s| s.values().to_vec()).collect(),
            dim,
            damping,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.scores.len()
    }
}

impl LinearOperator for SampledFisherOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for s in &self.scores {
            let c = dot(s, v);
            for (o, si) in out.iter_mut().zip(s) {
                *o += c * si;
            }
        }
        let inv_n = 1.0 / self.scores.len() as f64;
        for (o, vi) in out.iter_mut().zip(v) {
            *o = *o * inv_n + self.damping * vi;
        }
        out
    }
}

/// Central second-difference Hessian of `Δ ↦ KL(π_θ ‖ π_{θ+Δ})` at `Δ = 0`.
pub fn kl_hessian_fd(
    family: &PolicyFamily,
    theta: &ParamVector,
    step: f64,
) -> Result<FisherEstimate> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    family.validate(theta)?;
    if family.kind() == FamilyKind::GaussianDiag && family.chart() == Chart::Natural {
        let sigma = theta.values()[1];
        if sigma <= 2.0 * step {
            return Err(Error::Domain(format!(
                "step {step} too large for σ = {sigma}: need σ > 2·step"
            )));
        }
    }

    let n = theta.len();
    let chart = theta.chart();
    let kl_at = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut v = theta.values().to_vec();
        for &(i, d) in offsets {
            v[i] += d;
        }
        distributions::kl_closed_form(family, theta, &ParamVector::new(v, chart)?)
    };

    let h = step;
    let mut m = Matrix::zeros(n);
    for i in 0..n {
        // KL(θ‖θ) = 0, so the centre term drops out
        let d2 = kl_at(&[(i, h)])? + kl_at(&[(i, -h)])?;
        m[(i, i)] = d2 / (h * h);
        for j in 0..i {
            let pp = kl_at(&[(i, h), (j, h)])?;
            let pm = kl_at(&[(i, h), (j, -h)])?;
            let mp = kl_at(&[(i, -h), (j, h)])?;
            let mm = kl_at(&[(i, -h), (j, -h)])?;
            let mixed = (pp - pm - mp + mm) / (4.0 * h * h);
            m[(i, j)] = mixed;
            m[(j, i)] = mixed;
        }
    }
    Ok(FisherEstimate::new(m, Provenance::FdHessian, 0))
}

/// Adds `lambda_damp · I`.
pub fn damp(estimate: &FisherEstimate, lambda_damp: f64) -> Result<FisherEstimate> {
    if !(lambda_damp >= 0.0) || !lambda_damp.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "damping must be a nonnegative number, got {lambda_damp}"
        )));
    }
    let mut out = estimate.clone();
    out.matrix.add_diagonal(lambda_damp);
    out.damping += lambda_damp;
    Ok(out)
}

/// Sample estimate of `KL(π_a ‖ π_b)` from `n` draws of `π_a`.
pub fn monte_carlo_kl(
    family: &PolicyFamily,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    family.validate(theta_a)?;
    family.validate(theta_b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n {
        let x = distributions::sample_with(family, theta_a, &mut rng)?;
        total += distributions::log_prob(family, theta_a, x)?
            - distributions::log_prob(family, theta_b, x)?;
    }
    Ok(total / n as f64)
}
