//! Natural policy gradient steps with a KL budget, and the plain gradient
//! step they are compared against.
//!
//! The natural direction `∇̃J = F⁻¹∇J` is found by solving `F x = ∇J`; `F⁻¹`
//! is never formed. The step size
//!
//! ```text
//! α = √(2ε / (∇Jᵀ F⁻¹ ∇J))
//! ```
//!
//! makes the second-order KL estimate `½ Δθᵀ F Δθ` of the step `Δθ = α ∇̃J`
//! equal to the budget `ε`. Steps ascend `J`.

use crate::distributions::{self, Chart, FamilyKind, ParamVector, PolicyFamily};
use crate::error::{Error, Result};
use crate::fisher::FisherEstimate;
use crate::linalg::{dot, norm2};
use crate::solver::{self, SolveReport, SolverChoice};

/// Smallest `∇Jᵀ F⁻¹ ∇J` for which a step size is defined.
pub const DEGENERATE_TOLERANCE: f64 = 1e-12;

/// Step multiplier applied on each backtrack.
pub const BACKTRACK_SHRINK: f64 = 0.5;

/// Backtracking accepts a step once realized KL ≤ this factor × ε.
pub const BACKTRACK_KL_FACTOR: f64 = 1.5;

pub const MAX_BACKTRACKS: usize = 10;

/// The parameter manifold an update moves on: which points are admissible
/// and how far apart two policies are.
pub trait PolicyGeometry {
    fn validate(&self, theta: &ParamVector) -> Result<()>;

    /// `KL(π_a ‖ π_b)`.
    fn divergence(&self, theta_a: &ParamVector, theta_b: &ParamVector) -> Result<f64>;
}

impl PolicyGeometry for PolicyFamily {
    fn validate(&self, theta: &ParamVector) -> Result<()> {
        PolicyFamily::validate(self, theta)
    }

    fn divergence(&self, theta_a: &ParamVector, theta_b: &ParamVector) -> Result<f64> {
        distributions::kl_closed_form(self, theta_a, theta_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpgOptions {
    /// Compute the realized KL of the step.
    pub audit: bool,
    /// Halve the step until realized KL ≤ 1.5 ε (implies `audit`).
    pub backtracking: bool,
    pub solver: SolverChoice,
}

impl Default for NpgOptions {
    fn default() -> Self {
        Self {
            audit: false,
            backtracking: false,
            solver: SolverChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub theta_old: ParamVector,
    pub theta_new: ParamVector,
    pub gradient: ParamVector,
    pub natural_gradient: ParamVector,
    /// Step size before any backtracking.
    pub alpha: f64,
    pub epsilon: f64,
    /// KL predicted by the quadratic model; equals `epsilon`.
    pub predicted_kl: f64,
    /// `KL(π_old ‖ π_new)` when audited.
    pub realized_kl: Option<f64>,
    /// `∇Jᵀ F⁻¹ ∇J`.
    pub quadratic_form: f64,
    pub backtrack_count: usize,
    pub solve: SolveReport,
}

impl UpdateReport {
    /// Step size actually applied: `alpha · shrink^backtrack_count`.
    pub fn effective_alpha(&self) -> f64 {
        self.alpha * BACKTRACK_SHRINK.powi(self.backtrack_count as i32)
    }
}

fn check_compatible(theta: &ParamVector, gradient: &ParamVector) -> Result<()> {
    if gradient.len() != theta.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient has length {}, parameters have {}",
            gradient.len(),
            theta.len()
        )));
    }
    if gradient.chart() != theta.chart() {
        return Err(Error::InvalidArgument(format!(
            "gradient is in {} chart, parameters in {}",
            gradient.chart(),
            theta.chart()
        )));
    }
    Ok(())
}

/// Solves `F ∇̃J = ∇J`.
pub fn natural_direction(
    gradient: &ParamVector,
    fisher: &FisherEstimate,
    solver_choice: SolverChoice,
) -> Result<(ParamVector, SolveReport)> {
    if fisher.dim() != gradient.len() {
        return Err(Error::InvalidArgument(format!(
            "Fisher is {0}×{0} but gradient has length {1}",
            fisher.dim(),
            gradient.len()
        )));
    }
    let report = solver::solve(fisher.matrix(), gradient.values(), solver_choice)?;
    let direction = ParamVector::new(report.solution.clone(), gradient.chart())?;
    Ok((direction, report))
}

/// `α = √(2ε / (g · ∇̃J))`.
pub fn dynamic_step_size(
    gradient: &ParamVector,
    natural_gradient: &ParamVector,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "KL budget must be positive, got {epsilon}"
        )));
    }
    if gradient.len() != natural_gradient.len() {
        return Err(Error::InvalidArgument(
            "gradient and natural gradient differ in length".into(),
        ));
    }
    let q = dot(gradient.values(), natural_gradient.values());
    if !(q > DEGENERATE_TOLERANCE) {
        return Err(Error::DegenerateGradient {
            quadratic_form: q,
            tolerance: DEGENERATE_TOLERANCE,
        });
    }
    Ok((2.0 * epsilon / q).sqrt())
}

fn displaced(theta: &ParamVector, direction: &[f64], scale: f64) -> Result<ParamVector> {
    let values = theta
        .values()
        .iter()
        .zip(direction)
        .map(|(t, d)| t + scale * d)
        .collect();
    ParamVector::new(values, theta.chart())
        .map_err(|e| Error::NumericalBreakdown(format!("update produced invalid parameters: {e}")))
}

fn as_chart_violation(err: Error) -> Error {
    match err {
        Error::Domain(msg) => Error::ChartViolation(msg),
        other => other,
    }
}

/// One KL-budgeted natural gradient step `θ + α ∇̃J`.
pub fn npg_update<G: PolicyGeometry + ?Sized>(
    geometry: &G,
    theta: &ParamVector,
    gradient: &ParamVector,
    fisher: &FisherEstimate,
    epsilon: f64,
    options: NpgOptions,
) -> Result<UpdateReport> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "KL budget must be positive, got {epsilon}"
        )));
    }
    geometry.validate(theta)?;
    check_compatible(theta, gradient)?;
    let (direction, solve) = natural_direction(gradient, fisher, options.solver)?;
    npg_update_with_direction(
        geometry, theta, gradient, direction, solve, epsilon, options,
    )
}

/// Same as [`npg_update`] for a natural direction computed elsewhere, e.g.
/// by conjugate gradients against a matrix-free Fisher operator.
pub fn npg_update_with_direction<G: PolicyGeometry + ?Sized>(
    geometry: &G,
    theta: &ParamVector,
    gradient: &ParamVector,
    natural_gradient: ParamVector,
    solve: SolveReport,
    epsilon: f64,
    options: NpgOptions,
) -> Result<UpdateReport> {
    geometry.validate(theta)?;
    check_compatible(theta, gradient)?;
    check_compatible(theta, &natural_gradient)?;
    let alpha = dynamic_step_size(gradient, &natural_gradient, epsilon)?;
    let quadratic_form = dot(gradient.values(), natural_gradient.values());
    let audit = options.audit || options.backtracking;

    let mut backtrack_count = 0;
    loop {
        let scale = alpha * BACKTRACK_SHRINK.powi(backtrack_count as i32);
        let candidate = displaced(theta, natural_gradient.values(), scale)?;
        let can_retry = options.backtracking && backtrack_count < MAX_BACKTRACKS;

        if let Err(err) = geometry.validate(&candidate) {
            if can_retry && matches!(err, Error::Domain(_)) {
                backtrack_count += 1;
                continue;
            }
            return Err(as_chart_violation(err));
        }

        let realized_kl = if audit {
            Some(geometry.divergence(theta, &candidate)?)
        } else {
            None
        };
        if options.backtracking {
            let kl = realized_kl.unwrap_or(0.0);
            if kl > BACKTRACK_KL_FACTOR * epsilon {
                if can_retry {
                    backtrack_count += 1;
                    continue;
                }
                return Err(Error::NumericalBreakdown(format!(
                    "realized KL {kl:e} still above {BACKTRACK_KL_FACTOR}·ε after {MAX_BACKTRACKS} halvings"
                )));
            }
        }

        return Ok(UpdateReport {
            theta_old: theta.clone(),
            theta_new: candidate,
            gradient: gradient.clone(),
            natural_gradient,
            alpha,
            epsilon,
            predicted_kl: epsilon,
            realized_kl,
            quadratic_form,
            backtrack_count,
            solve,
        });
    }
}

/// `θ + α ∇J`.
pub fn vanilla_update<G: PolicyGeometry + ?Sized>(
    geometry: &G,
    theta: &ParamVector,
    gradient: &ParamVector,
    alpha: f64,
) -> Result<ParamVector> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {alpha}"
        )));
    }
    geometry.validate(theta)?;
    check_compatible(theta, gradient)?;
    let candidate = displaced(theta, gradient.values(), alpha)?;
    geometry.validate(&candidate).map_err(as_chart_violation)?;
    Ok(candidate)
}

/// Parameter-space distance next to the KL divergence in both directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceDiagnostic {
    pub euclidean: f64,
    pub kl_ab: f64,
    pub kl_ba: f64,
}

pub fn euclidean_vs_kl_diagnostic(
    family: &PolicyFamily,
    theta_a: &ParamVector,
    theta_b: &ParamVector,
) -> Result<DistanceDiagnostic> {
    let kl_ab = distributions::kl_closed_form(family, theta_a, theta_b)?;
    let kl_ba = distributions::kl_closed_form(family, theta_b, theta_a)?;
    let diff: Vec<f64> = theta_a
        .values()
        .iter()
        .zip(theta_b.values())
        .map(|(a, b)| a - b)
        .collect();
    Ok(DistanceDiagnostic {
        euclidean: norm2(&diff),
        kl_ab,
        kl_ba,
    })
}

/// Re-expresses a gradient (a covector) of a Gaussian objective in another
/// chart: `∂J/∂ln σ = σ ∂J/∂σ`.
pub fn gradient_in_chart(
    family: &PolicyFamily,
    theta: &ParamVector,
    gradient: &ParamVector,
    target: Chart,
) -> Result<ParamVector> {
    family.validate(theta)?;
    check_compatible(theta, gradient)?;
    if target == theta.chart() {
        return Ok(gradient.clone());
    }
    if family.kind() != FamilyKind::GaussianDiag {
        return Err(Error::InvalidArgument(
            "only the Gaussian family has a second chart".into(),
        ));
    }
    let sigma = distributions::reparameterize(family, theta, Chart::Natural)?.values()[1];
    let g = gradient.values();
    let second = match target {
        Chart::LogScale => g[1] * sigma,
        Chart::Natural => g[1] / sigma,
    };
    ParamVector::new(vec![g[0], second], target)
}
