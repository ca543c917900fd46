//! Linear solves `F x = g` for symmetric positive (semi)definite systems:
//! dense Cholesky and matrix-free conjugate gradients.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};

/// Largest `‖A − Aᵀ‖∞` accepted by the direct solver.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Dimension up to which [`SolverChoice::Auto`] factorizes directly.
pub const DIRECT_SOLVE_MAX_DIM: usize = 512;

/// Something that can apply a square matrix to a vector.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

impl LinearOperator for Matrix {
    fn dim(&self) -> usize {
        Matrix::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.mul_vec(v)
    }
}

/// Adapts a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (self.f)(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    Cg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    /// CG iterations; zero for the direct method.
    pub iterations: usize,
    /// `‖A x − b‖₂`, recomputed from the returned solution.
    pub residual_norm: f64,
    pub method: SolveMethod,
    pub converged: bool,
}

/// How to apply `F⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SolverChoice {
    /// Direct up to [`DIRECT_SOLVE_MAX_DIM`], CG above.
    #[default]
    Auto,
    Direct,
    Cg {
        tol: f64,
        max_iter: usize,
    },
}

/// Default CG settings used by [`SolverChoice::Auto`] above the direct limit.
pub fn default_cg(dim: usize) -> SolverChoice {
    SolverChoice::Cg {
        tol: 1e-10,
        max_iter: 10 * dim.max(1),
    }
}

fn residual_norm<A: LinearOperator + ?Sized>(op: &A, x: &[f64], b: &[f64]) -> f64 {
    let ax = op.apply(x);
    ax.iter()
        .zip(b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn check_rhs(dim: usize, rhs: &[f64]) -> Result<()> {
    if rhs.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "right-hand side has length {}, matrix is {dim}×{dim}",
            rhs.len()
        )));
    }
    if rhs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "right-hand side is not finite".into(),
        ));
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of `a`.
fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.dim();
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SingularMatrix { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b`.
fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.dim();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Direct solve of a symmetric positive definite system by Cholesky
/// factorization, with one round of iterative refinement.
pub fn solve_spd(matrix: &Matrix, rhs: &[f64]) -> Result<SolveReport> {
    let n = matrix.dim();
    check_rhs(n, rhs)?;
    if !matrix.is_finite() {
        return Err(Error::InvalidArgument("matrix is not finite".into()));
    }
    let asym = matrix.asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "matrix asymmetry {asym:e} exceeds {SYMMETRY_TOLERANCE:e}"
        )));
    }
    let l = cholesky(matrix)?;
    let mut x = cholesky_solve(&l, rhs);

    let ax = matrix.mul_vec(&x);
    let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let dx = cholesky_solve(&l, &r);
    x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);

    let residual_norm = residual_norm(matrix, &x, rhs);
    Ok(SolveReport {
        solution: x,
        iterations: 0,
        residual_norm,
        method: SolveMethod::Direct,
        converged: true,
    })
}

/// Unpreconditioned conjugate gradients on a symmetric PSD operator.
///
/// Stops when the recursive residual drops to `tol · ‖rhs‖₂`. If `max_iter`
/// is reached first, returns the iterate with the smallest residual seen and
/// `converged = false`.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    op: &A,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let n = op.dim();
    check_rhs(n, rhs)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }

    let target = tol * norm2(rhs);
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut best = (rs.sqrt(), x.clone());
    let mut iterations = 0;
    let mut converged = rs.sqrt() <= target;

    while !converged && iterations < max_iter {
        let ap = op.apply(&p);
        let p_ap = dot(&p, &ap);
        if !p_ap.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "non-finite curvature pᵀAp at iteration {}",
                iterations + 1
            )));
        }
        if p_ap <= 0.0 {
            return Err(Error::NumericalBreakdown(format!(
                "operator is not positive definite along the search direction (pᵀAp = {p_ap:e})"
            )));
        }
        let step = rs / p_ap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        iterations += 1;

        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "non-finite residual at iteration {iterations}"
            )));
        }
        let rnorm = rs_next.sqrt();
        if rnorm < best.0 {
            best = (rnorm, x.clone());
        }
        converged = rnorm <= target;

        let beta = rs_next / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_next;
    }

    let solution = if converged { x } else { best.1 };
    let residual_norm = residual_norm(op, &solution, rhs);
    Ok(SolveReport {
        solution,
        iterations,
        residual_norm,
        method: SolveMethod::Cg,
        converged,
    })
}

/// Solves `matrix · x = rhs` with the requested method.
pub fn solve(matrix: &Matrix, rhs: &[f64], choice: SolverChoice) -> Result<SolveReport> {
    match choice {
        SolverChoice::Direct => solve_spd(matrix, rhs),
        SolverChoice::Cg { tol, max_iter } => {
            let asym = matrix.asymmetry();
            if asym > SYMMETRY_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "matrix asymmetry {asym:e} exceeds {SYMMETRY_TOLERANCE:e}"
                )));
            }
            conjugate_gradient(matrix, rhs, tol, max_iter)
        }
        SolverChoice::Auto if matrix.dim() <= DIRECT_SOLVE_MAX_DIM => solve_spd(matrix, rhs),
        SolverChoice::Auto => solve(matrix, rhs, default_cg(matrix.dim())),
    }
}
