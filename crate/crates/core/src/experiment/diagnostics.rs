//! Numerical self-checks of the geometry: parameter distance against KL,
//! exact Fisher against the KL Hessian, sampled Fisher convergence and
//! chart invariance of the natural gradient step.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::{self, Chart, ParamVector, PolicyFamily};
use crate::error::Result;
use crate::fisher::{self, DEFAULT_FD_STEP};
use crate::linalg::Matrix;
use crate::natural_gradient::{self, NpgOptions};

pub const FISHER_HESSIAN_TOLERANCE: f64 = 1e-4;
pub const SAMPLED_FISHER_TOLERANCE: f64 = 0.05;
pub const CHART_EPSILONS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const SAMPLE_SIZES: [usize; 4] = [100, 1_000, 10_000, 100_000];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Distances after one step from the same distribution written in the
/// natural and the log-scale chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartGap {
    pub epsilon: f64,
    /// `KL(π_natural ‖ π_log)` after the natural gradient step.
    pub npg: f64,
    /// Same for the vanilla step with the natural-chart NPG step size.
    pub vanilla: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub pairs: Vec<(
        ParamVector,
        ParamVector,
        natural_gradient::DistanceDiagnostic,
    )>,
    pub fisher_hessian_max_deviation: f64,
    pub fisher_grid_points: usize,
    /// `(N, error)` at the Gaussian θ = (0, 1).
    pub sampled_curve: Vec<(usize, f64)>,
    pub chart_table: Vec<ChartGap>,
    pub checks: Vec<Check>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `max |F − H| / (1 + ‖F‖∞)` between the exact Fisher and the central
/// finite-difference Hessian of the KL.
pub fn fisher_hessian_deviation(family: &PolicyFamily, theta: &ParamVector) -> Result<f64> {
    let exact = distributions::fisher_analytic(family, theta)?;
    let hessian = fisher::kl_hessian_fd(family, theta, DEFAULT_FD_STEP)?;
    Ok(exact.matrix().max_abs_diff(hessian.matrix()) / (1.0 + exact.matrix().norm_inf()))
}

/// Largest entry of `|F̂ − F|` scaled by `√(F_ii F_jj)`.
pub fn scaled_error(estimate: &Matrix, exact: &Matrix) -> f64 {
    let n = exact.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let scale = (exact[(i, i)] * exact[(j, j)]).sqrt();
            worst = worst.max((estimate[(i, j)] - exact[(i, j)]).abs() / scale);
        }
    }
    worst
}

/// Scores of `n` draws from `π_θ`.
pub fn sample_scores(
    family: &PolicyFamily,
    theta: &ParamVector,
    n: usize,
    seed: u64,
) -> Result<Vec<ParamVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = distributions::sample_with(family, theta, &mut rng)?;
            distributions::score(family, theta, x)
        })
        .collect()
}

/// Error of the `n`-sample outer-product Fisher against the exact one.
pub fn sampled_fisher_error(
    family: &PolicyFamily,
    theta: &ParamVector,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let estimate = fisher::fisher_from_samples(&sample_scores(family, theta, n, seed)?)?;
    let exact = distributions::fisher_analytic(family, theta)?;
    Ok(scaled_error(estimate.matrix(), exact.matrix()))
}

/// Steps from `theta` (natural chart) along `gradient` (natural chart) in
/// both Gaussian charts and measures how far apart the results land.
pub fn chart_invariance_gap(
    theta: &ParamVector,
    gradient: &ParamVector,
    epsilon: f64,
) -> Result<ChartGap> {
    let natural = PolicyFamily::gaussian(Chart::Natural);
    let log = PolicyFamily::gaussian(Chart::LogScale);
    let theta_log = distributions::reparameterize(&natural, theta, Chart::LogScale)?;
    let gradient_log =
        natural_gradient::gradient_in_chart(&natural, theta, gradient, Chart::LogScale)?;

    let npg = |family: &PolicyFamily, th: &ParamVector, g: &ParamVector| {
        let f = distributions::fisher_analytic(family, th)?;
        natural_gradient::npg_update(family, th, g, &f, epsilon, NpgOptions::default())
    };
    let step_nat = npg(&natural, theta, gradient)?;
    let step_log = npg(&log, &theta_log, &gradient_log)?;
    let back = |th: &ParamVector| distributions::reparameterize(&log, th, Chart::Natural);
    let npg_gap =
        distributions::kl_closed_form(&natural, &step_nat.theta_new, &back(&step_log.theta_new)?)?;

    let alpha = step_nat.alpha;
    let van_nat = natural_gradient::vanilla_update(&natural, theta, gradient, alpha)?;
    let van_log = natural_gradient::vanilla_update(&log, &theta_log, &gradient_log, alpha)?;
    let vanilla_gap = distributions::kl_closed_form(&natural, &van_nat, &back(&van_log)?)?;

    Ok(ChartGap {
        epsilon,
        npg: npg_gap,
        vanilla: vanilla_gap,
    })
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// The two equal-Euclidean-distance pairs: narrow `σ = 0.3` and wide `σ = 3`.
pub fn distance_pairs() -> [(ParamVector, ParamVector); 2] {
    let p = |mu: f64, sigma: f64| ParamVector::natural(vec![mu, sigma]).expect("finite");
    [(p(0.0, 0.3), p(1.0, 0.3)), (p(0.0, 3.0), p(1.0, 3.0))]
}

fn fisher_grid() -> Result<Vec<(PolicyFamily, ParamVector)>> {
    let mut points = Vec::new();
    for chart in [Chart::Natural, Chart::LogScale] {
        let family = PolicyFamily::gaussian(chart);
        for mu in [-1.0, 0.0, 1.5] {
            for sigma in [0.3, 1.0, 3.0] {
                let theta = ParamVector::natural(vec![mu, sigma])?;
                let theta = distributions::reparameterize(
                    &PolicyFamily::gaussian(Chart::Natural),
                    &theta,
                    chart,
                )?;
                points.push((family, theta));
            }
        }
    }
    for logits in [
        vec![0.0, 0.0],
        vec![0.5, -1.0, 2.0],
        vec![1.0, 0.0, -0.5, 0.25],
        vec![3.0, -2.0, 0.0, 1.0, -1.0],
    ] {
        let family = PolicyFamily::categorical(logits.len())?;
        points.push((family, ParamVector::natural(logits)?));
    }
    Ok(points)
}

pub fn run_diagnostics() -> Result<DiagnosticsReport> {
    let mut checks = Vec::new();
    let gaussian = PolicyFamily::gaussian(Chart::Natural);

    let mut pairs = Vec::new();
    for (a, b) in distance_pairs() {
        let d = natural_gradient::euclidean_vs_kl_diagnostic(&gaussian, &a, &b)?;
        pairs.push((a, b, d));
    }
    let (narrow, wide) = (pairs[0].2, pairs[1].2);
    checks.push(check(
        "euclidean distance of both pairs is 1",
        (narrow.euclidean - 1.0).abs() <= 1e-12 && (wide.euclidean - 1.0).abs() <= 1e-12,
        format!("{} and {}", narrow.euclidean, wide.euclidean),
    ));
    checks.push(check(
        "pair KL values 5.5556 and 0.05556",
        (narrow.kl_ab - 5.5556).abs() <= 5e-5 && (wide.kl_ab - 0.05556).abs() <= 5e-6,
        format!("{:.6} and {:.6}", narrow.kl_ab, wide.kl_ab),
    ));
    let ratio = narrow.kl_ab / wide.kl_ab;
    checks.push(check(
        "KL ratio between pairs at least 99",
        ratio >= 99.0,
        format!("{ratio:.3}"),
    ));

    let grid = fisher_grid()?;
    let mut max_dev: f64 = 0.0;
    for (family, theta) in &grid {
        max_dev = max_dev.max(fisher_hessian_deviation(family, theta)?);
    }
    checks.push(check(
        "exact Fisher matches finite-difference KL Hessian",
        max_dev <= FISHER_HESSIAN_TOLERANCE,
        format!(
            "max scaled deviation {max_dev:.3e} over {} points",
            grid.len()
        ),
    ));

    let theta0 = ParamVector::natural(vec![0.0, 1.0])?;
    let sampled_curve = SAMPLE_SIZES
        .iter()
        .map(|&n| Ok((n, sampled_fisher_error(&gaussian, &theta0, n, 0)?)))
        .collect::<Result<Vec<_>>>()?;
    let (first, last) = (sampled_curve[0].1, sampled_curve[sampled_curve.len() - 1].1);
    checks.push(check(
        "sampled Fisher converges to the exact Fisher",
        last < first && last <= SAMPLED_FISHER_TOLERANCE,
        format!("error {first:.3e} at N=100, {last:.3e} at N=100000"),
    ));

    let theta = ParamVector::natural(vec![0.3, 0.5])?;
    let gradient = ParamVector::natural(vec![1.0, -0.7])?;
    let chart_table = CHART_EPSILONS
        .iter()
        .map(|&eps| chart_invariance_gap(&theta, &gradient, eps))
        .collect::<Result<Vec<_>>>()?;
    let superlinear = chart_table.windows(2).all(|w| w[1].npg <= w[0].npg / 10.0);
    checks.push(check(
        "natural step chart gap decays superlinearly",
        superlinear,
        chart_table
            .iter()
            .map(|g| format!("{:.3e}", g.npg))
            .collect::<Vec<_>>()
            .join(" > "),
    ));
    let last = chart_table[chart_table.len() - 1];
    checks.push(check(
        "vanilla step chart gap exceeds natural step gap tenfold",
        last.vanilla > 10.0 * last.npg,
        format!(
            "{:.3e} vs {:.3e} at eps {:e}",
            last.vanilla, last.npg, last.epsilon
        ),
    ));

    Ok(DiagnosticsReport {
        pairs,
        fisher_hessian_max_deviation: max_dev,
        fisher_grid_points: grid.len(),
        sampled_curve,
        chart_table,
        checks,
    })
}

impl fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "parameter distance vs KL (Gaussian, natural chart)")?;
        for (a, b, d) in &self.pairs {
            writeln!(
                f,
                "  {:?} -> {:?}: euclidean {:.6}  KL(a||b) {:.6}  KL(b||a) {:.6}",
                a.values(),
                b.values(),
                d.euclidean,
                d.kl_ab,
                d.kl_ba
            )?;
        }
        writeln!(
            f,
            "Fisher vs FD KL Hessian: max scaled deviation {:.3e} over {} points",
            self.fisher_hessian_max_deviation, self.fisher_grid_points
        )?;
        writeln!(f, "sampled Fisher error at theta = (0, 1)")?;
        for (n, err) in &self.sampled_curve {
            writeln!(f, "  N = {n:>7}  error {err:.4e}")?;
        }
        writeln!(f, "chart gap after one step")?;
        writeln!(
            f,
            "  {:>8}  {:>12}  {:>12}",
            "epsilon", "natural", "vanilla"
        )?;
        for g in &self.chart_table {
            writeln!(
                f,
                "  {:>8.0e}  {:>12.4e}  {:>12.4e}",
                g.epsilon, g.npg, g.vanilla
            )?;
        }
        writeln!(f, "checks")?;
        for c in &self.checks {
            writeln!(
                f,
                "  [{}] {}: {}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}
