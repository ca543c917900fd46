//! The training loop shared by `run` and `compare`.

use std::time::Instant;

use crate::distributions::{self, Chart, FamilyKind, ParamVector, PolicyFamily};
use crate::env::{self, Environment, TabularGeometry};
use crate::error::{Error, Result};
use crate::fisher::{self, FisherEstimate, SampledFisherOperator};
use crate::linalg::norm2;
use crate::natural_gradient::{self, NpgOptions, PolicyGeometry, UpdateReport};
use crate::solver::{self, SolverChoice};

use super::config::{ExperimentConfig, FisherSource, Method};
use super::metrics::{MetricsRow, MetricsTable};

/// CG tolerance for the matrix-free variant; iteration cap is `10 · dim`.
const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug)]
pub struct RunOutcome {
    /// Rows for every completed iteration, including the one that aborted.
    pub table: MetricsTable,
    pub final_theta: ParamVector,
    /// Set when a runtime error stopped the run early.
    pub abort: Option<Error>,
    /// Rollouts actually performed.
    pub rollouts: u64,
}

/// Seed base for the batch of iteration `iter`; rollout `i` uses base + i.
pub fn iteration_seed(seed: u64, iter: usize) -> u64 {
    let mut z = seed.wrapping_add(
        (iter as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Starting parameters: `(mu0, sigma0)` in the configured chart for the
/// bandit, uniform logits for the gridworld.
pub fn initial_theta(config: &ExperimentConfig) -> Result<ParamVector> {
    match config.env {
        Environment::GaussianBandit(_) => {
            let natural = ParamVector::natural(vec![config.mu0, config.sigma0])?;
            distributions::reparameterize(
                &PolicyFamily::gaussian(Chart::Natural),
                &natural,
                config.chart,
            )
        }
        Environment::Gridworld(_) => Ok(ParamVector::zeros(config.env.param_len(), config.chart)),
    }
}

/// Clamps the Gaussian scale at `floor` (natural chart units).
fn project_sigma(family: &PolicyFamily, theta: ParamVector, floor: f64) -> Result<ParamVector> {
    if family.kind() != FamilyKind::GaussianDiag {
        return Ok(theta);
    }
    let chart = theta.chart();
    let min = match chart {
        Chart::Natural => floor,
        Chart::LogScale => floor.ln(),
    };
    let mut v = theta.into_values();
    if v[1] < min {
        v[1] = min;
    }
    ParamVector::new(v, chart)
}

struct Step {
    theta: ParamVector,
    row: MetricsRow,
}

/// Row with only the objective and gradient norm filled in.
fn bare_row(iter: usize, objective: f64, grad_norm: f64) -> MetricsRow {
    MetricsRow {
        iter,
        objective,
        grad_norm,
        natgrad_norm: None,
        alpha: None,
        predicted_kl: None,
        realized_kl: None,
        solver_iters: None,
        backtracks: None,
        ms: None,
    }
}

fn npg_row(iter: usize, objective: f64, report: &UpdateReport) -> MetricsRow {
    MetricsRow {
        natgrad_norm: Some(norm2(report.natural_gradient.values())),
        alpha: Some(report.alpha),
        predicted_kl: Some(report.predicted_kl),
        realized_kl: report.realized_kl,
        solver_iters: Some(report.solve.iterations),
        backtracks: Some(report.backtrack_count),
        ..bare_row(iter, objective, norm2(report.gradient.values()))
    }
}

#[allow(clippy::too_many_arguments)]
fn npg_step(
    config: &ExperimentConfig,
    family: &PolicyFamily,
    geometry: &dyn PolicyGeometry,
    theta: &ParamVector,
    gradient: &ParamVector,
    trajectories: &[env::Trajectory],
    source: FisherSource,
    epsilon: f64,
) -> Result<UpdateReport> {
    let options = NpgOptions {
        audit: true,
        backtracking: config.backtracking,
        solver: SolverChoice::Auto,
    };
    match source {
        FisherSource::Exact => {
            let f = exact_fisher(config, family, theta, trajectories)?;
            natural_gradient::npg_update(geometry, theta, gradient, &f, epsilon, options)
        }
        FisherSource::Sampled => {
            let f = fisher::fisher_from_samples(&env::collect_scores(trajectories))?;
            let f = fisher::damp(&f, config.damping)?;
            natural_gradient::npg_update(geometry, theta, gradient, &f, epsilon, options)
        }
        FisherSource::Cg => {
            let op =
                SampledFisherOperator::new(&env::collect_scores(trajectories), config.damping)?;
            let solve = solver::conjugate_gradient(
                &op,
                gradient.values(),
                CG_TOLERANCE,
                10 * gradient.len(),
            )?;
            let direction = ParamVector::new(solve.solution.clone(), gradient.chart())?;
            natural_gradient::npg_update_with_direction(
                geometry, theta, gradient, direction, solve, epsilon, options,
            )
        }
    }
}

fn iterate(
    config: &ExperimentConfig,
    family: &PolicyFamily,
    theta: &ParamVector,
    iter: usize,
    trajectories: &[env::Trajectory],
) -> Result<Step> {
    let objective = env::estimate_objective(trajectories, config.gamma)?;
    let gradient = env::reinforce_gradient(trajectories, config.gamma, config.baseline)?;
    let grad_norm = norm2(gradient.values());

    let geometry: Box<dyn PolicyGeometry> = match config.env {
        Environment::GaussianBandit(_) => Box::new(*family),
        Environment::Gridworld(g) => Box::new(TabularGeometry::new(
            *family,
            env::visitation_weights(trajectories, g.n_states()),
        )?),
    };

    let (theta_new, row) = match config.method {
        Method::Vanilla { alpha } => {
            let theta_new =
                natural_gradient::vanilla_update(geometry.as_ref(), theta, &gradient, alpha)?;
            let row = MetricsRow {
                alpha: Some(alpha),
                ..bare_row(iter, objective, grad_norm)
            };
            (theta_new, row)
        }
        Method::Npg {
            fisher: source,
            epsilon,
        } => {
            match npg_step(
                config,
                family,
                geometry.as_ref(),
                theta,
                &gradient,
                trajectories,
                source,
                epsilon,
            ) {
                Ok(report) => {
                    let row = npg_row(iter, objective, &report);
                    (report.theta_new, row)
                }
                // numerically null gradient: hold the parameters
                Err(Error::DegenerateGradient { .. }) => {
                    (theta.clone(), bare_row(iter, objective, grad_norm))
                }
                Err(e) => return Err(e),
            }
        }
    };
    let theta_new = project_sigma(family, theta_new, config.sigma_floor)?;
    Ok(Step {
        theta: theta_new,
        row,
    })
}

/// Closed-form Fisher: exact for the Gaussian, visitation-weighted and
/// damped for the tabular softmax.
fn exact_fisher(
    config: &ExperimentConfig,
    family: &PolicyFamily,
    theta: &ParamVector,
    trajectories: &[env::Trajectory],
) -> Result<FisherEstimate> {
    match config.env {
        Environment::GaussianBandit(_) => distributions::fisher_analytic(family, theta),
        Environment::Gridworld(g) => {
            let weights = env::visitation_weights(trajectories, g.n_states());
            fisher::damp(&env::tabular_fisher(theta, &weights)?, config.damping)
        }
    }
}

/// Runs the configured training loop.
///
/// Configuration problems fail before any rollout. Errors raised during
/// training stop the loop and are returned in [`RunOutcome::abort`] together
/// with the rows logged so far.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let family = config.env.policy_family(config.chart)?;
    let mut theta = initial_theta(config)?;
    let mut table = MetricsTable::default();
    let mut rollouts: u64 = 0;

    for iter in 0..config.iterations {
        let started = Instant::now();
        let batch = config.batch_size as u64;
        if rollouts + batch > config.sample_budget {
            let err = Error::Config(format!("sample budget {} exhausted", config.sample_budget));
            return Ok(RunOutcome {
                table,
                final_theta: theta,
                abort: Some(err),
                rollouts,
            });
        }
        let trajectories = match env::rollout_batch(
            &config.env,
            &family,
            &theta,
            iteration_seed(config.seed, iter),
            config.batch_size,
        ) {
            Ok(t) => t,
            Err(err) => {
                return Ok(RunOutcome {
                    table,
                    final_theta: theta,
                    abort: Some(err),
                    rollouts,
                })
            }
        };
        rollouts += batch;
        assert!(
            rollouts <= config.sample_budget,
            "rollout counter exceeded the sample budget"
        );

        match iterate(config, &family, &theta, iter, &trajectories) {
            Ok(Step {
                theta: next,
                mut row,
            }) => {
                if config.wall_clock {
                    row.ms = Some(started.elapsed().as_secs_f64() * 1e3);
                }
                table.rows.push(row);
                theta = next;
            }
            Err(err) => {
                // the failed iteration still has a known objective
                if let Ok(objective) = env::estimate_objective(&trajectories, config.gamma) {
                    let grad_norm =
                        env::reinforce_gradient(&trajectories, config.gamma, config.baseline)
                            .map_or(f64::NAN, |g| norm2(g.values()));
                    table.rows.push(bare_row(iter, objective, grad_norm));
                }
                return Ok(RunOutcome {
                    table,
                    final_theta: theta,
                    abort: Some(err),
                    rollouts,
                });
            }
        }
    }
    Ok(RunOutcome {
        table,
        final_theta: theta,
        abort: None,
        rollouts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bandit(method: &str, step: &str, extra: &str) -> ExperimentConfig {
        let key = if method == "vanilla" {
            "alpha"
        } else {
            "epsilon"
        };
        ExperimentConfig::parse(&format!(
            "env = gaussian-bandit\nbandit.target = 2\nmethod = {method}\n{key} = {step}\n\
             batch_size = 200\niterations = 5\nseed = 3\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn logs_one_row_per_iteration() {
        for method in ["npg-exact-fisher", "npg-sampled-fisher", "npg-cg"] {
            let out = run_experiment(&bandit(method, "0.01", "")).unwrap();
            assert!(out.abort.is_none(), "{method}: {:?}", out.abort);
            assert_eq!(out.table.rows.len(), 5);
            assert_eq!(out.rollouts, 1000);
            for row in &out.table.rows {
                assert!(row.realized_kl.is_some() && row.natgrad_norm.is_some());
                assert!(row.ms.is_none());
            }
        }
        let out = run_experiment(&bandit("vanilla", "0.01", "")).unwrap();
        assert!(out
            .table
            .rows
            .iter()
            .all(|r| r.realized_kl.is_none() && r.predicted_kl.is_none()));
    }

    #[test]
    fn matrix_free_and_dense_sampled_fisher_agree() {
        let dense = run_experiment(&bandit("npg-sampled-fisher", "0.01", "")).unwrap();
        let cg = run_experiment(&bandit("npg-cg", "0.01", "")).unwrap();
        for (a, b) in dense
            .final_theta
            .values()
            .iter()
            .zip(cg.final_theta.values())
        {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn sigma_floor_is_enforced() {
        let out = run_experiment(&bandit(
            "npg-exact-fisher",
            "0.5",
            "bandit.sigma0 = 0.002\nsigma_floor = 0.001\n",
        ))
        .unwrap();
        assert!(out.final_theta.values()[1] >= 0.001);
        let out = run_experiment(&bandit(
            "npg-exact-fisher",
            "0.5",
            "bandit.sigma0 = 0.002\nsigma_floor = 0.001\nchart = log-scale\n",
        ))
        .unwrap();
        assert!(out.final_theta.values()[1] >= 0.001f64.ln());
    }

    #[test]
    fn vanilla_chart_violation_aborts_with_partial_table() {
        // a huge step drives σ negative on the first update
        let out = run_experiment(&bandit("vanilla", "100", "bandit.sigma0 = 0.1\n")).unwrap();
        assert!(
            matches!(out.abort, Some(Error::ChartViolation(_))),
            "{:?}",
            out.abort
        );
        assert_eq!(out.table.rows.len(), 1);
        assert!(out.table.rows[0].alpha.is_none());
    }

    #[test]
    fn gridworld_runs_all_methods() {
        for (method, key, step) in [
            ("vanilla", "alpha", "1.0"),
            ("npg-exact-fisher", "epsilon", "0.01"),
            ("npg-sampled-fisher", "epsilon", "0.01"),
            ("npg-cg", "epsilon", "0.01"),
        ] {
            let config = ExperimentConfig::parse(&format!(
                "env = gridworld\nmethod = {method}\n{key} = {step}\nbatch_size = 50\niterations = 3\n\
                 baseline = mean-return\nseed = 1\n"
            ))
            .unwrap();
            let out = run_experiment(&config).unwrap();
            assert!(out.abort.is_none(), "{method}: {:?}", out.abort);
            assert_eq!(out.table.rows.len(), 3);
        }
    }

    #[test]
    fn iteration_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> =
            (0..1000).map(|i| iteration_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(iteration_seed(7, 0), iteration_seed(8, 0));
    }
}
