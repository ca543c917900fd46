//! Toy environments, seeded rollouts and the REINFORCE gradient estimator.
//!
//! The Gaussian bandit is a single decision with reward `−(a − a*)²`. The
//! gridworld is a tabular MDP with one softmax policy per cell; its parameter
//! vector concatenates the four move logits of every cell in row-major order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distributions::{self, Action, Chart, FamilyKind, ParamVector, PolicyFamily};
use crate::error::{Error, Result};
use crate::fisher::{FisherEstimate, Provenance};
use crate::linalg::Matrix;
use crate::natural_gradient::PolicyGeometry;

/// Number of moves in the gridworld: up, right, down, left.
pub const GRID_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBandit {
    /// Reward peak `a*`.
    pub target: f64,
}

impl GaussianBandit {
    pub fn reward(&self, action: f64) -> f64 {
        let d = action - self.target;
        -d * d
    }

    /// `J(μ, σ) = −((μ − a*)² + σ²)`.
    pub fn expected_reward(&self, mu: f64, sigma: f64) -> f64 {
        -((mu - self.target).powi(2) + sigma * sigma)
    }

    /// `∇J` in the natural chart: `(−2(μ − a*), −2σ)`.
    pub fn expected_reward_gradient(&self, mu: f64, sigma: f64) -> [f64; 2] {
        [-2.0 * (mu - self.target), -2.0 * sigma]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gridworld {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub step_reward: f64,
    pub goal_reward: f64,
    pub horizon: usize,
}

impl Default for Gridworld {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            start: (0, 0),
            goal: (3, 3),
            step_reward: -0.01,
            goal_reward: 1.0,
            horizon: 50,
        }
    }
}

impl Gridworld {
    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn state_id(&self, (x, y): (usize, usize)) -> usize {
        y * self.width + x
    }

    pub fn cell(&self, state: usize) -> (usize, usize) {
        (state % self.width, state / self.width)
    }

    /// Next state, reward and whether the goal was reached. Moves into a wall
    /// leave the agent in place.
    pub fn step(&self, state: usize, action: usize) -> (usize, f64, bool) {
        let (x, y) = self.cell(state);
        let (nx, ny) = match action {
            0 => (x, y.saturating_sub(1)),
            1 => ((x + 1).min(self.width - 1), y),
            2 => (x, (y + 1).min(self.height - 1)),
            _ => (x.saturating_sub(1), y),
        };
        let next = self.state_id((nx, ny));
        if (nx, ny) == self.goal {
            (next, self.goal_reward, true)
        } else {
            (next, self.step_reward, false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Environment {
    GaussianBandit(GaussianBandit),
    Gridworld(Gridworld),
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        match self {
            Environment::GaussianBandit(b) if !b.target.is_finite() => Err(Error::InvalidArgument(
                "bandit target must be finite".into(),
            )),
            Environment::GaussianBandit(_) => Ok(()),
            Environment::Gridworld(g) => {
                if g.width == 0 || g.height == 0 {
                    return Err(Error::InvalidArgument("grid must be at least 1×1".into()));
                }
                for (name, (x, y)) in [("start", g.start), ("goal", g.goal)] {
                    if x >= g.width || y >= g.height {
                        return Err(Error::InvalidArgument(format!(
                            "{name} cell ({x},{y}) outside {}×{} grid",
                            g.width, g.height
                        )));
                    }
                }
                if g.start == g.goal {
                    return Err(Error::InvalidArgument("goal must differ from start".into()));
                }
                if g.horizon == 0 {
                    return Err(Error::InvalidArgument("horizon must be at least 1".into()));
                }
                if !g.step_reward.is_finite() || !g.goal_reward.is_finite() {
                    return Err(Error::InvalidArgument("rewards must be finite".into()));
                }
                Ok(())
            }
        }
    }

    /// Per-decision policy family for this environment.
    pub fn policy_family(&self, chart: Chart) -> Result<PolicyFamily> {
        match self {
            Environment::GaussianBandit(_) => Ok(PolicyFamily::gaussian(chart)),
            Environment::Gridworld(_) => PolicyFamily::categorical(GRID_ACTIONS)?.with_chart(chart),
        }
    }

    /// Length of the full policy parameter vector.
    pub fn param_len(&self) -> usize {
        match self {
            Environment::GaussianBandit(_) => 2,
            Environment::Gridworld(g) => g.n_states() * GRID_ACTIONS,
        }
    }

    fn check_shape(&self, family: &PolicyFamily, theta: &ParamVector) -> Result<()> {
        let expected_kind = match self {
            Environment::GaussianBandit(_) => FamilyKind::GaussianDiag,
            Environment::Gridworld(_) => FamilyKind::CategoricalSoftmax,
        };
        if family.kind() != expected_kind
            || (expected_kind == FamilyKind::CategoricalSoftmax
                && family.dimension() != GRID_ACTIONS)
        {
            return Err(Error::InvalidArgument(format!(
                "policy family {:?} does not fit this environment",
                family.kind()
            )));
        }
        if theta.len() != self.param_len() {
            return Err(Error::InvalidArgument(format!(
                "environment expects {} parameters, got {}",
                self.param_len(),
                theta.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: Action,
    pub reward: f64,
}

/// One episode with the per-step score vectors of the full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub scores: Vec<ParamVector>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `Σ_t γᵗ r_t`.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .fold(0.0, |acc, s| s.reward + gamma * acc)
    }

    /// `G_t = Σ_{k≥t} γ^{k−t} r_k` for every step.
    pub fn rewards_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (t, s) in self.steps.iter().enumerate().rev() {
            acc = s.reward + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

/// Parameters of the policy at one gridworld cell.
pub(crate) fn state_block(theta: &ParamVector, state: usize) -> Result<ParamVector> {
    let lo = state * GRID_ACTIONS;
    ParamVector::new(
        theta.values()[lo..lo + GRID_ACTIONS].to_vec(),
        theta.chart(),
    )
}

/// Runs one episode of `env` under `π_θ`. Deterministic given `seed`.
pub fn rollout(
    env: &Environment,
    family: &PolicyFamily,
    theta: &ParamVector,
    seed: u64,
) -> Result<Trajectory> {
    env.check_shape(family, theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match env {
        Environment::GaussianBandit(bandit) => {
            let action = distributions::sample_with(family, theta, &mut rng)?;
            let a = action
                .as_real()
                .expect("Gaussian policy samples real actions");
            let score = distributions::score(family, theta, action)?;
            Ok(Trajectory {
                steps: vec![Step {
                    state: 0,
                    action,
                    reward: bandit.reward(a),
                }],
                scores: vec![score],
                seed,
            })
        }
        Environment::Gridworld(grid) => {
            let mut state = grid.state_id(grid.start);
            let mut steps = Vec::new();
            let mut scores = Vec::new();
            for _ in 0..grid.horizon {
                let local = state_block(theta, state)?;
                let action = distributions::sample_with(family, &local, &mut rng)?;
                let local_score = distributions::score(family, &local, action)?;
                let mut full = vec![0.0; theta.len()];
                let lo = state * GRID_ACTIONS;
                full[lo..lo + GRID_ACTIONS].copy_from_slice(local_score.values());
                scores.push(ParamVector::new(full, theta.chart())?);

                let a = action
                    .as_index()
                    .expect("categorical policy samples indices");
                let (next, reward, done) = grid.step(state, a);
                steps.push(Step {
                    state,
                    action,
                    reward,
                });
                state = next;
                if done {
                    break;
                }
            }
            Ok(Trajectory {
                steps,
                scores,
                seed,
            })
        }
    }
}

/// `count` rollouts with seeds `seed_base, seed_base + 1, …`, returned in
/// seed order.
pub fn rollout_batch(
    env: &Environment,
    family: &PolicyFamily,
    theta: &ParamVector,
    seed_base: u64,
    count: usize,
) -> Result<Vec<Trajectory>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| rollout(env, family, theta, seed_base.wrapping_add(i)))
        .collect()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    Ok(())
}

/// Mean discounted return over the batch.
pub fn estimate_objective(trajectories: &[Trajectory], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    let total: f64 = trajectories
        .iter()
        .map(|t| t.discounted_return(gamma))
        .sum();
    Ok(total / trajectories.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    #[default]
    None,
    /// Batch mean of the discounted return.
    MeanReturn,
}

/// Each trajectory's contribution `Σ_t (G_t − b) · score_t`. Their mean is
/// [`reinforce_gradient`]; their spread gives the estimator's standard error.
pub fn per_trajectory_gradients(
    trajectories: &[Trajectory],
    gamma: f64,
    baseline: Baseline,
) -> Result<Vec<Vec<f64>>> {
    check_gamma(gamma)?;
    let first = trajectories
        .iter()
        .find_map(|t| t.scores.first())
        .ok_or_else(|| Error::InvalidArgument("no trajectory steps".into()))?;
    let dim = first.len();
    let b = match baseline {
        Baseline::None => 0.0,
        Baseline::MeanReturn => estimate_objective(trajectories, gamma)?,
    };
    trajectories
        .iter()
        .map(|traj| {
            if traj.scores.len() != traj.steps.len() {
                return Err(Error::InvalidArgument(
                    "trajectory has mismatched scores".into(),
                ));
            }
            let mut g = vec![0.0; dim];
            for (ret, score) in traj.rewards_to_go(gamma).into_iter().zip(&traj.scores) {
                if score.len() != dim {
                    return Err(Error::InvalidArgument(format!(
                        "score of length {} in a batch of length {dim}",
                        score.len()
                    )));
                }
                let w = ret - b;
                for (gi, si) in g.iter_mut().zip(score.values()) {
                    *gi += w * si;
                }
            }
            Ok(g)
        })
        .collect()
}

/// REINFORCE estimate of `∇θ J` with reward-to-go and an optional baseline.
pub fn reinforce_gradient(
    trajectories: &[Trajectory],
    gamma: f64,
    baseline: Baseline,
) -> Result<ParamVector> {
    let terms = per_trajectory_gradients(trajectories, gamma, baseline)?;
    let mut mean = vec![0.0; terms[0].len()];
    for t in &terms {
        for (m, x) in mean.iter_mut().zip(t) {
            *m += x;
        }
    }
    let n = terms.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let chart = trajectories
        .iter()
        .find_map(|t| t.scores.first())
        .map(|s| s.chart())
        .unwrap_or(Chart::Natural);
    ParamVector::new(mean, chart)
}

/// All per-step score vectors of a batch, in order.
pub fn collect_scores(trajectories: &[Trajectory]) -> Vec<ParamVector> {
    trajectories
        .iter()
        .flat_map(|t| t.scores.iter().cloned())
        .collect()
}

/// Fraction of all visited steps spent in each gridworld cell.
pub fn visitation_weights(trajectories: &[Trajectory], n_states: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_states];
    let mut total = 0usize;
    for step in trajectories.iter().flat_map(|t| &t.steps) {
        counts[step.state] += 1.0;
        total += 1;
    }
    if total > 0 {
        counts.iter_mut().for_each(|c| *c /= total as f64);
    }
    counts
}

/// Exact Fisher of a tabular softmax policy under the given state weights:
/// block-diagonal with blocks `w_s (diag(p_s) − p_s p_sᵀ)`.
pub fn tabular_fisher(theta: &ParamVector, weights: &[f64]) -> Result<FisherEstimate> {
    if theta.len() != weights.len() * GRID_ACTIONS {
        return Err(Error::InvalidArgument(
            "state weights do not match parameters".into(),
        ));
    }
    let n = theta.len();
    let mut m = Matrix::zeros(n);
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let block = distributions::categorical_fisher(&distributions::softmax(
            state_block(theta, s)?.values(),
        ));
        let lo = s * GRID_ACTIONS;
        for i in 0..GRID_ACTIONS {
            for j in 0..GRID_ACTIONS {
                m[(lo + i, lo + j)] = w * block[(i, j)];
            }
        }
    }
    Ok(FisherEstimate::new(m, Provenance::Analytic, 0))
}

/// Tabular softmax policy over gridworld cells, with KL averaged over cells
/// by their visitation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularGeometry {
    family: PolicyFamily,
    weights: Vec<f64>,
}

impl TabularGeometry {
    pub fn new(family: PolicyFamily, weights: Vec<f64>) -> Result<Self> {
        if family.kind() != FamilyKind::CategoricalSoftmax || family.dimension() != GRID_ACTIONS {
            return Err(Error::InvalidArgument(
                "tabular geometry needs a 4-way categorical family".into(),
            ));
        }
        Ok(Self { family, weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl PolicyGeometry for TabularGeometry {
    fn validate(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.weights.len() * GRID_ACTIONS {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.weights.len() * GRID_ACTIONS,
                theta.len()
            )));
        }
        if theta.chart() != self.family.chart() {
            return Err(Error::InvalidArgument("chart mismatch".into()));
        }
        Ok(())
    }

    fn divergence(&self, theta_a: &ParamVector, theta_b: &ParamVector) -> Result<f64> {
        self.validate(theta_a)?;
        self.validate(theta_b)?;
        let mut total = 0.0;
        for (s, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                let kl = distributions::kl_closed_form(
                    &self.family,
                    &state_block(theta_a, s)?,
                    &state_block(theta_b, s)?,
                )?;
                total += w * kl;
            }
        }
        Ok(total)
    }
}
