//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is typed, unknown keys
//! are rejected, and a key may appear only once. Keys under `bandit.` and
//! `grid.` only apply to their environment.
//!
//! ```text
//! env = gaussian-bandit          # or gridworld
//! bandit.target = 2.0
//! bandit.mu0 = 0.0
//! bandit.sigma0 = 0.1
//! chart = natural                # or log-scale (bandit only)
//! method = npg-exact-fisher      # vanilla | npg-exact-fisher | npg-sampled-fisher | npg-cg
//! epsilon = 0.01                 # npg methods; vanilla takes `alpha`
//! batch_size = 1000
//! iterations = 200
//! seed = 7
//! compare.methods = vanilla:0.05, npg-exact-fisher:0.01
//! compare.seeds = 0..20
//! compare.threshold = -0.25
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::distributions::Chart;
use crate::env::{Baseline, Environment, GaussianBandit, Gridworld};
use crate::error::{Error, Result};
use crate::fisher::DEFAULT_DAMPING;

pub const DEFAULT_SAMPLE_BUDGET: u64 = 10_000_000;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;
pub const DEFAULT_GAMMA: f64 = 0.99;

const KNOWN_KEYS: &[&str] = &[
    "env",
    "bandit.target",
    "bandit.mu0",
    "bandit.sigma0",
    "grid.width",
    "grid.height",
    "grid.start",
    "grid.goal",
    "grid.step_reward",
    "grid.goal_reward",
    "grid.horizon",
    "chart",
    "method",
    "epsilon",
    "alpha",
    "batch_size",
    "iterations",
    "gamma",
    "seed",
    "damping",
    "baseline",
    "backtracking",
    "sigma_floor",
    "sample_budget",
    "wall_clock",
    "out",
    "compare.methods",
    "compare.seeds",
    "compare.threshold",
];

/// Where the Fisher matrix of a natural gradient step comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherSource {
    /// Closed form at the current parameters.
    Exact,
    /// Outer products of the batch's score vectors, solved directly.
    Sampled,
    /// Same sampled Fisher, applied matrix-free inside conjugate gradients.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Vanilla { alpha: f64 },
    Npg { fisher: FisherSource, epsilon: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Vanilla { .. } => "vanilla",
            Method::Npg {
                fisher: FisherSource::Exact,
                ..
            } => "npg-exact-fisher",
            Method::Npg {
                fisher: FisherSource::Sampled,
                ..
            } => "npg-sampled-fisher",
            Method::Npg {
                fisher: FisherSource::Cg,
                ..
            } => "npg-cg",
        }
    }

    /// `alpha` for vanilla, `epsilon` for the natural gradient variants.
    pub fn step_parameter(&self) -> f64 {
        match *self {
            Method::Vanilla { alpha } => alpha,
            Method::Npg { epsilon, .. } => epsilon,
        }
    }

    /// Builds a method from its name and step parameter.
    pub fn from_name(name: &str, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Config(format!(
                "step parameter for `{name}` must be positive, got {step}"
            )));
        }
        let npg = |fisher| Method::Npg {
            fisher,
            epsilon: step,
        };
        match name {
            "vanilla" => Ok(Method::Vanilla { alpha: step }),
            "npg-exact-fisher" => Ok(npg(FisherSource::Exact)),
            "npg-sampled-fisher" => Ok(npg(FisherSource::Sampled)),
            "npg-cg" => Ok(npg(FisherSource::Cg)),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }

    fn is_known(name: &str) -> bool {
        matches!(
            name,
            "vanilla" | "npg-exact-fisher" | "npg-sampled-fisher" | "npg-cg"
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.step_parameter())
    }
}

/// Fully validated settings for a single training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: Environment,
    pub chart: Chart,
    /// Initial Gaussian mean (bandit only).
    pub mu0: f64,
    /// Initial Gaussian scale in the natural chart (bandit only).
    pub sigma0: f64,
    pub method: Method,
    pub batch_size: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub seed: u64,
    pub damping: f64,
    pub baseline: Baseline,
    pub backtracking: bool,
    pub sigma_floor: f64,
    pub sample_budget: u64,
    pub wall_clock: bool,
    pub out: Option<PathBuf>,
}

/// A base configuration plus the grid of methods and seeds to race.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub base: ExperimentConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub threshold: f64,
}

/// Raw keys and values, before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Sets or replaces a key, as command-line overrides do.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.typed(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "key `{key}`: expected true or false, got `{v}`"
            ))),
        }
    }

    fn cell(&self, key: &str, default: (usize, usize)) -> Result<(usize, usize)> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                let parsed = v
                    .split_once(',')
                    .and_then(|(x, y)| Some((x.trim().parse().ok()?, y.trim().parse().ok()?)));
                parsed
                    .ok_or_else(|| Error::Config(format!("key `{key}`: expected `x,y`, got `{v}`")))
            }
        }
    }

    fn reject_prefix(&self, prefix: &str, env_name: &str) -> Result<()> {
        match self.entries.keys().find(|k| k.starts_with(prefix)) {
            Some(k) => Err(Error::Config(format!(
                "key `{k}` does not apply to env `{env_name}`"
            ))),
            None => Ok(()),
        }
    }

    /// The method named by `method` with its `epsilon`/`alpha`, if present.
    fn method(&self) -> Result<Option<Method>> {
        let epsilon: Option<f64> = self.typed("epsilon")?;
        let alpha: Option<f64> = self.typed("alpha")?;
        let name = match self.get("method") {
            Some(name) => name,
            None if epsilon.is_none() && alpha.is_none() => return Ok(None),
            None => {
                return Err(Error::Config(
                    "`epsilon`/`alpha` given without `method`".into(),
                ))
            }
        };
        if !Method::is_known(name) {
            return Err(Error::Config(format!("unknown method `{name}`")));
        }
        let step = match (name, epsilon, alpha) {
            (_, Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set exactly one of `epsilon` and `alpha`".into(),
                ))
            }
            ("vanilla", None, Some(a)) => a,
            ("vanilla", _, None) => {
                return Err(Error::Config("method `vanilla` needs `alpha`".into()))
            }
            (_, Some(e), None) => e,
            (n, _, _) => return Err(Error::Config(format!("method `{n}` needs `epsilon`"))),
        };
        Method::from_name(name, step).map(Some)
    }
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, step) = item.split_once(':').ok_or_else(|| {
                Error::Config(format!(
                    "compare.methods: expected `method:step`, got `{item}`"
                ))
            })?;
            let step: f64 = step
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("compare.methods: bad step in `{item}`")))?;
            Method::from_name(name.trim(), step)
        })
        .collect()
}

fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    let bad = || {
        Error::Config(format!(
            "compare.seeds: expected `a..b` or a comma list, got `{list}`"
        ))
    };
    if let Some((lo, hi)) = list.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..hi).collect());
    }
    list.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

impl ExperimentConfig {
    /// Parses and validates a run configuration.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let method = map
            .method()?
            .ok_or_else(|| Error::Config("missing required key `method`".into()))?;
        Self::build(map, method)
    }

    fn build(map: &ConfigMap, method: Method) -> Result<Self> {
        let env_name: String = map.required("env")?;
        let env = match env_name.as_str() {
            "gaussian-bandit" => {
                map.reject_prefix("grid.", &env_name)?;
                Environment::GaussianBandit(GaussianBandit {
                    target: map.or("bandit.target", 2.0)?,
                })
            }
            "gridworld" => {
                map.reject_prefix("bandit.", &env_name)?;
                let d = Gridworld::default();
                Environment::Gridworld(Gridworld {
                    width: map.or("grid.width", d.width)?,
                    height: map.or("grid.height", d.height)?,
                    start: map.cell("grid.start", d.start)?,
                    goal: map.cell("grid.goal", d.goal)?,
                    step_reward: map.or("grid.step_reward", d.step_reward)?,
                    goal_reward: map.or("grid.goal_reward", d.goal_reward)?,
                    horizon: map.or("grid.horizon", d.horizon)?,
                })
            }
            other => return Err(Error::Config(format!("unknown env `{other}`"))),
        };
        let chart = match map.get("chart") {
            None => Chart::Natural,
            Some(c) => c
                .parse()
                .map_err(|_| Error::Config(format!("unknown chart `{c}`")))?,
        };
        let baseline = match map.get("baseline") {
            None | Some("none") => Baseline::None,
            Some("mean-return") => Baseline::MeanReturn,
            Some(b) => return Err(Error::Config(format!("unknown baseline `{b}`"))),
        };
        let config = Self {
            env,
            chart,
            mu0: map.or("bandit.mu0", 0.0)?,
            sigma0: map.or("bandit.sigma0", 1.0)?,
            method,
            batch_size: map.required("batch_size")?,
            iterations: map.required("iterations")?,
            gamma: map.or("gamma", DEFAULT_GAMMA)?,
            seed: map.or("seed", 0)?,
            damping: map.or("damping", DEFAULT_DAMPING)?,
            baseline,
            backtracking: map.bool_or("backtracking", false)?,
            sigma_floor: map.or("sigma_floor", DEFAULT_SIGMA_FLOOR)?,
            sample_budget: map.or("sample_budget", DEFAULT_SAMPLE_BUDGET)?,
            wall_clock: map.bool_or("wall_clock", false)?,
            out: map.get("out").map(PathBuf::from),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if let Err(e) = self.env.validate() {
            return fail(e.to_string());
        }
        if self.env.policy_family(self.chart).is_err() {
            return fail(format!(
                "chart `{}` is not available for this environment",
                self.chart
            ));
        }
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return fail(format!("damping must be nonnegative, got {}", self.damping));
        }
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() || !self.mu0.is_finite() {
            return fail("bandit.mu0 must be finite and bandit.sigma0 positive".into());
        }
        if !(self.sigma_floor > 0.0) || !self.sigma_floor.is_finite() {
            return fail(format!(
                "sigma_floor must be positive, got {}",
                self.sigma_floor
            ));
        }
        let step = self.method.step_parameter();
        if !(step > 0.0) || !step.is_finite() {
            return fail(format!("step parameter must be positive, got {step}"));
        }
        let samples = (self.batch_size as u128) * (self.iterations as u128);
        if samples > self.sample_budget as u128 {
            return fail(format!(
                "batch_size × iterations = {samples} exceeds sample_budget {}",
                self.sample_budget
            ));
        }
        Ok(())
    }

    /// Rollouts this configuration will perform.
    pub fn planned_samples(&self) -> u64 {
        self.batch_size as u64 * self.iterations as u64
    }
}

impl CompareConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let methods = parse_methods(
            map.get("compare.methods")
                .ok_or_else(|| Error::Config("missing required key `compare.methods`".into()))?,
        )?;
        if methods.len() < 2 {
            return Err(Error::Config(
                "compare.methods needs at least two entries".into(),
            ));
        }
        let seeds = parse_seeds(
            map.get("compare.seeds")
                .ok_or_else(|| Error::Config("missing required key `compare.seeds`".into()))?,
        )?;
        if seeds.len() < 2 {
            return Err(Error::Config(
                "compare.seeds needs at least two seeds".into(),
            ));
        }
        let threshold: f64 = map.required("compare.threshold")?;
        if !threshold.is_finite() {
            return Err(Error::Config("compare.threshold must be finite".into()));
        }
        let method = match map.method()? {
            Some(m) => m,
            None => methods[0],
        };
        let base = ExperimentConfig::build(map, method)?;
        for m in &methods {
            ExperimentConfig {
                method: *m,
                ..base.clone()
            }
            .validate()?;
        }
        Ok(Self {
            base,
            methods,
            seeds,
            threshold,
        })
    }
}

impl fmt::Display for ExperimentConfig {
    /// Canonical form; parses back to an equal configuration.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.env {
            Environment::GaussianBandit(b) => {
                writeln!(f, "env = gaussian-bandit")?;
                writeln!(f, "bandit.target = {:?}", b.target)?;
                writeln!(f, "bandit.mu0 = {:?}", self.mu0)?;
                writeln!(f, "bandit.sigma0 = {:?}", self.sigma0)?;
            }
            Environment::Gridworld(g) => {
                writeln!(f, "env = gridworld")?;
                writeln!(f, "grid.width = {}", g.width)?;
                writeln!(f, "grid.height = {}", g.height)?;
                writeln!(f, "grid.start = {},{}", g.start.0, g.start.1)?;
                writeln!(f, "grid.goal = {},{}", g.goal.0, g.goal.1)?;
                writeln!(f, "grid.step_reward = {:?}", g.step_reward)?;
                writeln!(f, "grid.goal_reward = {:?}", g.goal_reward)?;
                writeln!(f, "grid.horizon = {}", g.horizon)?;
            }
        }
        writeln!(f, "chart = {}", self.chart)?;
        writeln!(f, "method = {}", self.method.name())?;
        match self.method {
            Method::Vanilla { alpha } => writeln!(f, "alpha = {alpha:?}")?,
            Method::Npg { epsilon, .. } => writeln!(f, "epsilon = {epsilon:?}")?,
        }
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "iterations = {}", self.iterations)?;
        writeln!(f, "gamma = {:?}", self.gamma)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "damping = {:?}", self.damping)?;
        let baseline = match self.baseline {
            Baseline::None => "none",
            Baseline::MeanReturn => "mean-return",
        };
        writeln!(f, "baseline = {baseline}")?;
        writeln!(f, "backtracking = {}", self.backtracking)?;
        writeln!(f, "sigma_floor = {:?}", self.sigma_floor)?;
        writeln!(f, "sample_budget = {}", self.sample_budget)?;
        writeln!(f, "wall_clock = {}", self.wall_clock)?;
        if let Some(out) = &self.out {
            writeln!(f, "out = {}", out.display())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BANDIT: &str = "
        # ill-conditioned start
        env = gaussian-bandit
        bandit.target = 2
        bandit.sigma0 = 0.1
        method = npg-exact-fisher
        epsilon = 1e-3
        batch_size = 1000
        iterations = 50
        seed = 7
    ";

    #[test]
    fn parses_a_bandit_run() {
        let c = ExperimentConfig::parse(BANDIT).unwrap();
        assert_eq!(
            c.method,
            Method::Npg {
                fisher: FisherSource::Exact,
                epsilon: 1e-3
            }
        );
        assert_eq!(
            c.env,
            Environment::GaussianBandit(GaussianBandit { target: 2.0 })
        );
        assert_eq!((c.sigma0, c.mu0, c.seed), (0.1, 0.0, 7));
        assert_eq!(c.damping, DEFAULT_DAMPING);
        assert_eq!(c.sigma_floor, 1e-3);
        assert!(!c.wall_clock);
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = ExperimentConfig::parse(BANDIT).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_string()).unwrap(), c);
        let grid = "env = gridworld\nmethod = vanilla\nalpha = 0.5\nbatch_size = 4\niterations = 2\nbaseline = mean-return\nout = /tmp/x.csv\n";
        let c = ExperimentConfig::parse(grid).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_string()).unwrap(), c);
    }

    fn err(text: &str) -> String {
        match ExperimentConfig::parse(text) {
            Err(Error::Config(msg)) => msg,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(err(&BANDIT.replace("iterations = 50", "iterations = 0")).contains("iterations"));
        assert!(err(&format!("{BANDIT}\nalpha = 0.1")).contains("exactly one"));
        assert!(err(&BANDIT.replace("epsilon = 1e-3", "alpha = 1e-3")).contains("needs `epsilon`"));
        assert!(err(&format!("{BANDIT}\nlearning_rate = 3")).contains("unknown key"));
        assert!(err(&format!("{BANDIT}\nseed = 8")).contains("duplicate"));
        assert!(err(&format!("{BANDIT}\ngrid.width = 3")).contains("does not apply"));
        assert!(
            err(&BANDIT.replace("batch_size = 1000", "batch_size = 1000000"))
                .contains("sample_budget")
        );
        assert!(err(&BANDIT.replace("npg-exact-fisher", "npg-magic")).contains("unknown method"));
        assert!(err(&BANDIT.replace("epsilon = 1e-3", "epsilon = -1")).contains("positive"));
        assert!(
            err(&BANDIT.replace("bandit.sigma0 = 0.1", "bandit.sigma0 = 0")).contains("sigma0")
        );
        assert!(err(&format!("{BANDIT}\ngamma = 1.5")).contains("gamma"));
        assert!(err("env = gridworld\nchart = log-scale\nmethod = vanilla\nalpha = 1\nbatch_size = 1\niterations = 1").contains("chart"));
        assert!(err("env = gridworld\ngrid.goal = 0,0\nmethod = vanilla\nalpha = 1\nbatch_size = 1\niterations = 1").contains("goal"));
        assert!(err("env = gaussian-bandit\nbatch_size = 1\niterations = 1").contains("method"));
        assert!(err("no equals sign here").contains("key = value"));
    }

    #[test]
    fn overrides_replace_values() {
        let mut map = ConfigMap::parse(BANDIT).unwrap();
        map.set("seed", "11").unwrap();
        map.set("method", "vanilla").unwrap();
        map.remove("epsilon");
        map.set("alpha", "0.05").unwrap();
        let c = ExperimentConfig::from_map(&map).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.method, Method::Vanilla { alpha: 0.05 });
        assert!(map.set("nonsense", "1").is_err());
    }

    #[test]
    fn parses_comparison_grid() {
        let text = "env = gaussian-bandit\nbatch_size = 10\niterations = 5\n\
                    compare.methods = vanilla:0.05, npg-exact-fisher:0.01\n\
                    compare.seeds = 0..20\ncompare.threshold = -0.25\n";
        let c = CompareConfig::parse(text).unwrap();
        assert_eq!(c.methods.len(), 2);
        assert_eq!(c.seeds, (0..20).collect::<Vec<_>>());
        assert_eq!(c.threshold, -0.25);
        assert_eq!(c.base.method, Method::Vanilla { alpha: 0.05 });

        let listed = text.replace("0..20", "3, 5, 9");
        assert_eq!(CompareConfig::parse(&listed).unwrap().seeds, vec![3, 5, 9]);
        assert!(CompareConfig::parse(&text.replace(", npg-exact-fisher:0.01", "")).is_err());
        assert!(CompareConfig::parse(&text.replace("0..20", "4")).is_err());
        assert!(CompareConfig::parse(&text.replace("vanilla:0.05", "vanilla")).is_err());
    }
}
