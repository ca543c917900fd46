//! Multi-seed races between update rules.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::Result;

use super::config::{CompareConfig, ExperimentConfig, Method};
use super::metrics::format_float;
use super::runner::run_experiment;

/// One (method, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub seed: u64,
    /// First iteration whose objective estimate reached the threshold.
    pub iterations_to_threshold: Option<usize>,
    pub final_objective: f64,
    /// Runtime error that stopped the run, if any.
    pub aborted: Option<String>,
}

impl CellResult {
    /// Iterations to threshold, censored at `cap` when never reached.
    pub fn censored_iterations(&self, cap: usize) -> usize {
        self.iterations_to_threshold.unwrap_or(cap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub reached: usize,
    pub aborted: usize,
    pub median_iterations: f64,
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub mean_final_objective: f64,
    pub std_final_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub threshold: f64,
    /// Iteration cap; unreached thresholds count as this value.
    pub cap: usize,
    /// Cells grouped by method in listed order, seeds in listed order.
    pub cells: Vec<CellResult>,
    pub summaries: Vec<MethodSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and sample standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_cell(
    base: &ExperimentConfig,
    method: Method,
    seed: u64,
    threshold: f64,
) -> Result<CellResult> {
    let config = ExperimentConfig {
        method,
        seed,
        out: None,
        ..base.clone()
    };
    let outcome = run_experiment(&config)?;
    Ok(CellResult {
        method,
        seed,
        iterations_to_threshold: outcome.table.iterations_to_threshold(threshold),
        final_objective: outcome.table.rows.last().map_or(f64::NAN, |r| r.objective),
        aborted: outcome.abort.map(|e| e.to_string()),
    })
}

/// Runs every method on every seed and summarises iterations-to-threshold
/// and final objective per method.
pub fn compare_methods(config: &CompareConfig) -> Result<ComparisonReport> {
    let cap = config.base.iterations;
    let grid: Vec<(Method, u64)> = config
        .methods
        .iter()
        .flat_map(|&m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(m, s)| run_cell(&config.base, m, s, config.threshold))
        .collect::<Result<Vec<_>>>()?;

    let summaries = cells
        .chunks(config.seeds.len())
        .map(|group| {
            let iters: Vec<f64> = group
                .iter()
                .map(|c| c.censored_iterations(cap) as f64)
                .collect();
            let finals: Vec<f64> = group.iter().map(|c| c.final_objective).collect();
            let (mean_iterations, std_iterations) = mean_std(&iters);
            let (mean_final_objective, std_final_objective) = mean_std(&finals);
            MethodSummary {
                method: group[0].method,
                runs: group.len(),
                reached: group
                    .iter()
                    .filter(|c| c.iterations_to_threshold.is_some())
                    .count(),
                aborted: group.iter().filter(|c| c.aborted.is_some()).count(),
                median_iterations: median(&iters),
                mean_iterations,
                std_iterations,
                mean_final_objective,
                std_final_objective,
            }
        })
        .collect();

    Ok(ComparisonReport {
        threshold: config.threshold,
        cap,
        cells,
        summaries,
    })
}

impl ComparisonReport {
    pub fn summary(&self, method: &Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| &s.method == method)
    }

    /// Per-cell rows, a blank line, then the per-method summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,step,seed,iterations_to_threshold,reached,final_objective,aborted\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.method.name(),
                c.method.step_parameter(),
                c.seed,
                c.censored_iterations(self.cap),
                c.iterations_to_threshold.is_some(),
                format_float(c.final_objective),
                c.aborted.is_some(),
            );
        }
        out.push('\n');
        out.push_str(
            "method,step,runs,reached,aborted,median_iterations,mean_iterations,std_iterations,\
             mean_final_objective,std_final_objective\n",
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.method.name(),
                s.method.step_parameter(),
                s.runs,
                s.reached,
                s.aborted,
                format_float(s.median_iterations),
                format_float(s.mean_iterations),
                format_float(s.std_iterations),
                format_float(s.mean_final_objective),
                format_float(s.std_final_objective),
            );
        }
        out
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "threshold J >= {}, cap {} iterations (unreached runs count as the cap)",
            self.threshold, self.cap
        )?;
        writeln!(
            f,
            "{:<28} {:>6} {:>8} {:>8} {:>10} {:>10} {:>10} {:>14} {:>12}",
            "method",
            "runs",
            "reached",
            "aborted",
            "median",
            "mean",
            "std",
            "final J mean",
            "final J std"
        )?;
        for s in &self.summaries {
            writeln!(
                f,
                "{:<28} {:>6} {:>8} {:>8} {:>10.1} {:>10.2} {:>10.2} {:>14.5} {:>12.5}",
                s.method.to_string(),
                s.runs,
                s.reached,
                s.aborted,
                s.median_iterations,
                s.mean_iterations,
                s.std_iterations,
                s.mean_final_objective,
                s.std_final_objective
            )?;
        }
        Ok(())
    }
}
