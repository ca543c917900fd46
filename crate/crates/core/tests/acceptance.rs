//! Acceptance suite. Prints one pass/fail line per criterion and exits
//! nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use natgrad::distributions::{self, Action};
use natgrad::env::{self, Baseline, Environment, GaussianBandit};
use natgrad::experiment::diagnostics::{chart_invariance_gap, distance_pairs};
use natgrad::experiment::{compare_methods, CompareConfig, Method};
use natgrad::fisher::{self, DEFAULT_FD_STEP};
use natgrad::linalg::Matrix;
use natgrad::natural_gradient::{self, NpgOptions};
use natgrad::solver::{self, SolveMethod, SolverChoice};
use natgrad::{Chart, FisherEstimate, ParamVector, PolicyFamily, Provenance};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn gaussian_kl(mu_a: f64, s_a: f64, mu_b: f64, s_b: f64) -> f64 {
    (s_b / s_a).ln() + (s_a * s_a + (mu_a - mu_b).powi(2)) / (2.0 * s_b * s_b) - 0.5
}

fn fisher_vs_hessian() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let chart = if i % 2 == 0 {
            Chart::Natural
        } else {
            Chart::LogScale
        };
        let mu = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.3..3.0);
        let second = if chart == Chart::Natural {
            sigma
        } else {
            sigma.ln()
        };
        let family = PolicyFamily::gaussian(chart);
        let theta = ParamVector::new(vec![mu, second], chart).unwrap();
        // hand-written Fisher as a second oracle
        let expected = match chart {
            Chart::Natural => [1.0 / (sigma * sigma), 2.0 / (sigma * sigma)],
            Chart::LogScale => [1.0 / (sigma * sigma), 2.0],
        };
        let exact = distributions::fisher_analytic(&family, &theta).unwrap();
        let oracle = Matrix::from_diagonal(&expected);
        ensure(
            exact.matrix().max_abs_diff(&oracle) <= 1e-12 * (1.0 + oracle.norm_inf()),
            "gaussian Fisher formula",
        )?;
        let h = fisher::kl_hessian_fd(&family, &theta, DEFAULT_FD_STEP).unwrap();
        worst =
            worst.max(exact.matrix().max_abs_diff(h.matrix()) / (1.0 + exact.matrix().norm_inf()));
    }
    for _ in 0..20 {
        let k = rng.random_range(2..7);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let family = PolicyFamily::categorical(k).unwrap();
        let theta = ParamVector::natural(logits.clone()).unwrap();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let mut oracle = Matrix::from_diagonal(&p);
        oracle.add_outer(&p, -1.0);
        let exact = distributions::fisher_analytic(&family, &theta).unwrap();
        ensure(
            exact.matrix().max_abs_diff(&oracle) <= 1e-12,
            "categorical Fisher formula",
        )?;
        let h = fisher::kl_hessian_fd(&family, &theta, DEFAULT_FD_STEP).unwrap();
        worst =
            worst.max(exact.matrix().max_abs_diff(h.matrix()) / (1.0 + exact.matrix().norm_inf()));
    }
    ensure(worst <= 1e-4, format!("max scaled deviation {worst:.3e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "max |F - H| / (1 + |F|inf) = {worst:.2e} over 40 points"
    ))
}

fn outer_product_fisher() -> Outcome {
    let start = Instant::now();
    let family = PolicyFamily::gaussian(Chart::Natural);
    let theta = ParamVector::natural(vec![0.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut scores = Vec::with_capacity(100_000);
    let mut by_hand = [[0.0; 2]; 2];
    for _ in 0..100_000 {
        let x = distributions::sample_with(&family, &theta, &mut rng).unwrap();
        let s = distributions::score(&family, &theta, x).unwrap();
        let a = x.as_real().unwrap();
        let manual = [a, a * a - 1.0];
        for i in 0..2 {
            for j in 0..2 {
                by_hand[i][j] += manual[i] * manual[j] / 100_000.0;
            }
        }
        scores.push(s);
    }
    let est = fisher::fisher_from_samples(&scores).unwrap();
    let m = est.matrix();
    let target = [1.0, 2.0];
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            ensure(
                (m[(i, j)] - by_hand[i][j]).abs() < 1e-9,
                "estimator disagrees with hand-computed outer products",
            )?;
            let err = if i == j {
                (m[(i, j)] - target[i]).abs() / target[i]
            } else {
                m[(i, j)].abs() / (target[0] * target[1]).sqrt()
            };
            worst = worst.max(err);
        }
    }
    ensure(
        worst <= 0.05,
        format!("entrywise relative error {worst:.4}"),
    )?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "entrywise relative error {:.2}% at N = 1e5",
        worst * 100.0
    ))
}

fn distance_pair_diagnostic() -> Outcome {
    let start = Instant::now();
    let family = PolicyFamily::gaussian(Chart::Natural);
    let [narrow, wide] = distance_pairs();
    let a = natural_gradient::euclidean_vs_kl_diagnostic(&family, &narrow.0, &narrow.1).unwrap();
    let b = natural_gradient::euclidean_vs_kl_diagnostic(&family, &wide.0, &wide.1).unwrap();
    ensure(
        (a.euclidean - 1.0).abs() <= 1e-12 && (b.euclidean - 1.0).abs() <= 1e-12,
        "euclidean distance",
    )?;
    let (oa, ob) = (
        gaussian_kl(0.0, 0.3, 1.0, 0.3),
        gaussian_kl(0.0, 3.0, 1.0, 3.0),
    );
    ensure(
        (a.kl_ab - oa).abs() <= 1e-12 && (b.kl_ab - ob).abs() <= 1e-12,
        "KL disagrees with oracle",
    )?;
    ensure(
        (a.kl_ab - 5.5556).abs() <= 5e-5,
        format!("narrow pair KL {}", a.kl_ab),
    )?;
    ensure(
        (b.kl_ab - 0.05556).abs() <= 5e-6,
        format!("wide pair KL {}", b.kl_ab),
    )?;
    let ratio = a.kl_ab / b.kl_ab;
    ensure(ratio >= 99.0, format!("ratio {ratio}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!(
        "euclidean 1 and 1, KL {:.4} and {:.5}, ratio {ratio:.1}",
        a.kl_ab, b.kl_ab
    ))
}

fn kl_budget() -> Outcome {
    let start = Instant::now();
    let family = PolicyFamily::gaussian(Chart::Natural);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut spans = Vec::new();
    for (eps, lo, hi) in [(1e-3, 0.8, 1.2), (1e-5, 0.95, 1.05)] {
        let (mut min, mut max) = (f64::INFINITY, 0.0f64);
        for _ in 0..20 {
            let mu = rng.random_range(-2.0..2.0);
            let sigma = rng.random_range(0.3..3.0);
            let theta = ParamVector::natural(vec![mu, sigma]).unwrap();
            let g = ParamVector::natural(vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ])
            .unwrap();
            let f = distributions::fisher_analytic(&family, &theta).unwrap();
            let options = NpgOptions {
                audit: true,
                ..NpgOptions::default()
            };
            let report =
                natural_gradient::npg_update(&family, &theta, &g, &f, eps, options).unwrap();
            let new = report.theta_new.values();
            let oracle = gaussian_kl(mu, sigma, new[0], new[1]);
            ensure(
                (report.realized_kl.unwrap() - oracle).abs() <= 1e-9 * eps.max(oracle),
                "audited KL disagrees with oracle",
            )?;
            let ratio = oracle / eps;
            min = min.min(ratio);
            max = max.max(ratio);
        }
        ensure(
            min >= lo && max <= hi,
            format!("ratio range [{min:.4}, {max:.4}] at eps {eps:e}"),
        )?;
        spans.push(format!("[{min:.3}, {max:.3}] at {eps:e}"));
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("realized/eps {}", spans.join(", ")))
}

fn chart_invariance() -> Outcome {
    let start = Instant::now();
    let points = [
        ((0.3, 0.5), (1.0, -0.7)),
        ((-1.0, 2.0), (0.4, 0.9)),
        ((0.5, 0.3), (-0.6, 0.8)),
        ((1.5, 2.5), (0.2, -0.5)),
    ];
    let mut worst_decay: f64 = 0.0;
    let mut worst_sep = f64::INFINITY;
    for ((mu, sigma), (gm, gs)) in points {
        let theta = ParamVector::natural(vec![mu, sigma]).unwrap();
        let g = ParamVector::natural(vec![gm, gs]).unwrap();
        let gaps: Vec<_> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&e| chart_invariance_gap(&theta, &g, e).unwrap())
            .collect();
        for w in gaps.windows(2) {
            ensure(
                w[1].npg <= w[0].npg / 10.0,
                format!("gap {:.3e} -> {:.3e} not superlinear", w[0].npg, w[1].npg),
            )?;
            worst_decay = worst_decay.max(w[1].npg / w[0].npg);
        }
        let last = gaps[2];
        ensure(
            last.vanilla > 10.0 * last.npg,
            format!("vanilla gap {:.3e} vs {:.3e}", last.vanilla, last.npg),
        )?;
        worst_sep = worst_sep.min(last.vanilla / last.npg);
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "worst decay per decade {worst_decay:.3}, vanilla/natural gap at 1e-4 >= {worst_sep:.2e}"
    ))
}

fn identity_fisher() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 1..=8 {
        let g =
            ParamVector::natural((0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let f = FisherEstimate::new(Matrix::identity(n), Provenance::Analytic, 0);
        for choice in [
            SolverChoice::Direct,
            SolverChoice::Cg {
                tol: 1e-12,
                max_iter: 10,
            },
        ] {
            let (dir, _) = natural_gradient::natural_direction(&g, &f, choice).unwrap();
            ensure(
                dir.values() == g.values(),
                format!("direction differs from gradient at n = {n} with {choice:?}"),
            )?;
        }
    }
    let family = PolicyFamily::gaussian(Chart::LogScale);
    let theta = ParamVector::new(vec![0.2, 0.1], Chart::LogScale).unwrap();
    let g = ParamVector::new(vec![1.0, 2.0], Chart::LogScale).unwrap();
    let f = FisherEstimate::new(Matrix::identity(2), Provenance::Analytic, 0);
    let report =
        natural_gradient::npg_update(&family, &theta, &g, &f, 1e-3, NpgOptions::default()).unwrap();
    let vanilla = natural_gradient::vanilla_update(&family, &theta, &g, report.alpha).unwrap();
    ensure(
        report.theta_new == vanilla,
        "NPG step differs from vanilla step with the same alpha",
    )?;
    Ok("natural direction equals gradient bit for bit, n = 1..8".into())
}

fn solver_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = 1 + case % 50;
        let mut a = Matrix::zeros(n);
        for _ in 0..n {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            a.add_outer(&v, 1.0);
        }
        a.add_diagonal(0.1);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let direct = solver::solve_spd(&a, &b).unwrap();
        let cg = solver::conjugate_gradient(&a, &b, 1e-12, 20 * n).unwrap();
        let scale = direct.solution.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = direct
            .solution
            .iter()
            .zip(&cg.solution)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(diff / scale);
    }
    ensure(worst <= 1e-6, format!("relative difference {worst:.3e}"))?;
    let id = solver::solve(
        &Matrix::identity(30),
        &vec![1.5; 30],
        SolverChoice::Cg {
            tol: 1e-10,
            max_iter: 300,
        },
    )
    .unwrap();
    ensure(
        id.method == SolveMethod::Cg && id.iterations == 1 && id.converged,
        format!("identity took {} iterations", id.iterations),
    )?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "max relative difference {worst:.2e} over 100 systems, identity in 1 iteration"
    ))
}

fn convergence_race() -> Outcome {
    let start = Instant::now();
    let config =
        CompareConfig::parse(include_str!("../configs/race_ill_conditioned.conf")).unwrap();
    let vanilla = Method::Vanilla { alpha: 0.05 };
    let npg = Method::from_name("npg-exact-fisher", 1e-2).unwrap();
    ensure(
        config.methods == vec![vanilla, npg],
        "shipped race config has unexpected methods",
    )?;
    ensure(
        config.seeds.len() == 20 && config.threshold == -0.25,
        "shipped race config has unexpected seeds or threshold",
    )?;
    ensure(
        config.base.sigma0 == 0.1
            && config.base.env == Environment::GaussianBandit(GaussianBandit { target: 2.0 }),
        "shipped race config has unexpected environment",
    )?;
    let report = compare_methods(&config).unwrap();
    let v = report.summary(&vanilla).unwrap();
    let n = report.summary(&npg).unwrap();
    let ratio = n.median_iterations / v.median_iterations;
    let detail = format!(
        "median iterations npg {} vs vanilla {} (ratio {ratio:.2}; vanilla reached {}/{}, aborted {}, cap {})",
        n.median_iterations, v.median_iterations, v.reached, v.runs, v.aborted, report.cap
    );
    ensure(ratio <= 0.5, detail.clone())?;
    within(start.elapsed(), 60.0)?;
    Ok(detail)
}

fn reinforce_correctness() -> Outcome {
    let start = Instant::now();
    let bandit = GaussianBandit { target: 2.0 };
    let environment = Environment::GaussianBandit(bandit);
    let family = PolicyFamily::gaussian(Chart::Natural);
    let (mu, sigma) = (0.5, 0.8);
    let theta = ParamVector::natural(vec![mu, sigma]).unwrap();
    let batch = env::rollout_batch(&environment, &family, &theta, 99, 100_000).unwrap();
    let terms = env::per_trajectory_gradients(&batch, 1.0, Baseline::None).unwrap();
    let analytic = [-2.0 * (mu - 2.0), -2.0 * sigma];
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let xs: Vec<f64> = terms.iter().map(|t| t[i]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        worst = worst.max((mean - analytic[i]).abs() / se);
    }
    // actions must also drive the reward the bandit defines
    let Action::Real(a) = batch[0].steps[0].action else {
        return Err("non-real bandit action".into());
    };
    ensure(
        batch[0].steps[0].reward == -(a - 2.0).powi(2),
        "bandit reward formula",
    )?;
    ensure(
        worst <= 4.0,
        format!("{worst:.2} standard errors from analytic gradient"),
    )?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "largest deviation {worst:.2} standard errors at N = 1e5"
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "env = gaussian-bandit\nbandit.target = 2\nmethod = npg-exact-fisher\nepsilon = 1e-3\n\
         batch_size = 1000\niterations = 50\nseed = 7\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_natgrad"))
            .arg("run")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), format!("run exited with {status}"))?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], "CSV outputs differ")?;
    Ok(format!(
        "two runs produced identical {}-byte CSVs",
        outputs[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("Fisher equals local KL Hessian", fisher_vs_hessian),
        ("outer-product Fisher estimator", outer_product_fisher),
        ("equal distance, unequal KL pairs", distance_pair_diagnostic),
        ("dynamic step size respects KL budget", kl_budget),
        ("chart invariance of natural step", chart_invariance),
        ("identity Fisher equivalence", identity_fisher),
        ("CG matches direct solve", solver_equivalence),
        (
            "convergence race on ill-conditioned bandit",
            convergence_race,
        ),
        ("REINFORCE matches analytic gradient", reinforce_correctness),
        ("deterministic run output", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
