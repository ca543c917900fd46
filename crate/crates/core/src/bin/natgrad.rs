use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use natgrad::experiment::{
    compare_methods, run_diagnostics, run_experiment, CompareConfig, ConfigMap, ExperimentConfig,
};
use natgrad::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_ABORT: u8 = 2;
const EXIT_DIAGNOSTICS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "natgrad",
    version,
    about = "Natural and vanilla policy gradient experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write the per-iteration metrics CSV.
    Run(ConfigArgs),
    /// Race several methods over a set of seeds.
    Compare(ConfigArgs),
    /// Run the built-in numerical checks.
    Diagnostics,
    /// Parse and validate a config, then print its canonical form.
    Validate(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, conflicts_with = "alpha")]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ConfigMap, Error> {
        let text = std::fs::read_to_string(&self.config)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", self.config.display())))?;
        let mut map = ConfigMap::parse(&text)?;
        if let Some(seed) = self.seed {
            map.set("seed", seed.to_string())?;
        }
        if let Some(n) = self.iterations {
            map.set("iterations", n.to_string())?;
        }
        if let Some(m) = &self.method {
            map.set("method", m.clone())?;
        }
        if let Some(eps) = self.epsilon {
            map.remove("alpha");
            map.set("epsilon", eps.to_string())?;
        }
        if let Some(alpha) = self.alpha {
            map.remove("epsilon");
            map.set("alpha", alpha.to_string())?;
        }
        if let Some(out) = &self.out {
            map.set("out", out.display().to_string())?;
        }
        Ok(map)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush().map_err(Error::from)
        }
    }
}

fn run(args: &ConfigArgs) -> Result<ExitCode, Error> {
    let config = ExperimentConfig::from_map(&args.load()?)?;
    let outcome = run_experiment(&config)?;
    emit(config.out.as_deref(), &outcome.table.to_csv())?;
    match outcome.abort {
        Some(err) => {
            eprintln!(
                "run aborted after {} iterations: {err}",
                outcome.table.rows.len()
            );
            Ok(ExitCode::from(EXIT_ABORT))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn compare(args: &ConfigArgs) -> Result<ExitCode, Error> {
    let config = CompareConfig::from_map(&args.load()?)?;
    let report = compare_methods(&config)?;
    if let Some(path) = &config.base.out {
        std::fs::write(path, report.to_csv())?;
    }
    print!("{report}");
    Ok(ExitCode::SUCCESS)
}

fn validate(args: &ConfigArgs) -> Result<ExitCode, Error> {
    let map = args.load()?;
    if map.get("compare.methods").is_some() {
        let config = CompareConfig::from_map(&map)?;
        print!("{}", config.base);
        println!(
            "compare.methods = {}",
            config
                .methods
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        println!(
            "compare.seeds = {}",
            config
                .seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        println!("compare.threshold = {:?}", config.threshold);
    } else {
        print!("{}", ExperimentConfig::from_map(&map)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn diagnostics() -> Result<ExitCode, Error> {
    let report = run_diagnostics()?;
    print!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_DIAGNOSTICS)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
        Command::Validate(args) => validate(args),
        Command::Diagnostics => diagnostics(),
    };
    match result {
        Ok(code) => code,
        Err(err @ Error::Config(_)) => {
            eprintln!("config error: {err}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_ABORT)
        }
    }
}
