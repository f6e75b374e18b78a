//! Command-line driver: `mcsgm <experiment> --config <file>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcsgm::harness::{run_experiment, write_outputs, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "mcsgm", version, about = "Markov-chain SGD / SGDA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral summary and deviation curves of the transition matrix
    ChainInfo(RunArgs),
    /// MC-SGD optimization gap versus T
    SgdRate(RunArgs),
    /// MC-SGD argument stability versus its bound
    SgdStability(RunArgs),
    /// MC-SGD generalization gap versus its bound
    SgdGen(RunArgs),
    /// MC-SGDA primal-dual gap versus T
    SgdaRate(RunArgs),
    /// MC-SGDA stability and weak/strong primal-dual risks
    SgdaRisk(RunArgs),
    /// Minimum squared gradient norm of MC-SGD on a non-convex loss
    NonconvexGradnorm(RunArgs),
    /// Upper quantiles of the optimization gap across replicates
    HpQuantiles(RunArgs),
    /// Evaluate every bound calculator on the grid
    Bounds(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output` in the config; default `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `master_seed` in the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicate loops
    #[arg(long)]
    threads: Option<usize>,
    /// Parse and resolve the config, print the grid, and exit
    #[arg(long)]
    validate: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::ChainInfo(a) => (ExperimentKind::ChainInfo, a),
            Command::SgdRate(a) => (ExperimentKind::SgdRate, a),
            Command::SgdStability(a) => (ExperimentKind::SgdStability, a),
            Command::SgdGen(a) => (ExperimentKind::SgdGen, a),
            Command::SgdaRate(a) => (ExperimentKind::SgdaRate, a),
            Command::SgdaRisk(a) => (ExperimentKind::SgdaRisk, a),
            Command::NonconvexGradnorm(a) => (ExperimentKind::NonconvexGradnorm, a),
            Command::HpQuantiles(a) => (ExperimentKind::HpQuantiles, a),
            Command::Bounds(a) => (ExperimentKind::Bounds, a),
        }
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> mcsgm::Result<bool> {
    let mut cfg = ExperimentConfig::load(&args.config)?.with_kind(kind)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output = Some(out);
    }
    if args.validate {
        let points = cfg.validate()?;
        println!("config ok: {} ({} grid points)", kind.name(), points.len());
        println!("config-sha256 {}", cfg.hash()?);
        for p in &points {
            println!("n={} T={}", p.n, p.t);
        }
        return Ok(true);
    }
    cfg.validate_structure()?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    let output = match args.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| mcsgm::Error::InvalidArgument(e.to_string()))?;
            pool.install(|| run_experiment(&cfg))?
        }
        None => run_experiment(&cfg)?,
    };
    write_outputs(&cfg, &output, &dir)?;
    match &output.failure {
        Some(msg) => {
            eprintln!("{msg}; partial results in {}", dir.display());
            Ok(false)
        }
        None => {
            println!(
                "wrote {} rows to {}",
                output.records.len(),
                dir.join("results.csv").display()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
