use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use replica_lab::estimators::{fds_identity_check, reciprocal_poly, reciprocal_poly_bound, FdsObservable};
use replica_lab::harness::{exit_code, oracle_gate, run_experiment, write_report, ExperimentConfig, GateReport};
use replica_lab::models::{DisorderSample, ModelSpec};
use replica_lab::par::with_threads;
use replica_lab::perturbation::{PerturbationIndex, TruncationPolicy};
use replica_lab::rng::SeedLineage;
use replica_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "replica-lab", version, about = "Replica Monte Carlo sweeps for disordered Gibbs measures")]
struct Cli {
    /// Overrides the master seed of the configuration.
    #[arg(long, env = "REPLICA_LAB_SEED", global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "REPLICA_LAB_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quick invariant checks against the exact oracles.
    Selftest,
    /// Sampler-versus-oracle gate for a configuration.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Runs or resumes a sweep.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `output` from the config, else `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the oracle gate.
        #[arg(long)]
        no_gate: bool,
    },
    /// Summary tables (and charts) from a finished run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        svg: bool,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn print_gate(report: &GateReport) {
    println!("oracle gate at N = {}", report.n);
    for c in &report.checks {
        println!(
            "  {:<5} {:<22} estimate {:>12.6} oracle {:>12.6} tolerance {:.2e}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.estimate,
            c.target,
            c.tolerance
        );
    }
    if let Some(d) = &report.diagnostic {
        println!("  FAIL  diagnostic: {d}");
    }
}

fn gate(config: &ExperimentConfig) -> Result<()> {
    let report = oracle_gate(config)?;
    print_gate(&report);
    match report.failure() {
        Some(f) => Err(Error::Diagnostic(format!("oracle gate: {f}"))),
        None => Ok(()),
    }
}

fn selftest() -> Result<()> {
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{:<5} {name}", if ok { "ok" } else { "FAIL" });
        failures += usize::from(!ok);
    };

    let lineage = SeedLineage::new(1);
    let spec = ModelSpec::RandomField { field_std: 1.0 };
    let mut worst: f64 = 0.0;
    for s in [0.5, 1.0, 2.0] {
        let disorder = DisorderSample::draw(&spec, 2, s, 1.0, &TruncationPolicy::default(), &lineage)?;
        for exps in [vec![0], vec![1], vec![0, 1]] {
            let index = PerturbationIndex::new(exps)?;
            for (f, n) in [(FdsObservable::One, 1), (FdsObservable::Spin1, 1), (FdsObservable::Spin1, 2)] {
                worst = worst.max(fds_identity_check(&disorder, 0.5, &index, f, n, s)?.gap);
            }
        }
    }
    check(&format!("exact Poisson identity, worst gap {worst:.1e}"), worst <= 1e-6);

    let mut violations = 0;
    for r in 0..=20 {
        for j in 0..1000 {
            let x = (-2.0f64).exp() + (1.0 - (-2.0f64).exp()) * j as f64 / 1000.0;
            if (reciprocal_poly(x, r)? - 1.0 / x).abs() > reciprocal_poly_bound(r) {
                violations += 1;
            }
        }
    }
    check("reciprocal polynomial bound", violations == 0);

    let mut config = ExperimentConfig::from_toml(
        "experiment_id = \"selftest\"\nn_grid = [4]\nn_disorder = 2\nseed = 3\n[model]\nfamily = \"zero\"\n[mcmc]\nsamples = 400\n",
    )?;
    config.chains = 4;
    let report = oracle_gate(&config)?;
    check("uniform target against oracle", report.passed());

    if failures > 0 {
        return Err(Error::Diagnostic(format!("{failures} self-test check(s) failed")));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Selftest => selftest(),
        Command::OracleCheck { config } => gate(&load(&config, cli.seed)?),
        Command::Run { config, out, no_gate } => {
            let config = load(&config, cli.seed)?;
            if !no_gate {
                gate(&config)?;
            }
            let dir = out
                .or_else(|| config.output.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let outcome = run_experiment(&config, &dir)?;
            println!(
                "{} cells run, {} resumed, {} rows -> {}",
                outcome.cells_run,
                outcome.cells_resumed,
                outcome.rows.len(),
                outcome.results.display()
            );
            Ok(())
        }
        Command::Report { input, svg } => {
            let out = write_report(&input, svg)?;
            println!("{}", out.summary.display());
            for p in out.tables.iter().chain(&out.charts) {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads;
    let result = match threads {
        Some(t) => with_threads(t, || dispatch(cli)),
        None => dispatch(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
