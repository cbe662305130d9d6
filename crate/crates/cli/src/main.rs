use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use immpc::config::{Scenario, ScenarioConfig};
use immpc::design::design_report;
use immpc::sim::{run_with, RunOptions, RunReport};
use immpc::verify::{run_suite, SUITES};
use rayon::prelude::*;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "immpc", version, about = "Internal-model MPC: simulation, design checks and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write the trace CSV and report JSON for each.
    Simulate {
        /// Scenario file (repeatable).
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write the QP of the given step, as `t=10` or `10`.
        #[arg(long, value_parser = parse_dump)]
        dump_qp: Option<usize>,
        /// Scenarios run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replaces the noise seed of every scenario.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Print the filter, terminal cost and horizon checks for a scenario.
    Design {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a verification suite and print a JSON summary.
    Verify {
        /// One of theorem1, theorem2, velocity, oracle.
        suite: String,
    },
}

fn parse_dump(s: &str) -> Result<usize, String> {
    let v = s.strip_prefix("t=").unwrap_or(s);
    v.parse().map_err(|_| format!("expected `t=<step>`, got '{s}'"))
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_FAILURE, error: error.into() }
    }
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<Scenario> {
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    cfg.build().with_context(|| format!("building {}", path.display()))
}

fn write_outputs(sc: &Scenario, out: &Path, dump_at: Option<usize>) -> anyhow::Result<RunReport> {
    let name = &sc.config.name;
    let run = run_with(sc, &RunOptions { dump_qp_at: dump_at })?;
    let mut report = RunReport::new(sc, &run.log);
    let csv = out.join(format!("{name}.csv"));
    run.log.write_csv(BufWriter::new(fs::File::create(&csv)?), true)?;
    report.files.push(csv.display().to_string());
    if let Some(t) = dump_at {
        match &run.qp_dump {
            Some(qp) => {
                let path = out.join(format!("{name}.qp_t{t}.txt"));
                qp.write_dump(BufWriter::new(fs::File::create(&path)?))?;
                report.files.push(path.display().to_string());
            }
            None => log::warn!("{name}: step {t} is beyond the {} simulated steps; no QP written", run.log.records.len()),
        }
    }
    let path = out.join(format!("{name}.report.json"));
    report.files.push(path.display().to_string());
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn simulate(
    configs: &[PathBuf],
    out: &Path,
    dump_at: Option<usize>,
    jobs: usize,
    seed: Option<u64>,
) -> Result<bool, Failure> {
    let scenarios = configs.iter().map(|p| load(p, seed)).collect::<anyhow::Result<Vec<_>>>().map_err(Failure::config)?;
    let mut names: Vec<&str> = scenarios.iter().map(|s| s.config.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Failure::config(anyhow::anyhow!("two scenarios share the name '{}'", w[0])));
    }
    if jobs == 0 {
        return Err(Failure::config(anyhow::anyhow!("--jobs must be at least 1")));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(Failure::runtime)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(Failure::runtime)?;
    let reports: Vec<anyhow::Result<RunReport>> =
        pool.install(|| scenarios.par_iter().map(|sc| write_outputs(sc, out, dump_at)).collect());
    let mut all_passed = true;
    for (sc, rep) in scenarios.iter().zip(reports) {
        let rep = rep.with_context(|| format!("running {}", sc.config.name)).map_err(Failure::runtime)?;
        println!("{}: {} steps, hash {}", rep.scenario, rep.steps, rep.scenario_hash);
        println!("converged: {}", rep.converged);
        for a in &rep.assertions {
            println!("  [{}] {}: {}", if a.passed { "pass" } else { "FAIL" }, a.name, a.detail);
        }
        if rep.noisy {
            println!("  note: measurement noise enabled; convergence guarantees do not apply");
        }
        all_passed &= rep.passed;
    }
    Ok(all_passed)
}

fn design(config: &Path) -> Result<bool, Failure> {
    let sc = load(config, None).map_err(Failure::config)?;
    let rep = design_report(&sc.mpc).map_err(Failure::runtime)?;
    println!("{rep}");
    Ok(rep.passed())
}

fn verify(suite: &str) -> Result<bool, Failure> {
    if !SUITES.contains(&suite) {
        return Err(Failure::config(anyhow::anyhow!("unknown suite '{suite}' (expected one of {})", SUITES.join(", "))));
    }
    let rep = run_suite(suite).map_err(Failure::runtime)?;
    println!("{}", serde_json::to_string_pretty(&rep).map_err(Failure::runtime)?);
    Ok(rep.passed)
}

fn init_logging() -> anyhow::Result<()> {
    let level = std::env::var("IMMPC_LOG_LEVEL").unwrap_or_else(|_| "error".into());
    let filter = match level.to_ascii_lowercase().as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => bail!("IMMPC_LOG_LEVEL must be error, info or debug, got '{other}'"),
    };
    env_logger::Builder::new().filter_level(filter).init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let outcome = match &cli.command {
        Command::Simulate { config, out, dump_qp, jobs, seed_override } => {
            simulate(config, out, *dump_qp, *jobs, *seed_override)
        }
        Command::Design { config } => design(config),
        Command::Verify { suite } => verify(suite),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
