//! `dynrcm`: config-driven experiments on random walks among time-dependent
//! random conductances.
//!
//! Every run writes `report.json` (deterministic for a given config and seed)
//! and `manifest.json` (config hash, seeds, versions, outputs, timing) into
//! the output directory. Exit status: 0 pass, 2 assertion failure, 1 usage
//! or configuration error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dynrcm::moser::InequalityKind;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use commands::Outcome;
use config::{Loaded, Overrides};

#[derive(Parser)]
#[command(name = "dynrcm", version, about = "Random walks among dynamic random conductances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Environment sampling.
    Env {
        #[command(subcommand)]
        cmd: EnvCmd,
    },
    /// Walk simulation.
    Walk {
        #[command(subcommand)]
        cmd: WalkCmd,
    },
    /// Corrector solves and diagnostics.
    Corrector {
        #[command(subcommand)]
        cmd: CorrectorCmd,
    },
    /// Inequality checks.
    Verify {
        #[command(subcommand)]
        cmd: VerifyCmd,
    },
    /// Invariance-principle experiments.
    Qfclt {
        #[command(subcommand)]
        cmd: QfcltCmd,
    },
    /// Summarize the outputs of earlier runs.
    Report(Common),
}

#[derive(Subcommand)]
enum EnvCmd {
    Sample(Common),
}

#[derive(Subcommand)]
enum WalkCmd {
    Simulate(Common),
}

#[derive(Subcommand)]
enum CorrectorCmd {
    Solve(Common),
    Sublinearity(Common),
}

#[derive(Subcommand)]
enum VerifyCmd {
    Poincare(Common),
    Sobolev(Common),
    Interp(Common),
    Energy(Common),
    Maximal(Common),
    Appendix(Common),
}

#[derive(Subcommand)]
enum QfcltCmd {
    Run(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "dynrcm-out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the `tol` key.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the `trials` key.
    #[arg(long)]
    trials: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            tol: self.tol,
            trials: self.trials,
        }
    }

    fn load<T: DeserializeOwned + Serialize>(&self) -> Result<Loaded<T>> {
        match &self.config {
            Some(p) => config::load(p, &self.overrides()),
            None => config::parse("", &self.overrides()).context("no --config given"),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config_path: Option<String>,
    config_hash: &'a str,
    effective_config: &'a str,
    seeds: &'a [u64],
    threads: Option<usize>,
    outputs: Vec<String>,
    budget: &'a serde_json::Value,
    wall_clock_seconds: f64,
    pass: bool,
}

/// Loads the config, runs `f` inside the thread pool and writes the report
/// and manifest.
fn execute<T, F>(name: &str, common: &Common, f: F) -> Result<bool>
where
    T: DeserializeOwned + Serialize,
    F: FnOnce(&T, &Path) -> Result<Outcome> + Send,
    T: Sync,
{
    let loaded: Loaded<T> = common.load()?;
    let out = &common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let start = Instant::now();
    let outcome = pool.install(|| f(&loaded.value, out))?;
    let elapsed = start.elapsed().as_secs_f64();

    let report = json!({ "command": name, "pass": outcome.pass, "result": outcome.result });
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut outputs = vec!["report.json".to_string()];
    outputs.extend(outcome.artifacts.iter().cloned());
    let manifest = Manifest {
        tool: "dynrcm",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        config_path: common.config.as_ref().map(|p| p.display().to_string()),
        config_hash: &loaded.hash,
        effective_config: &loaded.effective,
        seeds: &outcome.seeds,
        threads: common.threads,
        outputs,
        budget: &outcome.budget,
        wall_clock_seconds: elapsed,
        pass: outcome.pass,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("{name}: {} ({})", if outcome.pass { "pass" } else { "FAIL" }, out.join("report.json").display());
    Ok(outcome.pass)
}

fn trend(kind: InequalityKind, name: &str, c: &Common) -> Result<bool> {
    execute(name, c, |cfg, out| commands::verify_trend(kind, cfg, out))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Env { cmd: EnvCmd::Sample(c) } => execute("env sample", &c, commands::env_sample),
        Command::Walk { cmd: WalkCmd::Simulate(c) } => execute("walk simulate", &c, commands::walk_simulate),
        Command::Corrector { cmd: CorrectorCmd::Solve(c) } => execute("corrector solve", &c, commands::corrector_solve),
        Command::Corrector { cmd: CorrectorCmd::Sublinearity(c) } => execute("corrector sublinearity", &c, commands::corrector_sublinearity),
        Command::Verify { cmd } => match cmd {
            VerifyCmd::Poincare(c) => trend(InequalityKind::Poincare, "verify poincare", &c),
            VerifyCmd::Sobolev(c) => trend(InequalityKind::Sobolev, "verify sobolev", &c),
            VerifyCmd::Energy(c) => trend(InequalityKind::Energy, "verify energy", &c),
            VerifyCmd::Maximal(c) => trend(InequalityKind::Maximal, "verify maximal", &c),
            VerifyCmd::Interp(c) => execute("verify interp", &c, |cfg, _| commands::verify_interp(cfg)),
            VerifyCmd::Appendix(c) => execute("verify appendix", &c, |cfg, _| commands::verify_appendix(cfg)),
        },
        Command::Qfclt { cmd: QfcltCmd::Run(c) } => execute("qfclt run", &c, commands::qfclt_run),
        Command::Report(c) => {
            let base = c
                .config
                .as_ref()
                .and_then(|p| p.parent())
                .map(Path::to_path_buf)
                .unwrap_or_default();
            execute("report", &c, |cfg, out| commands::report(cfg, &base, out))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
