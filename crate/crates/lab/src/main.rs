use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use holderlab::{rerun, run, with_workers, workers_from_env, Config, LabError, Registry, RunSummary};

/// Monte Carlo experiments for local Hölder densities of 1D SDEs.
///
/// Exit status: 0 when every check passes, 2 when a check fails, 1 on errors.
/// The worker count is read from LAB_WORKERS.
#[derive(Parser)]
#[command(name = "lab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Write outputs here instead of the configured outdir.
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
    /// List the registered scenarios.
    List {
        /// Print the full definitions as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-run a manifest and compare output digests.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
}

fn report(s: &RunSummary) {
    let m = &s.manifest;
    println!("experiment {} on scenario `{}`", m.experiment, m.scenario.name);
    for c in &m.checks {
        println!("  {}", c.line());
    }
    println!(
        "{} outputs in {} ({} workers, {:.2}s)",
        m.outputs.len(),
        s.outdir.display(),
        m.workers,
        m.wall_clock_s
    );
}

fn main_inner(cli: Cli) -> Result<bool, LabError> {
    match cli.cmd {
        Cmd::List { json } => {
            let reg = Registry::default();
            if json {
                let all: Vec<_> = reg.iter().collect();
                println!("{}", serde_json::to_string_pretty(&all)?);
            } else {
                for s in reg.iter() {
                    let oracle = if s.oracle.is_some() { " [oracle]" } else { "" };
                    println!("{:<12} {}{oracle}", s.name, s.description);
                }
            }
            Ok(true)
        }
        Cmd::Run { config, outdir } => {
            let cfg = Config::load(&config)?;
            let workers = workers_from_env()?;
            let s = with_workers(workers, || run(&cfg, &mut Registry::default(), outdir.as_deref()))??;
            report(&s);
            Ok(s.pass())
        }
        Cmd::Rerun { manifest, outdir } => {
            let workers = workers_from_env()?;
            let r = with_workers(workers, || rerun(&manifest, outdir.as_deref()))??;
            report(&r.run);
            if !r.code_digest_matches {
                println!("note: code digest differs from the recorded run");
            }
            for (file, old, new) in &r.mismatches {
                println!("  MISMATCH {file}: recorded {old}, now {new}");
            }
            if r.reproduced() {
                println!("all recorded outputs reproduced");
            }
            Ok(r.run.pass() && r.reproduced())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
