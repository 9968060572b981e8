use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use kamlab::{load_config, run, Command};

/// Weak KAM laboratory for time-periodic Lagrangians on the torus.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Critical value, minimizing cycle and occupation measure.
    Critical {
        /// Also run the subsolution test at c_est +- DELTA.
        #[arg(long)]
        bracket: Option<f64>,
    },
    /// Mather's alpha function on constant classes along the first axis.
    Alpha {
        #[arg(long, allow_hyphen_values = true)]
        h_min: f64,
        #[arg(long, allow_hyphen_values = true)]
        h_max: f64,
        #[arg(long)]
        h_steps: usize,
    },
    /// Potential and Peierls barrier from one node.
    Barrier {
        /// Source node as CELL,LAYER (flat cell index).
        #[arg(long)]
        source: String,
    },
    /// Aubry set, static classes and representatives.
    Aubry,
    /// Weak KAM solution from boundary values on the representatives.
    Solve {
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        forward: bool,
    },
    /// Verification report for a value function CSV.
    Verify {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        forward: bool,
    },
    /// Brute-force oracle checks on tiny lattices.
    Selftest,
}

fn parse_source(text: &str) -> Result<(usize, usize)> {
    let Some((cell, layer)) = text.split_once(',') else {
        bail!("--source expects CELL,LAYER, got {text:?}");
    };
    Ok((
        cell.trim().parse().context("source cell")?,
        layer.trim().parse().context("source layer")?,
    ))
}

fn execute(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring thread pool")?;
    }
    let loaded = load_config(&cli.config)?;
    let command = match cli.command {
        Cmd::Critical { bracket } => Command::Critical { bracket },
        Cmd::Alpha {
            h_min,
            h_max,
            h_steps,
        } => Command::Alpha {
            h_min,
            h_max,
            h_steps,
        },
        Cmd::Barrier { source } => {
            let (cell, layer) = parse_source(&source)?;
            Command::Barrier { cell, layer }
        }
        Cmd::Aubry => Command::Aubry,
        Cmd::Solve { boundary, forward } => Command::Solve { boundary, forward },
        Cmd::Verify { solution, forward } => Command::Verify { solution, forward },
        Cmd::Selftest => Command::Selftest,
    };
    let out_dir = loaded.output_dir();
    let outcome = run(&command, &loaded, &out_dir)?;
    for file in &outcome.manifest.outputs {
        println!("{}", out_dir.join(&file.name).display());
    }
    if !outcome.converged {
        let open: Vec<&str> = outcome
            .manifest
            .stages
            .iter()
            .filter(|s| !s.converged)
            .map(|s| s.name.as_str())
            .collect();
        eprintln!("warning: not converged: {}", open.join(", "));
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
