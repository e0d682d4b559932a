//! `quenched-lsv run <config>`: configuration-driven experiments on random
//! compositions of LSV maps.

mod cache;
mod config;
mod error;
mod experiments;
mod expr;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{error, info, warn};
use serde_json::json;
use sha2::{Digest, Sha256};

use qlsv_core::Verdict;

use crate::cache::{write_atomic, DiskCache};
use crate::config::{Experiment, RawConfig};
use crate::error::{CliError, CliResult, EXIT_NUMERIC};

#[derive(Parser)]
#[command(name = "quenched-lsv", version, about = "Numerical experiments for quenched random LSV maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides rng.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides out.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides cache.dir.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn configure_threads() {
    let Ok(v) = std::env::var("QLSV_THREADS") else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                warn!("cannot size the thread pool: {e}");
            }
        }
        _ => warn!("ignoring QLSV_THREADS={v:?}: expected a positive integer"),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let path = dir.join(name);
    write_atomic(&path, bytes).map_err(|e| CliError::io(path, e))
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, cache: Option<PathBuf>) -> CliResult<Verdict> {
    let started = Instant::now();
    let exp = Experiment::resolve(RawConfig::load(config)?, seed, out, cache)?;
    info!(
        "{} experiment, seed {}, N = {}, output in {}",
        exp.kind.as_str(),
        exp.seed,
        exp.grid.n(),
        exp.out_dir.display()
    );
    std::fs::create_dir_all(&exp.out_dir).map_err(|e| CliError::io(&exp.out_dir, e))?;
    let cache = DiskCache::open(exp.cache_dir.as_deref());
    let outcome = experiments::run(&exp, &cache)?;

    let mut files = outcome.files.clone();
    files.push(("summary.json".into(), experiments::summary_file(exp.kind, &outcome)));
    let mut checksums = serde_json::Map::new();
    for (name, bytes) in &files {
        write_output(&exp.out_dir, name, bytes)?;
        checksums.insert(name.clone(), json!(sha256_hex(bytes)));
    }
    let manifest = json!({
        "config_hash": exp.config_hash(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": exp.seed,
        "kind": exp.kind.as_str(),
        "verdict": outcome.label,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "outputs": checksums,
        "cache": {
            "dir": cache.dir().map(|d| d.display().to_string()),
            "counts": cache.stats.counts(),
        },
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_output(&exp.out_dir, "manifest.json", &bytes)?;
    info!("verdict {} after {:.1} s", outcome.label, started.elapsed().as_secs_f64());
    println!("{}: {}", exp.kind.as_str(), outcome.label);
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            cache,
        } => run(&config, seed, out, cache),
    };
    match result {
        Ok(Verdict::Fail) => ExitCode::from(EXIT_NUMERIC),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
