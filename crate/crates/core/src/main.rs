use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use ris_align::config::{self, ExperimentConfig, OutputFormat, OutputRow, Overrides, CONFIG_DIALECT, FORMAT_VERSION};

/// Measurement-only RIS phase alignment experiments.
///
/// Worker threads follow RAYON_NUM_THREADS; results do not depend on it.
#[derive(Parser)]
#[command(name = "ris-align", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and list every problem found.
    Validate { config: PathBuf },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    config_dialect: &'a str,
    crate_version: &'a str,
    started_at: String,
    wall_seconds: f64,
    threads: usize,
    experiment: &'a str,
    seed: u64,
    trials: usize,
    rows: usize,
    config_path: String,
    effective_config: String,
}

fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ExitCode> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(ExitCode::from(EXIT_CONFIG));
        }
    };
    config::build(&text, overrides).map_err(|diags| {
        eprintln!("error: {} problem(s) in {}", diags.len(), path.display());
        for d in &diags {
            eprintln!("  {d}");
        }
        ExitCode::from(EXIT_CONFIG)
    })
}

fn render(rows: &[OutputRow], format: OutputFormat) -> anyhow::Result<Vec<u8>> {
    Ok(match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            w.into_inner().context("flushing CSV")?
        }
        OutputFormat::Json => {
            let mut v = serde_json::to_vec_pretty(rows)?;
            v.push(b'\n');
            v
        }
    })
}

/// Writes every file or none: each goes to a temp name first and is renamed
/// once all of them were written.
fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut staged = Vec::new();
    let result = (|| -> anyhow::Result<()> {
        for (name, bytes) in files {
            let tmp = dir.join(format!(".{name}.partial"));
            staged.push(tmp.clone());
            fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        }
        for ((name, _), tmp) in files.iter().zip(&staged) {
            fs::rename(tmp, dir.join(name)).with_context(|| format!("renaming into {name}"))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for tmp in &staged {
            let _ = fs::remove_file(tmp);
        }
    }
    result
}

fn run(path: &Path, overrides: Overrides) -> ExitCode {
    let cfg = match load(path, &overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let outcome = (|| -> anyhow::Result<usize> {
        let rows = config::execute(&cfg.plan)?;
        let wall_seconds = clock.elapsed().as_secs_f64();
        let name = match cfg.format {
            OutputFormat::Csv => format!("{}.csv", cfg.experiment),
            OutputFormat::Json => format!("{}.json", cfg.experiment),
        };
        let body = render(&rows, cfg.format)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config_dialect: CONFIG_DIALECT,
            crate_version: env!("CARGO_PKG_VERSION"),
            started_at,
            wall_seconds,
            threads: rayon::current_num_threads(),
            experiment: &cfg.experiment,
            seed: cfg.seed,
            trials: cfg.trials,
            rows: rows.len(),
            config_path: path.display().to_string(),
            effective_config: toml::to_string(&cfg.raw)?,
        };
        let mut manifest = serde_json::to_vec_pretty(&manifest)?;
        manifest.push(b'\n');
        write_all(Path::new(&cfg.output_dir), &[(&name, body), ("manifest.json", manifest)])?;
        Ok(rows.len())
    })();
    match outcome {
        Ok(n) => {
            eprintln!(
                "{}: wrote {n} rows to {} in {:.2}s",
                cfg.experiment,
                cfg.output_dir,
                clock.elapsed().as_secs_f64()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, trials, out } => run(
            &config,
            Overrides {
                seed,
                trials,
                output_dir: out.map(|p| p.display().to_string()),
            },
        ),
        Command::Validate { config } => match load(&config, &Overrides::default()) {
            Ok(cfg) => {
                println!("ok: {} experiment, seed {}, {} trials", cfg.experiment, cfg.seed, cfg.trials);
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
    }
}
