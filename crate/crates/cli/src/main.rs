//! Command-line front end: train, eval, synth, ablate, robust, and
//! bench-scaling. Exit codes: 0 success, 1 configuration error, 2 data
//! error, 3 numeric divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fldmamba_cli::checkpoint::{load_checkpoint, save_checkpoint};
use fldmamba_cli::config::{AppConfig, DataSource};
use fldmamba_cli::csvio::save_csv;
use fldmamba_cli::harness::{ablate, bench_scaling, robustness};
use fldmamba_cli::train::{eval_checkpoint, load_dataset, train_loop};
use fldmamba_cli::{config_error, data_error, CliError};

#[derive(Parser)]
#[command(
    name = "fldmamba",
    version,
    about = "Frequency-aware state-space forecaster for multivariate series"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train from a config file; writes checkpoint.fldm and report.txt.
    Train {
        /// Flat key = value config file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if absent).
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split of a CSV dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Must equal the horizon the checkpoint was trained with.
        #[arg(long)]
        horizon: usize,
    },
    /// Generate a synthetic series CSV from a spec file of synth.* keys.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model plus each listed single-branch ablation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of: ft,fm,ma,rbf,ilt.
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<String>,
    },
    /// Compare noise degradation with and without input smoothing.
    Robust {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated noise levels in [0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
    },
    /// Time one forward pass per lookback length (median of 20).
    BenchScaling {
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_config(path: &Path) -> Result<AppConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    AppConfig::parse(&text)
}

fn print_metrics(prefix: &str, m: &fldmamba_core::metrics::Metrics) {
    println!("{prefix}.mse = {}", m.mse);
    println!("{prefix}.mae = {}", m.mae);
    match m.pearson {
        Some(r) => println!("{prefix}.pearson = {r}"),
        None => println!("{prefix}.pearson = undefined"),
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Train { config, seed, out } => {
            let mut app = read_config(&config)?;
            if let Some(s) = seed {
                app.train.seed = s;
            }
            let ds = load_dataset(&app)?;
            let run = train_loop(&app, &ds)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| data_error(format!("{}: {e}", out.display())))?;
            let ck_path = out.join("checkpoint.fldm");
            save_checkpoint(&ck_path, &run.checkpoint)?;
            let report_path = out.join("report.txt");
            std::fs::write(&report_path, run.report.to_text())
                .map_err(|e| data_error(format!("{}: {e}", report_path.display())))?;
            print!("{}", run.report.to_text());
            println!("checkpoint = {}", ck_path.display());
            println!("report = {}", report_path.display());
            Ok(())
        }
        Cmd::Eval {
            checkpoint,
            dataset,
            horizon,
        } => {
            let cp = load_checkpoint(&checkpoint)?;
            let o = eval_checkpoint(&cp, &dataset, horizon)?;
            println!("dataset = {}", o.dataset);
            println!("rows = {}", o.rows);
            println!("variates = {}", o.variates);
            print_metrics("test", &o.test);
            for (j, m) in o.horizon.iter().enumerate() {
                print_metrics(&format!("horizon.{}", j + 1), m);
            }
            Ok(())
        }
        Cmd::Synth { spec, out } => {
            let app = read_config(&spec)?;
            if !matches!(app.data.source, DataSource::Synth(_)) {
                return Err(config_error(
                    "a synth spec must use synth.* keys, not data.path",
                ));
            }
            let ds = load_dataset(&app)?;
            save_csv(&out, &ds)?;
            println!(
                "wrote {} rows x {} variates to {}",
                ds.len(),
                ds.n_variates(),
                out.display()
            );
            Ok(())
        }
        Cmd::Ablate { config, variants } => {
            let app = read_config(&config)?;
            let outcome = ablate(&app, &variants)?;
            println!("data_hash = {:#018x}", outcome.data_hash);
            println!(
                "{:<12} {:>14} {:>14} {:>10} {:>7}",
                "variant", "val_mse", "test_mse", "params", "epochs"
            );
            for r in &outcome.rows {
                println!(
                    "{:<12} {:>14.6} {:>14.6} {:>10} {:>7}",
                    r.variant, r.val_mse, r.test_mse, r.n_params, r.epochs_run
                );
            }
            Ok(())
        }
        Cmd::Robust { config, levels } => {
            let app = read_config(&config)?;
            let o = robustness(&app, &levels)?;
            println!(
                "clean_mse: full = {}, without_smoothing = {}",
                o.clean_full, o.clean_worbf
            );
            println!(
                "{:>6} {:>14} {:>14} {:>14} {:>14}",
                "level", "full_mse", "full_delta", "worbf_mse", "worbf_delta"
            );
            for r in &o.rows {
                println!(
                    "{:>6} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
                    r.level, r.full_mse, r.full_delta, r.worbf_mse, r.worbf_delta
                );
            }
            Ok(())
        }
        Cmd::BenchScaling { lengths } => {
            let rows = bench_scaling(&lengths)?;
            println!("{:>8} {:>16} {:>8}", "length", "median_seconds", "ratio");
            for r in &rows {
                match r.ratio_vs_prev {
                    Some(ratio) => println!(
                        "{:>8} {:>16.6} {:>8.3}",
                        r.length, r.median_seconds, ratio
                    ),
                    None => println!("{:>8} {:>16.6} {:>8}", r.length, r.median_seconds, "-"),
                }
            }
            Ok(())
        }
    }
}
