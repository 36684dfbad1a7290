//! `sthcss`: generate data, train, evaluate, inspect the sensor hypergraph
//! and sweep hyperparameters.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 I/O or
//! format error, 3 numerical or runtime failure.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sthcss_core::checkpoint::{self, Checkpoint};
use sthcss_core::data::{load_csv, synth_generate, write_csv, SensorSeries};
use sthcss_core::pipeline::{
    evaluate, hyperparameter_sweep, inspect_graph, prepare, ridge_baseline, run_experiment,
    sweep_csv, RunSpec, Split,
};
use sthcss_core::train::history_csv;
use sthcss_core::{Error, ErrorClass, Result};

use config::{parse_list, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "sthcss", version, about = "Spatio-temporal hypergraph soft sensor")]
struct Cli {
    /// Key-value configuration file (`key=value` per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multi-group sensor dataset as CSV.
    GenData {
        /// Comma-separated group sizes, e.g. 4,4,4.
        #[arg(long)]
        groups: Option<String>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// Output file (default: <out>/synthetic.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train on a CSV file; writes model.ckpt, history.csv and metrics.txt.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HyperArgs,
    },
    /// Recompute test metrics from a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Export the sensor hypergraph adjacency and data correlation.
    InspectGraph {
        #[command(flatten)]
        data: DataArgs,
        /// Take window, ratios and graph settings from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Hyperedge size override.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train and score every (kernel, mixers) grid point; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HyperArgs,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV (header row, one row per timestep).
    #[arg(long)]
    data: PathBuf,
    /// Target column name.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args, Debug, Default)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Mixer block count (for sweep: comma-separated grid).
    #[arg(long)]
    mixers: Option<String>,
    /// Kernel size (for sweep: comma-separated grid).
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    dilation: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Io => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for pair in &cli.set {
        cfg.apply_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn apply_hyper(cfg: &mut RunConfig, hp: &HyperArgs, grid_flags: bool) -> Result<()> {
    if let Some(v) = hp.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = hp.window {
        cfg.model.window = v;
    }
    if let Some(v) = hp.batch {
        cfg.train.batch_size = v;
    }
    if let Some(v) = hp.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = hp.dilation {
        cfg.model.dilation = v;
    }
    if !grid_flags {
        if let Some(v) = &hp.mixers {
            cfg.set("mixer_blocks", v)?;
        }
        if let Some(v) = &hp.kernel {
            cfg.set("kernel_size", v)?;
        }
    }
    Ok(())
}

fn echo(cfg: &RunConfig, command: &str) {
    info!("{command}: resolved configuration");
    for (k, v) in cfg.pairs() {
        info!("  {k}={v}");
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load(data: &DataArgs, target: &str) -> Result<SensorSeries> {
    let series = load_csv(&data.data, target)?;
    info!(
        "loaded {}: {} sensors, {} timesteps, target {:?}",
        data.data.display(),
        series.sensors(),
        series.len(),
        target
    );
    Ok(series)
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::GenData {
            groups,
            length,
            noise,
            output,
        } => {
            if let Some(g) = groups {
                cfg.set("groups", g)?;
                cfg.synth.sensors = cfg.synth.groups.iter().sum();
            }
            if let Some(t) = length {
                cfg.synth.length = *t;
            }
            if let Some(n) = noise {
                cfg.synth.noise_std = *n;
            }
            echo(&cfg, "gen-data");
            let series = synth_generate(&cfg.synth)?;
            let path = match output {
                Some(p) => p.clone(),
                None => {
                    ensure_dir(&cli.out)?;
                    cli.out.join("synthetic.csv")
                }
            };
            write_csv(&series, &path)?;
            println!(
                "wrote {}: D={} T={} groups={:?}",
                path.display(),
                series.sensors(),
                series.len(),
                cfg.synth.groups
            );
            Ok(0)
        }

        Command::Train { data, hp } => {
            apply_hyper(&mut cfg, hp, false)?;
            if let Some(t) = &data.target {
                cfg.set("target", t)?;
            }
            echo(&cfg, "train");
            let series = load(data, &cfg.target)?;
            let spec = cfg.run_spec(series.sensors());
            let exp = run_experiment(&series, &spec)?;
            ensure_dir(&cli.out)?;

            let mut metadata = BTreeMap::new();
            metadata.insert("target".to_string(), cfg.target.clone());
            metadata.insert("train_ratio".to_string(), cfg.ratios.train.to_string());
            metadata.insert("val_ratio".to_string(), cfg.ratios.val.to_string());
            metadata.insert("test_ratio".to_string(), cfg.ratios.test.to_string());
            metadata.insert("stride".to_string(), cfg.stride.to_string());
            metadata.insert("epochs".to_string(), cfg.train.epochs.to_string());
            metadata.insert("best_epoch".to_string(), exp.outcome.best_epoch.to_string());
            let ckpt = Checkpoint {
                model: exp.outcome.best.clone(),
                metadata,
            };
            let ckpt_path = cli.out.join("model.ckpt");
            checkpoint::save(&ckpt, &ckpt_path)?;
            write_file(&cli.out.join("history.csv"), &history_csv(&exp.outcome.history))?;
            write_file(&cli.out.join("metrics.txt"), &exp.test.to_key_values())?;

            let (_, ridge) = ridge_baseline(&exp.prepared, cfg.ridge_lambda, &cfg.target)?;
            println!("best epoch {} of {}", exp.outcome.best_epoch, cfg.train.epochs);
            println!("test: {}", exp.test);
            println!("ridge baseline (lambda {}): {}", cfg.ridge_lambda, ridge);
            println!("wrote {}", ckpt_path.display());
            Ok(0)
        }

        Command::Eval { checkpoint: path, data } => {
            let ckpt = checkpoint::load(path)?;
            for (k, v) in &ckpt.metadata {
                match k.as_str() {
                    "target" | "train_ratio" | "val_ratio" | "test_ratio" | "stride" => cfg.set(k, v)?,
                    _ => {}
                }
            }
            if let Some(t) = &data.target {
                cfg.set("target", t)?;
            }
            cfg.model = ckpt.model.config.clone();
            echo(&cfg, "eval");
            let series = load(data, &cfg.target)?;
            let spec = RunSpec {
                model: ckpt.model.config.clone(),
                train: cfg.train.clone(),
                ratios: cfg.ratios,
                stride: cfg.stride,
            };
            let prepared = prepare(&series, &spec)?;
            let report = evaluate(&ckpt.model, &prepared, Split::Test, &cfg.target)?;
            ensure_dir(&cli.out)?;
            write_file(&cli.out.join("eval_metrics.txt"), &report.to_key_values())?;
            println!("test: {report}");
            Ok(0)
        }

        Command::InspectGraph { data, checkpoint: ckpt_path, k } => {
            if let Some(p) = ckpt_path {
                let ckpt = checkpoint::load(p)?;
                cfg.model = ckpt.model.config.clone();
                for (key, v) in &ckpt.metadata {
                    if matches!(key.as_str(), "target" | "train_ratio" | "val_ratio" | "test_ratio") {
                        cfg.set(key, v)?;
                    }
                }
            }
            if let Some(t) = &data.target {
                cfg.set("target", t)?;
            }
            if let Some(k) = k {
                cfg.model.knn_k = *k;
            }
            echo(&cfg, "inspect-graph");
            let series = load(data, &cfg.target)?;
            let report = inspect_graph(&series, &cfg.run_spec(series.sensors()), &cli.out)?;
            println!("alignment={}", report.alignment_string());
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }

        Command::Sweep { data, hp } => {
            apply_hyper(&mut cfg, hp, true)?;
            if let Some(t) = &data.target {
                cfg.set("target", t)?;
            }
            let kernel_list = match &hp.kernel {
                Some(s) => parse_list("--kernel", s)?,
                None => vec![cfg.model.kernel_size],
            };
            let mixer_list = match &hp.mixers {
                Some(s) => parse_list("--mixers", s)?,
                None => vec![cfg.model.mixer_blocks],
            };
            echo(&cfg, "sweep");
            info!("  grid kernel_size={kernel_list:?} mixer_blocks={mixer_list:?}");
            let series = load(data, &cfg.target)?;
            let rows = hyperparameter_sweep(&series, &cfg.run_spec(series.sensors()), &kernel_list, &mixer_list)?;
            ensure_dir(&cli.out)?;
            let path = cli.out.join("sweep.csv");
            let csv = sweep_csv(&rows);
            write_file(&path, &csv)?;
            print!("{csv}");
            println!("wrote {}", path.display());
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            if failed == rows.len() {
                eprintln!("error: all {failed} sweep points failed");
                return Ok(3);
            }
            Ok(0)
        }
    }
}
