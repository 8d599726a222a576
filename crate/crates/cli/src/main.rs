use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ttfs::engine::{finite_diff_check, Graph};
use ttfs::io::{
    load_checkpoint, load_config, load_data_dir, save_checkpoint, write_dataset, Checkpoint,
    MANIFEST_FILE, TEST_FILE, TRAIN_FILE,
};
use ttfs::metrics::{run_report, timing_histograms, write_histogram_csv};
use ttfs::training::{train, write_history_csv, TrainConfig};
use ttfs::wave::{generate_dataset, WaveConfig};
use ttfs::{Exec, Shape3};

/// Gradient checks fail above this relative error.
const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(
    name = "ttfs",
    version,
    about = "Train and evaluate time-to-first-spike networks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Seed for initialization, shuffling and dataset splits.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch-parallel work (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the wave equation and write a source-localization dataset.
    GenWave {
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 3)]
        zones: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 10)]
        border: usize,
        #[arg(long, default_value_t = 0.5)]
        cfl: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network; writes checkpoint.ttfsck and history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "TTFS_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print accuracy, latency, spike rates and energy as one JSON line.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, env = "TTFS_DATA_DIR")]
        data: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on a fresh model.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        params: usize,
        /// Synthetic batch size.
        #[arg(long, default_value_t = 4)]
        batch: usize,
    },
    /// Print the E_ANN / E_SNN energy estimate as one JSON line.
    EnergyReport {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, env = "TTFS_DATA_DIR")]
        data: PathBuf,
    },
    /// Write spike-timing histograms, one CSV per layer or block.
    Histograms {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, env = "TTFS_DATA_DIR")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
}

enum Failure {
    Gradcheck,
    Error(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gradcheck) => ExitCode::from(3),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn setup_workers(workers: Option<usize>) -> Result<Exec> {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .context("configuring worker pool")?;
        }
        Ok(Exec::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(Exec::Sequential)
    }
}

fn load_graph(path: &Path) -> Result<Graph> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ck.to_graph()?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = setup_workers(cli.common.workers)?;
    let seed = cli.common.seed;
    match cli.cmd {
        Cmd::GenWave {
            grid,
            zones,
            steps,
            border,
            cfl,
            out,
        } => {
            let cfg = WaveConfig {
                n: grid,
                zones,
                n_steps: steps,
                border,
                cfl,
                ..WaveConfig::default()
            };
            let d = generate_dataset(&cfg, seed.unwrap_or(0), exec).map_err(anyhow::Error::from)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_dataset(&out.join(TRAIN_FILE), &d.train).map_err(anyhow::Error::from)?;
            write_dataset(&out.join(TEST_FILE), &d.test).map_err(anyhow::Error::from)?;
            fs::write(
                out.join(MANIFEST_FILE),
                serde_json::to_string_pretty(&d.manifest).context("manifest")?,
            )
            .context("writing manifest")?;
            println!(
                "{}",
                serde_json::to_string(&d.manifest).context("manifest")?
            );
        }
        Cmd::Train {
            config,
            data,
            out,
            epochs,
        } => {
            let mut cfg =
                load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let (train_set, test_set) = load_data_dir(&data)
                .with_context(|| format!("loading data from {}", data.display()))?;
            let outcome = train(&cfg, &train_set, &test_set, exec, |r, _| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  train {:.2}%  test {:.2}%  latency {:.3}",
                    r.epoch, r.loss_total, r.train_acc, r.test_acc, r.latency
                )
            })
            .map_err(anyhow::Error::from)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let ckpt = out.join("checkpoint.ttfsck");
            let ck = Checkpoint::from_graph(&outcome.graph, cfg.epochs, Some(&outcome.optimizer));
            save_checkpoint(&ckpt, &ck).map_err(anyhow::Error::from)?;
            let hist = out.join("history.csv");
            write_history_csv(
                BufWriter::new(File::create(&hist).context("creating history")?),
                &outcome.history,
            )
            .map_err(anyhow::Error::from)?;
            let last = outcome.history.last();
            println!(
                "{}",
                json!({
                    "checkpoint": ckpt,
                    "history": hist,
                    "epochs": cfg.epochs,
                    "test_acc": last.map(|r| r.test_acc),
                    "latency": last.map(|r| r.latency),
                })
            );
        }
        Cmd::Eval { ckpt, data } => {
            let g = load_graph(&ckpt)?;
            let (_, test) = load_data_dir(&data)
                .with_context(|| format!("loading data from {}", data.display()))?;
            let r = run_report(&g, &test, exec).map_err(anyhow::Error::from)?;
            println!("{}", serde_json::to_string(&r).context("report")?);
        }
        Cmd::EnergyReport { ckpt, data } => {
            let g = load_graph(&ckpt)?;
            let (_, test) = load_data_dir(&data)
                .with_context(|| format!("loading data from {}", data.display()))?;
            let r = run_report(&g, &test, exec).map_err(anyhow::Error::from)?;
            println!(
                "{}",
                json!({
                    "e_ann_pj": r.e_ann_pj,
                    "e_snn_pj": r.e_snn_pj,
                    "energy_ratio": r.energy_ratio,
                    "layers": r.layers,
                })
            );
        }
        Cmd::Histograms {
            ckpt,
            data,
            out,
            bins,
        } => {
            let g = load_graph(&ckpt)?;
            let (_, test) = load_data_dir(&data)
                .with_context(|| format!("loading data from {}", data.display()))?;
            let hists = timing_histograms(&g, &test, bins, exec).map_err(anyhow::Error::from)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut files = Vec::new();
            let mut layers: Vec<&str> = hists.iter().map(|h| h.layer.as_str()).collect();
            layers.dedup();
            for layer in layers {
                let path = out.join(format!("{layer}.csv"));
                let rows: Vec<_> = hists.iter().filter(|h| h.layer == layer).cloned().collect();
                write_histogram_csv(
                    BufWriter::new(File::create(&path).context("creating csv")?),
                    &rows,
                )
                .map_err(anyhow::Error::from)?;
                files.push(path);
            }
            println!("{}", json!({ "files": files }));
        }
        Cmd::Gradcheck {
            config,
            eps,
            params,
            batch,
        } => {
            let cfg: TrainConfig =
                load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            let input = cfg
                .input
                .map(|[c, h, w]| Shape3::new(c, h, w))
                .unwrap_or(Shape3::new(1, 28, 28));
            let classes = cfg.classes.unwrap_or(10);
            let model = cfg
                .resolve_model(input, classes)
                .map_err(anyhow::Error::from)?;
            let s = seed.unwrap_or(cfg.seed);
            let graph = Graph::build(&model, s).map_err(anyhow::Error::from)?;
            let (images, labels) = synthetic_batch(input, classes, batch.max(1), s);
            let r = finite_diff_check(&graph, &images, &labels, cfg.lambdas(), eps, params, s)
                .map_err(anyhow::Error::from)?;
            println!("{}", serde_json::to_string(&r).context("report")?);
            if r.max_rel_err.is_nan() || r.max_rel_err >= GRADCHECK_TOL {
                eprintln!(
                    "gradient check failed: max relative error {:.3e}",
                    r.max_rel_err
                );
                return Err(Failure::Gradcheck);
            }
        }
    }
    Ok(())
}

/// Deterministic pseudo-random images in `[0, 1)` (64-bit LCG).
fn synthetic_batch(
    input: Shape3,
    classes: usize,
    batch: usize,
    seed: u64,
) -> (Vec<f64>, Vec<usize>) {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let images = (0..batch * input.len())
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    (images, (0..batch).map(|i| i % classes).collect())
}
