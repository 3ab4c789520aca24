//! Command-line front end: config-driven training with the topographic
//! penalty, checkpoint evaluation, tau sweeps, compression curves,
//! selectivity maps, and integration-window fits.
//!
//! All outputs are plain CSV and byte-deterministic for a given config and
//! seed. Exit codes: 0 success, 2 config error, 3 numeric/training
//! failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use topograd::checkpoint::{self, MetricsSnapshot};
use topograd::compress::{compression_curve, curve_csv, CompressionMethod};
use topograd::fit::{fit_integration_window, read_theta_csv};
use topograd::train::{self, map_csv, TrainConfig};
use topograd::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "topograd", version, about = "Topographic toy-model training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Training config (TOML). Optional for verbs that read a checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the topographic loss scale.
    #[arg(long)]
    tau: Option<f64>,
    /// Override the run seed (also reseeds the synthetic task).
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory: `train` writes the checkpoint here, later verbs
    /// read it back and add their outputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint + step log into --out.
    Train(RunArgs),
    /// Evaluate the checkpoint in --out on its task.
    Eval(RunArgs),
    /// Train/evaluate/measure once per tau (--levels, default the
    /// standard grid) and write sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Tau values for the sweep.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Distance bins for the smoothness curve.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// L1-prune the checkpoint's penalized layers at each level
    /// (fraction of weights removed) and write prune_curve.csv.
    PruneCurve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Downsample the checkpoint's penalized layers at each level
    /// (fraction of sheet area removed) and write downsample_curve.csv.
    DownsampleCurve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Per-layer selectivity t-maps for class-based stimulus groups,
    /// plus structural-similarity matrices.
    Maps(RunArgs),
    /// Fit the power-law/exponential mixture to a theta series CSV
    /// (header `delta,theta`).
    FitWindow {
        /// Input CSV path.
        input: PathBuf,
        /// Optional directory for fit_window.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Io(_) | Error::Checkpoint(_) => 4,
                _ => 3,
            })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(run) => cmd_train(run),
        Command::Eval(run) => cmd_eval(run),
        Command::Sweep { run, levels, bins } => cmd_sweep(run, levels, bins),
        Command::PruneCurve { run, levels } => {
            cmd_curve(run, CompressionMethod::Prune, levels, "prune_curve.csv")
        }
        Command::DownsampleCurve { run, levels } => {
            cmd_curve(run, CompressionMethod::Downsample, levels, "downsample_curve.csv")
        }
        Command::Maps(run) => cmd_maps(run),
        Command::FitWindow { input, out } => cmd_fit_window(&input, out.as_deref()),
    }
}

fn load_config(run: &RunArgs) -> Result<TrainConfig> {
    let path = run
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = TrainConfig::load(path)?;
    if let Some(tau) = run.tau {
        cfg.topo.tau = tau;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
        cfg.dataset.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Checkpoint plus the config to use for downstream measurement: the
/// checkpoint's own config unless --config overrides it.
fn load_run(run: &RunArgs) -> Result<(topograd::model::Model, TrainConfig)> {
    let loaded = checkpoint::load(&run.out.join("checkpoint"))?;
    let cfg = match &run.config {
        Some(path) => {
            let mut cfg = TrainConfig::load(path)?;
            if let Some(tau) = run.tau {
                cfg.topo.tau = tau;
            }
            cfg
        }
        None => loaded.config,
    };
    Ok((loaded.model, cfg))
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    checkpoint::write_atomic(&dir.join(name), text.as_bytes())
}

fn cmd_train(run: RunArgs) -> Result<()> {
    let cfg = load_config(&run)?;
    let outcome = train::train(&cfg)?;
    let last = outcome.log.steps.last().expect("steps ≥ 1");
    let metrics = MetricsSnapshot {
        final_training_loss: Some(last.training_loss),
        final_topo_losses: outcome
            .log
            .target_layers
            .iter()
            .cloned()
            .zip(last.topo_losses.iter().copied())
            .collect(),
    };
    checkpoint::save(&run.out.join("checkpoint"), &outcome.model, &cfg, &metrics)?;
    write_out(&run.out, "train_log.csv", &outcome.log.to_csv())?;
    println!("final_training_loss,{}", last.training_loss);
    for (name, v) in &metrics.final_topo_losses {
        println!("final_topo_{name},{v}");
    }
    Ok(())
}

fn cmd_eval(run: RunArgs) -> Result<()> {
    let (model, cfg) = load_run(&run)?;
    let accuracy = model.evaluate(&cfg.dataset)?;
    write_out(&run.out, "eval.csv", &format!("accuracy\n{accuracy}\n"))?;
    println!("accuracy,{accuracy}");
    Ok(())
}

const DEFAULT_TAU_GRID: [f64; 6] = [0.0, 0.5, 1.0, 5.0, 10.0, 50.0];

fn cmd_sweep(run: RunArgs, levels: Option<Vec<f64>>, bins: usize) -> Result<()> {
    let cfg = load_config(&run)?;
    let taus = levels.unwrap_or_else(|| DEFAULT_TAU_GRID.to_vec());
    let outcome = train::sweep(&cfg, &taus, bins)?;
    for (tau, err) in &outcome.failures {
        eprintln!("sweep: tau {tau} failed: {err}");
    }
    let csv = outcome.to_csv();
    write_out(&run.out, "sweep.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

const DEFAULT_LEVELS: [f64; 5] = [0.0, 0.2, 0.5, 0.8, 0.9];

fn cmd_curve(
    run: RunArgs,
    method: CompressionMethod,
    levels: Option<Vec<f64>>,
    filename: &str,
) -> Result<()> {
    let (model, cfg) = load_run(&run)?;
    let levels = levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let rows = compression_curve(&model, &cfg.dataset, method, &levels)?;
    let csv = curve_csv(method, &rows);
    write_out(&run.out, filename, &csv)?;
    print!("{csv}");
    Ok(())
}

/// Stimulus groups for `maps`: the task's evaluation split partitioned by
/// class label.
fn class_groups(cfg: &TrainConfig) -> Vec<(String, Tensor)> {
    let (x, labels) = cfg.dataset.eval_set();
    let dim = cfg.dataset.input_dim;
    (0..cfg.dataset.n_classes)
        .map(|c| {
            let rows: Vec<usize> =
                (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let mut data = Vec::with_capacity(rows.len() * dim);
            for &i in &rows {
                data.extend_from_slice(&x.data()[i * dim..(i + 1) * dim]);
            }
            (format!("class{c}"), Tensor::new(vec![rows.len(), dim], data).unwrap())
        })
        .collect()
}

fn cmd_maps(run: RunArgs) -> Result<()> {
    let (model, cfg) = load_run(&run)?;
    let groups = class_groups(&cfg);
    let maps = train::report_maps(&model, &groups)?;
    let dir = run.out.join("maps");
    for lm in &maps.layers {
        for (g, map) in lm.groups.iter().zip(&lm.t_maps) {
            write_out(&dir, &format!("{}__{g}.csv", lm.layer), &map_csv(map))?;
        }
        if let Some(sim) = &lm.similarity {
            write_out(&dir, &format!("{}__similarity.csv", lm.layer), &map_csv(sim))?;
        }
        println!(
            "{}: {} maps ({}x{}), similarity {}",
            lm.layer,
            lm.t_maps.len(),
            lm.h,
            lm.w,
            if lm.similarity.is_some() { "written" } else { "skipped" }
        );
    }
    Ok(())
}

fn cmd_fit_window(input: &Path, out: Option<&Path>) -> Result<()> {
    let (deltas, thetas) = read_theta_csv(input)?;
    let fit = fit_integration_window(&deltas, &thetas)?;
    let csv = format!("a,b,c,residual\n{},{},{},{}\n", fit.a, fit.b, fit.c, fit.residual);
    if let Some(dir) = out {
        write_out(dir, "fit_window.csv", &csv)?;
    }
    print!("{csv}");
    Ok(())
}
