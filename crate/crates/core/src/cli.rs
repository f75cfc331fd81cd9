//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
//! 4 numerical failure, 1 anything else.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::energy::{count_aops, estimate_energy, measure_firing_rate};
use crate::env::{generate_dataset, read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::train::{channel_stats, config_help, evaluate_checkpoint, stats_csv, train, Checkpoint, RunConfig, TrainingSet};

#[derive(Debug, Parser)]
#[command(name = "sdp", version, about = "Spiking diffusion policy trainer", after_help = config_help())]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set train.epochs=10 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate expert demonstrations into data.path.
    GenData,
    /// Train a model; artefacts go to output.dir.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Closed-loop evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Energy report for a checkpoint on a dataset sample.
    Profile {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-channel firing statistics for a checkpoint on a dataset sample.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::Numeric(_) | Error::NonFinite(_) => 4,
        _ => 1,
    }
}

/// Config for commands that read a checkpoint: the checkpoint's own config
/// unless `--config` is given, then `--set` overrides. Changing the model or
/// diffusion sections is rejected.
fn checkpoint_config(cli: &Cli, ck: &Checkpoint) -> Result<RunConfig> {
    let requested = match &cli.config {
        Some(p) => RunConfig::load(Some(p), &cli.set)?,
        None => RunConfig::from_parts(Some(&ck.config.to_toml()), &cli.set)?,
    };
    if requested.digest() != ck.config.digest() {
        return Err(Error::Config(
            "config digest mismatch: the requested model/diffusion settings differ from the checkpoint's".into(),
        ));
    }
    Ok(requested)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn probe(cfg: &RunConfig, ck: &Checkpoint) -> Result<(crate::tensor::Tensor, Vec<usize>, crate::tensor::Tensor)> {
    let ds = read_dataset(&cfg.data.path)?;
    let set = TrainingSet::from_dataset(&ds, ck.config.model.horizon)?;
    set.probe_batch(cfg.profile.batch, &cfg.diffusion.schedule()?, cfg.profile.seed)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData => {
            let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
            let ds = generate_dataset(cfg.data.n_traj, cfg.data.seed)?;
            write_dataset(&ds, &cfg.data.path)?;
            println!(
                "wrote {} trajectories ({} steps) to {}",
                ds.trajectories.len(),
                ds.total_steps(),
                cfg.data.path.display()
            );
        }
        Command::Train { resume } => {
            let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
            let ds = read_dataset(&cfg.data.path)?;
            let resume = resume.as_deref().map(Checkpoint::load).transpose()?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            write_text(&cfg.output.dir.join("config.toml"), &cfg.to_toml())?;
            let out = train(&cfg, &ds, resume, Some(&cfg.output.dir))?;
            let last = out.metrics.last();
            println!(
                "trained to epoch {}; final train loss {}; best epoch {}",
                out.checkpoint.epoch,
                last.map_or("n/a".into(), |m| format!("{:.4}", m.train_loss)),
                out.best_epoch.map_or("n/a".into(), |e| e.to_string())
            );
        }
        Command::Eval { checkpoint } => {
            let ck = Checkpoint::load(checkpoint)?;
            let cfg = checkpoint_config(cli, &ck)?;
            let m = evaluate_checkpoint(&ck, &cfg.eval)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            write_text(&cfg.output.dir.join("eval_episodes.csv"), &m.episodes_csv())?;
            write_text(&cfg.output.dir.join("eval_summary.csv"), &m.summary_csv())?;
            print!("{}", m.summary_csv());
        }
        Command::Profile { checkpoint } => {
            let ck = Checkpoint::load(checkpoint)?;
            let cfg = checkpoint_config(cli, &ck)?;
            let (x_t, t, obs) = probe(&cfg, &ck)?;
            let psi = measure_firing_rate(&ck.net, &x_t, &t, &obs)?;
            let aops = count_aops(&ck.net.config, 1)?;
            let report = estimate_energy(&aops, &psi, ck.net.config.time_steps, &cfg.profile.constants())?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            write_text(&cfg.output.dir.join("energy.csv"), &report.to_csv())?;
            write_text(&cfg.output.dir.join("energy.txt"), &report.to_table())?;
            print!("{}", report.to_table());
        }
        Command::Stats { checkpoint } => {
            let ck = Checkpoint::load(checkpoint)?;
            let cfg = checkpoint_config(cli, &ck)?;
            let (x_t, t, obs) = probe(&cfg, &ck)?;
            let rows = channel_stats(&ck.net, &x_t, &t, &obs)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            write_text(&cfg.output.dir.join("stats.csv"), &stats_csv(&rows))?;
            println!("{} channel rows", rows.len());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
