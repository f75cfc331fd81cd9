//! Training loop, metrics log and checkpoint cadence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{ddpm_sample_clipped, loss_eps_mse, DiffusionBatch, NoiseSchedule};
use crate::env::{episode_seed, evaluate_policy, Dataset, EvalMetrics, ACTION_DIM};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::unet::SpikingUNet;

use super::checkpoint::{init_network, new_optimizer, select_best, Checkpoint};
use super::config::{EvalConfig, RunConfig};
use super::data::TrainingSet;
use super::policy::DiffusionPolicy;

pub const METRICS_CSV_HEADER: &str = "epoch,train_loss,action_mse,eval_success,eval_coverage,wall_time";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub action_mse: Option<f64>,
    pub eval_success: Option<f64>,
    pub eval_coverage: Option<f64>,
    /// Seconds since the start of this process's run.
    pub wall_time: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{},{},{},{:.3}",
            self.epoch,
            self.train_loss,
            opt(self.action_mse),
            opt(self.eval_success),
            opt(self.eval_coverage),
            self.wall_time
        )
    }

    /// The row without `wall_time`, the only column allowed to differ
    /// between identical runs.
    pub fn deterministic_row(&self) -> String {
        let row = self.csv_row();
        row[..row.rfind(',').unwrap()].to_string()
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad metrics row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let optn = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            action_mse: optn(f[2])?,
            eval_success: optn(f[3])?,
            eval_coverage: optn(f[4])?,
            wall_time: num(f[5])?,
        })
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER}\n");
    for r in rows {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_CSV_HEADER) {
        return Err(Error::Format("metrics CSV header mismatch".into()));
    }
    lines.filter(|l| !l.is_empty()).map(EpochMetrics::parse).collect()
}

/// Denoises `samples` training windows and returns the MSE against the
/// demonstrated plans, in normalized units.
pub fn action_mse(
    net: &SpikingUNet,
    set: &TrainingSet,
    sched: &NoiseSchedule,
    clip: Option<f64>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let idx = set.spread(samples);
    if idx.is_empty() {
        return Ok(0.0);
    }
    let (x0, obs) = set.gather(&idx);
    let pred = ddpm_sample_clipped(net, &obs, &[idx.len(), set.horizon, ACTION_DIM], sched, seed, clip)?;
    let n = x0.len() as f64;
    Ok(pred.data().iter().zip(x0.data()).map(|(&p, &t)| ((p - t) as f64).powi(2)).sum::<f64>() / n)
}

pub fn evaluate_checkpoint(ck: &Checkpoint, eval: &EvalConfig) -> Result<EvalMetrics> {
    let sched = ck.config.diffusion.schedule()?;
    let mut policy = DiffusionPolicy::new(&ck.net, &sched, ck.norm, eval.seed).with_clip(eval.clip());
    evaluate_policy(&mut policy, eval.episodes, eval.seed)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<u32>,
}

pub fn checkpoint_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("ckpt_{epoch:05}.sdpc"))
}

fn dump_batch(dir: Option<&Path>, epoch: u32, batch: &DiffusionBatch) -> String {
    let mut s = format!("epoch {epoch}\ntimesteps {:?}\n", batch.timesteps);
    writeln!(s, "x0 {:?}\nobs {:?}\neps {:?}", batch.x0.data(), batch.obs.data(), batch.eps.data()).unwrap();
    match dir {
        Some(d) => {
            let p = d.join("nonfinite_batch.txt");
            match write_atomic(&p, s.as_bytes()) {
                Ok(()) => format!("offending batch written to {}", p.display()),
                Err(e) => format!("could not write batch dump: {e}"),
            }
        }
        None => s,
    }
}

/// Trains from scratch or from `resume`. When `out_dir` is given, the
/// metrics CSV is rewritten atomically after every epoch and checkpoints go
/// to `ckpt_NNNNN.sdpc`, `last.sdpc` and `best.sdpc`.
///
/// Epoch `e` shuffles and samples noise from its own generator seeded by
/// SplitMix64 of `(train.seed, e)`, so resuming is bit-exact.
pub fn train(config: &RunConfig, dataset: &Dataset, resume: Option<Checkpoint>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let sched = config.diffusion.schedule()?;
    let set = TrainingSet::from_dataset(dataset, config.model.horizon)?;
    let start = Instant::now();

    let (mut net, mut adam, mut epoch, mut metrics) = match resume {
        Some(ck) => {
            if ck.config.digest() != config.digest() {
                return Err(Error::Config("checkpoint was trained with a different model/diffusion config".into()));
            }
            let rows = match out_dir.map(|d| d.join("metrics.csv")) {
                Some(p) if p.exists() => parse_metrics_csv(&std::fs::read_to_string(p)?)?,
                _ => Vec::new(),
            };
            let rows = rows.into_iter().filter(|r| r.epoch <= ck.epoch).collect();
            (ck.net, ck.adam, ck.epoch, rows)
        }
        None => {
            let net = init_network(config)?;
            let adam = new_optimizer(config, &net);
            (net, adam, 0, Vec::new())
        }
    };
    // a resumed optimiser keeps its moments but follows the current hyperparameters
    adam.lr = config.train.lr;
    adam.beta1 = config.train.beta1;
    adam.beta2 = config.train.beta2;
    adam.eps = config.train.eps;

    let total = config.train.epochs as u32;
    let bs = config.train.batch_size;
    let mut order: Vec<usize> = (0..set.len()).collect();
    while epoch < total {
        epoch += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(config.train.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(bs) {
            let (x0, obs) = set.gather(chunk);
            let batch = DiffusionBatch::sample(x0, obs, &sched, &mut rng);
            let (loss, grads) = match loss_eps_mse(&net, &batch, &sched) {
                Err(Error::NonFinite(what)) => {
                    let note = dump_batch(out_dir, epoch, &batch);
                    return Err(Error::Numeric(format!("non-finite value in {what} at epoch {epoch}; {note}")));
                }
                r => r?,
            };
            loss_sum += loss * chunk.len() as f64;
            adam.update(&mut net, &grads)?;
        }
        let train_loss = loss_sum / set.len() as f64;

        let every = config.eval.every;
        let evaluate = epoch == total || (every > 0 && epoch % every as u32 == 0);
        let (mut mse, mut success, mut coverage) = (None, None, None);
        if evaluate {
            mse = Some(action_mse(&net, &set, &sched, config.eval.clip(), config.eval.mse_samples, config.eval.seed)?);
            if config.eval.episodes > 0 {
                let mut policy = DiffusionPolicy::new(&net, &sched, dataset.stats, config.eval.seed).with_clip(config.eval.clip());
                let m = evaluate_policy(&mut policy, config.eval.episodes, config.eval.seed)?;
                success = Some(m.success_rate);
                coverage = Some(m.coverage);
            }
        }
        let row = EpochMetrics {
            epoch,
            train_loss,
            action_mse: mse,
            eval_success: success,
            eval_coverage: coverage,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", row.csv_row());
        metrics.push(row);

        if let Some(dir) = out_dir {
            write_atomic(&dir.join("metrics.csv"), metrics_csv(&metrics).as_bytes())?;
            let cadence = config.train.checkpoint_every;
            if epoch == total || evaluate || (cadence > 0 && epoch % cadence as u32 == 0) {
                let ck = Checkpoint {
                    config: config.clone(),
                    epoch,
                    net: net.clone(),
                    adam: adam.clone(),
                    norm: dataset.stats,
                };
                let bytes = ck.to_bytes();
                write_atomic(&checkpoint_path(dir, epoch), &bytes)?;
                write_atomic(&dir.join("last.sdpc"), &bytes)?;
            }
        }
    }

    let evals: Vec<(u32, f64)> = metrics.iter().filter_map(|m| m.eval_success.map(|s| (m.epoch, s))).collect();
    let best_epoch = select_best(&evals);
    if let (Some(dir), Some(best)) = (out_dir, best_epoch) {
        let p = checkpoint_path(dir, best);
        if p.exists() {
            std::fs::copy(&p, dir.join("best.sdpc"))?;
        }
        super::report::write_loss_svg(&dir.join("loss.svg"), &metrics)?;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            epoch,
            net,
            adam,
            norm: dataset.stats,
        },
        metrics,
        best_epoch,
    })
}
