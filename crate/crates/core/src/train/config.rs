//! Run configuration: a TOML file with `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::energy::EnergyConstants;
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::unet::UNetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lcmt {
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: PathBuf,
    pub n_traj: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: "data/push.sdpd".into(),
            n_traj: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub horizon: usize,
    pub time_steps: usize,
    pub kernel: usize,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
    pub tau: f64,
    pub m_init: f64,
    pub init_gain: f64,
    pub lcmt: Lcmt,
    pub fixed_theta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let u = UNetConfig::default();
        Self {
            widths: u.widths,
            horizon: u.horizon,
            time_steps: u.time_steps,
            kernel: u.kernel,
            time_embed_dim: u.time_embed_dim,
            cond_dim: u.cond_dim,
            tau: u.tau,
            m_init: u.m_init,
            init_gain: u.init_gain,
            lcmt: Lcmt::On,
            fixed_theta: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            widths: self.widths.clone(),
            horizon: self.horizon,
            action_dim: ACTION_DIM,
            obs_dim: OBS_DIM,
            time_steps: self.time_steps,
            kernel: self.kernel,
            time_embed_dim: self.time_embed_dim,
            cond_dim: self.cond_dim,
            tau: self.tau,
            m_init: self.m_init,
            init_gain: self.init_gain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            schedule: ScheduleKind::Linear,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule, self.steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub every: usize,
    pub mse_samples: usize,
    /// Clamp the x̂₀ estimate to the normalized action range while sampling.
    pub clip_sample: bool,
}

impl EvalConfig {
    pub fn clip(&self) -> Option<f64> {
        self.clip_sample.then_some(1.0)
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            seed: 1000,
            every: 50,
            mse_samples: 32,
            clip_sample: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub e_ac: f64,
    pub e_mac: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        let c = EnergyConstants::default();
        Self {
            e_ac: c.e_ac,
            e_mac: c.e_mac,
            batch: 32,
            seed: 7,
        }
    }
}

impl ProfileConfig {
    pub fn constants(&self) -> EnergyConstants {
        EnergyConstants {
            e_ac: self.e_ac,
            e_mac: self.e_mac,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "runs/default".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub profile: ProfileConfig,
    pub output: OutputConfig,
}

/// `(key, description)` for every configuration key, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("data.path", "dataset file written by gen-data and read by train/profile/stats"),
    ("data.n_traj", "number of successful expert trajectories to generate"),
    ("data.seed", "master seed for dataset generation"),
    ("model.widths", "channel width per U-Net level, e.g. [64, 128, 256]"),
    ("model.horizon", "action-plan length H; divisible by 2^(levels-1)"),
    ("model.time_steps", "SNN timesteps T_S (1, 2, 4 or 8 without a notice)"),
    ("model.kernel", "odd convolution kernel size"),
    ("model.time_embed_dim", "width of the sinusoidal diffusion-step embedding"),
    ("model.cond_dim", "width of the shared conditioning vector"),
    ("model.tau", "membrane decay factor in [0, 1]"),
    ("model.m_init", "initial threshold parameter m (theta = m / sqrt(1 + m^2))"),
    ("model.init_gain", "scale on the uniform init bound of hidden convolutions"),
    ("model.lcmt", "\"on\" trains per-channel thresholds; \"off\" freezes them at fixed_theta"),
    ("model.fixed_theta", "threshold used when lcmt = \"off\", in (-1, 1)"),
    ("diffusion.steps", "number of noise levels T_D"),
    ("diffusion.schedule", "\"linear\" or \"squared_cosine\""),
    ("train.lr", "Adam step size"),
    ("train.beta1", "Adam first-moment decay"),
    ("train.beta2", "Adam second-moment decay"),
    ("train.eps", "Adam denominator offset"),
    ("train.batch_size", "samples per optimiser step"),
    ("train.epochs", "total epochs (a resumed run continues up to this count)"),
    ("train.seed", "seed for initialisation and per-epoch shuffling/noise"),
    ("train.checkpoint_every", "write a checkpoint every N epochs (the last epoch always)"),
    ("eval.episodes", "closed-loop episodes per evaluation"),
    ("eval.seed", "master seed for evaluation episodes and sampling noise"),
    ("eval.every", "evaluate every N epochs during training; 0 = final epoch only"),
    ("eval.mse_samples", "training windows denoised to compute action_mse"),
    ("eval.clip_sample", "clamp x̂₀ to [-1, 1] while sampling plans"),
    ("profile.e_ac", "energy per accumulate"),
    ("profile.e_mac", "energy per multiply-accumulate"),
    ("profile.batch", "samples used to measure firing rates and statistics"),
    ("profile.seed", "seed for the profiling/statistics sample"),
    ("output.dir", "directory for checkpoints, metrics and reports"),
];

const SWEEP_TIME_STEPS: [usize; 4] = [1, 2, 4, 8];

/// Parses the right-hand side of `--set`. Bare words that are not valid TOML
/// (`off`, `linear`, paths) are taken as strings.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if !CONFIG_KEYS.iter().any(|(k, _)| *k == key) {
        return Err(Error::Config(format!("unknown config key `{key}`")));
    }
    let (section, field) = key.split_once('.').unwrap();
    let table = root
        .entry(section)
        .or_insert_with(|| toml::Value::Table(Default::default()))
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{section}` is not a table")))?;
    table.insert(field.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn toml_error(e: toml::de::Error) -> Error {
    Error::Config(e.message().trim().to_string())
}

impl RunConfig {
    /// Builds a config from optional TOML text plus overrides, then validates it.
    pub fn from_parts(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(toml_error)?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(root).try_into().map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::from_parts(text.as_deref(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.unet().validate()?;
        self.diffusion.schedule()?;
        self.profile.constants().validate()?;
        if !SWEEP_TIME_STEPS.contains(&self.model.time_steps) {
            log::warn!("model.time_steps = {} is outside the usual sweep {SWEEP_TIME_STEPS:?}", self.model.time_steps);
        }
        if !(self.model.fixed_theta > -1.0 && self.model.fixed_theta < 1.0) {
            return bad(format!("model.fixed_theta must lie in (-1, 1), got {}", self.model.fixed_theta));
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", t.lr));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
            return bad("train.beta1/beta2 must lie in [0, 1) and train.eps must be positive".into());
        }
        if t.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if self.data.n_traj == 0 {
            return bad("data.n_traj must be at least 1".into());
        }
        if self.profile.batch == 0 {
            return bad("profile.batch must be at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 over the sections that determine the network function:
    /// `model` and `diffusion`.
    pub fn digest(&self) -> [u8; 32] {
        #[derive(Serialize)]
        struct Arch<'a> {
            model: &'a ModelConfig,
            diffusion: &'a DiffusionConfig,
        }
        let text = toml::to_string(&Arch {
            model: &self.model,
            diffusion: &self.diffusion,
        })
        .expect("config serialises");
        Sha256::digest(text.as_bytes()).into()
    }
}

/// Text for `--help`: every key with its default.
pub fn config_help() -> String {
    let defaults: toml::Table = toml::from_str(&RunConfig::default().to_toml()).unwrap();
    let mut s = String::from("Configuration keys (TOML sections; override with --set key=value):\n");
    for (key, doc) in CONFIG_KEYS {
        let (sec, field) = key.split_once('.').unwrap();
        let default = defaults[sec].get(field).map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("  {key:<22} {doc} [default: {default}]\n"));
    }
    s
}
