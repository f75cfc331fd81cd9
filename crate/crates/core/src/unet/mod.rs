//! Spiking U-Net noise predictor.
//!
//! ```text
//! x [B,H,Da] ─ encode ─▶ down_0 ─▶ ↓ ─▶ down_1 … ─▶ mid ─▶ … up_1 ─▶ ↑ ─▶ up_0 ─ decode ─▶ ε̂ [B,H,Da]
//!                          │                                      ▲
//!                          └──── pre-LIF current of down_i ───────┘  (summed into up_i's first current)
//! ```
//!
//! Every edge that carries spikes is a [`SpikeTrain`](crate::lif::SpikeTrain).
//! Sums (block residuals, level skips, conditioning) are only ever formed on
//! continuous convolution outputs, before the LIF nodes.

mod block;
mod net;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{DecoderBlock, EncoderBlock};
use crate::error::{Error, Result};
use crate::lif::{LifParams, LifTape};
use crate::tensor::{ConvParams, Element, LinearParams, Tensor};

pub use block::{block_backward, block_forward, BlockGrads, BlockTape, SpikingBlock};
pub use net::{sinusoidal_embedding, UNetTape};

/// Architecture hyperparameters.
///
/// Parameter count, with `k` the kernel, `E` the conditioning width, `Dt` the
/// timestep embedding width, `Do` the observation width and `w_0..w_{n-1}`
/// the level widths:
///
/// ```text
/// block(c)    = 2(c·c·k + c) + (E·c + c) + 2c
/// total       = (Dt+1)·E + (Do+1)·E
///             + (w_0·Da·k + w_0) + w_0                 encoder conv + LIF
///             + Σ_i 2·block(w_i) + block(w_{n-1})      down, up and mid blocks
///             + Σ_{i<n-1} 2·(w_i·w_{i+1}·k + w_{i+1} + w_i)  … plus the matching LIFs
///             + (Da·w_0·k + Da)                        decoder conv
/// ```
///
/// The resampling term expands to `(w_{i+1}·w_i·k + w_{i+1}) + w_{i+1}` for
/// the downsampling conv and LIF, and `(w_i·w_{i+1}·k + w_i) + w_i` for the
/// upsampling pair. [`UNetConfig::param_count`] evaluates this formula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub widths: Vec<usize>,
    pub horizon: usize,
    pub action_dim: usize,
    /// Width of the flattened observation window.
    pub obs_dim: usize,
    pub time_steps: usize,
    pub kernel: usize,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
    pub tau: f64,
    pub m_init: f64,
    /// Multiplier on the `1/sqrt(fan_in)` uniform init bound of hidden convs.
    pub init_gain: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 128, 256],
            horizon: 16,
            action_dim: 2,
            obs_dim: 12,
            time_steps: 4,
            kernel: 3,
            time_embed_dim: 64,
            cond_dim: 64,
            tau: crate::lif::DEFAULT_TAU,
            m_init: crate::lif::DEFAULT_M_INIT,
            init_gain: 1.0,
        }
    }
}

impl UNetConfig {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("widths must be non-empty and positive, got {:?}", self.widths));
        }
        let div = 1usize << (self.levels() - 1);
        if self.horizon == 0 || self.horizon % div != 0 {
            return bad(format!("horizon {} not divisible by 2^(levels-1) = {div}", self.horizon));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.time_steps == 0 {
            return bad("time_steps must be at least 1".into());
        }
        if self.action_dim == 0 || self.obs_dim == 0 || self.cond_dim == 0 {
            return bad("action_dim, obs_dim and cond_dim must be positive".into());
        }
        if self.time_embed_dim < 4 || self.time_embed_dim % 2 != 0 {
            return bad(format!("time_embed_dim must be even and >= 4, got {}", self.time_embed_dim));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !self.m_init.is_finite() || !self.init_gain.is_finite() || self.init_gain < 0.0 {
            return bad("m_init and init_gain must be finite, init_gain non-negative".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let k = self.kernel;
        let e = self.cond_dim;
        let da = self.action_dim;
        let block = |c: usize| 2 * (c * c * k + c) + (e * c + c) + 2 * c;
        let w = &self.widths;
        let n = w.len();
        let mut total = (self.time_embed_dim + 1) * e + (self.obs_dim + 1) * e;
        total += w[0] * da * k + w[0] + w[0];
        total += w.iter().map(|&c| 2 * block(c)).sum::<usize>() + block(w[n - 1]);
        for i in 0..n - 1 {
            total += (w[i + 1] * w[i] * k + w[i + 1]) + w[i + 1];
            total += (w[i] * w[i + 1] * k + w[i]) + w[i];
        }
        total + da * w[0] * k + da
    }
}

/// Network parameters. The same type doubles as a gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikingUNet<E = f32> {
    pub config: UNetConfig,
    pub time_embed: LinearParams<E>,
    pub obs_embed: LinearParams<E>,
    pub encoder: EncoderBlock<E>,
    pub down: Vec<SpikingBlock<E>>,
    /// `downsample[i]` maps level `i` to level `i + 1`.
    pub downsample: Vec<(ConvParams<E>, LifParams<E>)>,
    pub mid: SpikingBlock<E>,
    pub up: Vec<SpikingBlock<E>>,
    /// `upsample[i]` maps level `i + 1` back to level `i`.
    pub upsample: Vec<(ConvParams<E>, LifParams<E>)>,
    pub decoder: DecoderBlock<E>,
}

impl<E: Element> SpikingUNet<E> {
    /// Structure with every parameter zero (thresholds included, so θ = 0).
    pub fn zeros(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let pad = (k - 1) / 2;
        let e = config.cond_dim;
        let w = &config.widths;
        let tau = config.tau;
        let lif = |c: usize| LifParams::uniform(c, tau, 0.0);
        let block = |c: usize| SpikingBlock {
            conv1: ConvParams::same(c, c, k),
            conv2: ConvParams::same(c, c, k),
            lif1: lif(c),
            lif2: lif(c),
            cond: LinearParams::zeros(c, e),
            residual: true,
        };
        Ok(Self {
            config: config.clone(),
            time_embed: LinearParams::zeros(e, config.time_embed_dim),
            obs_embed: LinearParams::zeros(e, config.obs_dim),
            encoder: EncoderBlock {
                conv: ConvParams::same(w[0], config.action_dim, k),
                lif: lif(w[0]),
                time_steps: config.time_steps,
            },
            down: w.iter().map(|&c| block(c)).collect(),
            downsample: (0..w.len() - 1)
                .map(|i| (ConvParams::zeros(w[i + 1], w[i], k, 2, pad), lif(w[i + 1])))
                .collect(),
            mid: block(w[w.len() - 1]),
            up: w.iter().map(|&c| block(c)).collect(),
            upsample: (0..w.len() - 1)
                .map(|i| (ConvParams::same(w[i], w[i + 1], k), lif(w[i])))
                .collect(),
            decoder: DecoderBlock {
                conv: ConvParams::same(config.action_dim, w[0], k),
            },
        })
    }

    /// Randomly initialised network. Convolutions and linear maps draw from
    /// `U(-b, b)` with `b = 1/sqrt(fan_in)` (hidden convs scaled by
    /// `init_gain`); thresholds start at `m_init`; the decoder starts at zero
    /// so an untrained network predicts zero noise.
    pub fn new(config: &UNetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = config.init_gain;
        let mut fill = |t: &mut Tensor<E>, bound: f64| {
            for v in t.data_mut() {
                *v = E::from_f64_lossy(rng.gen_range(-bound..=bound));
            }
        };
        let m_init = config.m_init;
        let mut visit = |name: &str, t: &mut Tensor<E>, fan_in: usize| {
            if name.ends_with(".m") {
                t.fill(E::from_f64_lossy(m_init));
            } else if name.starts_with("dec.") {
                t.fill(E::zero());
            } else {
                let base = 1.0 / (fan_in.max(1) as f64).sqrt();
                let hidden = name.contains("conv") && !name.starts_with("enc.");
                fill(t, if hidden { base * gain } else { base });
            }
        };
        net.visit_params_with_fan_in(&mut visit);
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_param_mut(|_, t| t.fill(E::zero()));
        z
    }

    fn visit_params_with_fan_in(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>, usize)) {
        fn conv<E: Element>(f: &mut dyn FnMut(&str, &mut Tensor<E>, usize), name: &str, p: &mut ConvParams<E>) {
            let fan_in = p.c_in() * p.kernel();
            f(&format!("{name}.weight"), &mut p.weight, fan_in);
            f(&format!("{name}.bias"), &mut p.bias, fan_in);
        }
        fn linear<E: Element>(f: &mut dyn FnMut(&str, &mut Tensor<E>, usize), name: &str, p: &mut LinearParams<E>) {
            let fan_in = p.d_in();
            f(&format!("{name}.weight"), &mut p.weight, fan_in);
            f(&format!("{name}.bias"), &mut p.bias, fan_in);
        }
        fn lif<E: Element>(f: &mut dyn FnMut(&str, &mut Tensor<E>, usize), name: &str, p: &mut LifParams<E>) {
            f(&format!("{name}.m"), &mut p.m, 1);
        }
        fn block<E: Element>(f: &mut dyn FnMut(&str, &mut Tensor<E>, usize), name: &str, b: &mut SpikingBlock<E>) {
            conv(f, &format!("{name}.conv1"), &mut b.conv1);
            lif(f, &format!("{name}.lif1"), &mut b.lif1);
            conv(f, &format!("{name}.conv2"), &mut b.conv2);
            lif(f, &format!("{name}.lif2"), &mut b.lif2);
            linear(f, &format!("{name}.cond"), &mut b.cond);
        }
        linear(f, "time_embed", &mut self.time_embed);
        linear(f, "obs_embed", &mut self.obs_embed);
        conv(f, "enc.conv", &mut self.encoder.conv);
        lif(f, "enc.lif", &mut self.encoder.lif);
        for (i, b) in self.down.iter_mut().enumerate() {
            block(f, &format!("down{i}"), b);
        }
        for (i, (c, l)) in self.downsample.iter_mut().enumerate() {
            conv(f, &format!("downsample{i}.conv"), c);
            lif(f, &format!("downsample{i}.lif"), l);
        }
        block(f, "mid", &mut self.mid);
        for (i, b) in self.up.iter_mut().enumerate() {
            block(f, &format!("up{i}"), b);
        }
        for (i, (c, l)) in self.upsample.iter_mut().enumerate() {
            conv(f, &format!("upsample{i}.conv"), c);
            lif(f, &format!("upsample{i}.lif"), l);
        }
        conv(f, "dec.conv", &mut self.decoder.conv);
    }

    /// Visits every trainable tensor in a fixed order with its stable name.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<E>)) {
        self.visit_params_with_fan_in(&mut |name, t, _| f(name, t));
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        let mut copy = self.clone();
        copy.for_each_param_mut(|name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Names of all LIF layers, in forward order.
    pub fn lif_names(&self) -> Vec<String> {
        self.named_params()
            .into_iter()
            .filter_map(|(n, _)| n.strip_suffix(".m").map(str::to_string))
            .collect()
    }

    pub fn cast<F: Element>(&self) -> SpikingUNet<F> {
        let mut out = SpikingUNet::<F>::zeros(&self.config).expect("config already validated");
        let src = self.named_params();
        let mut i = 0;
        out.for_each_param_mut(|name, t| {
            debug_assert_eq!(name, src[i].0);
            *t = src[i].1.cast();
            i += 1;
        });
        for (dst, srcb) in out.down.iter_mut().chain(out.up.iter_mut()).zip(self.down.iter().chain(&self.up)) {
            dst.residual = srcb.residual;
        }
        out.mid.residual = self.mid.residual;
        out
    }
}

/// Hooks invoked during a forward pass, in execution order.
///
/// `conv` receives the time-folded input `[T·B, C, L]` (or `[B, C, L]` for
/// the static encoder input); `spiking` tells whether that input is binary.
pub trait LayerObserver<E: Element> {
    fn conv(&mut self, _name: &str, _input: &Tensor<E>, _params: &ConvParams<E>, _spiking: bool) {}
    fn linear(&mut self, _name: &str, _input: &Tensor<E>, _params: &LinearParams<E>) {}
    fn lif(&mut self, _name: &str, _tape: &LifTape<E>, _params: &LifParams<E>) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl<E: Element> LayerObserver<E> for NoObserver {}
