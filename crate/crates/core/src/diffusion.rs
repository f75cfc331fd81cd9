//! DDPM noise schedule, forward noising, ε-prediction loss and ancestral sampling.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::unet::SpikingUNet;

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    SquaredCosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "squared_cosine" => Ok(Self::SquaredCosine),
            other => Err(Error::Config(format!("unknown schedule kind '{other}'"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::SquaredCosine => "squared_cosine",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion steps must be at least 1".into()));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                if steps == 1 {
                    vec![LINEAR_BETA_START]
                } else {
                    let span = LINEAR_BETA_END - LINEAR_BETA_START;
                    (0..steps)
                        .map(|t| LINEAR_BETA_START + span * t as f64 / (steps - 1) as f64)
                        .collect()
                }
            }
            ScheduleKind::SquaredCosine => {
                let f = |t: f64| {
                    let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
                    x.cos().powi(2)
                };
                (0..steps)
                    .map(|t| (1.0 - f(t as f64 + 1.0) / f(t as f64)).min(MAX_BETA))
                    .collect()
            }
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// Variance of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::OutOfRange {
                what: "diffusion timestep",
                detail: format!("{t} >= {}", self.steps()),
            });
        }
        Ok(())
    }
}

pub fn make_schedule(kind: &str, steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::new(kind.parse()?, steps)
}

/// `x_t = sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·ε`, with one timestep per leading-axis row.
pub fn forward_diffuse<E: Element>(
    x0: &Tensor<E>,
    timesteps: &[usize],
    eps: &Tensor<E>,
    sched: &NoiseSchedule,
) -> Result<Tensor<E>> {
    if x0.shape() != eps.shape() || x0.rank() == 0 || x0.shape()[0] != timesteps.len() {
        return Err(Error::shape(
            "forward_diffuse",
            format!("x0 {:?}, eps {:?}, {} timesteps", x0.shape(), eps.shape(), timesteps.len()),
        ));
    }
    let row = x0.len() / timesteps.len().max(1);
    let mut out = Vec::with_capacity(x0.len());
    for (i, &t) in timesteps.iter().enumerate() {
        sched.check(t)?;
        let a = E::from_f64_lossy(sched.alpha_bar[t].sqrt());
        let b = E::from_f64_lossy((1.0 - sched.alpha_bar[t]).sqrt());
        let xs = &x0.data()[i * row..(i + 1) * row];
        let es = &eps.data()[i * row..(i + 1) * row];
        out.extend(xs.iter().zip(es).map(|(&x, &e)| a * x + b * e));
    }
    Tensor::new(x0.shape().to_vec(), out)
}

pub fn gaussian<E: Element>(shape: &[usize], rng: &mut impl Rng) -> Tensor<E> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| E::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("gaussian shape")
}

/// Anything that predicts ε from `(x_t, t, obs)`.
pub trait NoisePredictor<E: Element> {
    fn predict(&self, x_t: &Tensor<E>, timesteps: &[usize], obs: &Tensor<E>) -> Result<Tensor<E>>;
}

impl<E: Element> NoisePredictor<E> for SpikingUNet<E> {
    fn predict(&self, x_t: &Tensor<E>, timesteps: &[usize], obs: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward(x_t, timesteps, obs)?.0)
    }
}

/// One training batch: clean actions, conditioning, sampled steps and noise.
#[derive(Clone, Debug)]
pub struct DiffusionBatch<E = f32> {
    pub x0: Tensor<E>,
    pub obs: Tensor<E>,
    pub timesteps: Vec<usize>,
    pub eps: Tensor<E>,
}

impl<E: Element> DiffusionBatch<E> {
    /// Draws `t ~ U{0..T_D-1}` per row and unit Gaussian noise.
    pub fn sample(x0: Tensor<E>, obs: Tensor<E>, sched: &NoiseSchedule, rng: &mut impl Rng) -> Self {
        let b = x0.shape()[0];
        let timesteps = (0..b).map(|_| rng.gen_range(0..sched.steps())).collect();
        let eps = gaussian(x0.shape(), rng);
        Self { x0, obs, timesteps, eps }
    }
}

/// Mean squared error between sampled and predicted noise, and its gradient.
pub fn loss_eps_mse<E: Element>(
    net: &SpikingUNet<E>,
    batch: &DiffusionBatch<E>,
    sched: &NoiseSchedule,
) -> Result<(f64, SpikingUNet<E>)> {
    let x_t = forward_diffuse(&batch.x0, &batch.timesteps, &batch.eps, sched)?;
    let (pred, tape) = net.forward(&x_t, &batch.timesteps, &batch.obs)?;
    let (loss, grad) = mse_and_grad(&pred, &batch.eps)?;
    let grads = net.backward(&grad, tape)?;
    Ok((loss, grads))
}

pub(crate) fn mse_and_grad<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<(f64, Tensor<E>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let scale = E::from_f64_lossy(2.0 / n);
    let grad: Vec<E> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.to_f64_lossy().powi(2);
            d * scale
        })
        .collect();
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss_eps_mse"));
    }
    Ok((loss, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Ancestral DDPM sampling from `x_{T_D} ~ N(0, I)` down to `x_0`.
///
/// `shape` is `[B, H, Da]`; `obs` is `[B, obs_dim]`.
pub fn ddpm_sample<E: Element, P: NoisePredictor<E> + ?Sized>(
    net: &P,
    obs: &Tensor<E>,
    shape: &[usize],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Tensor<E>> {
    ddpm_sample_clipped(net, obs, shape, sched, seed, None)
}

/// [`ddpm_sample`] with the x̂₀ estimate clamped to `[-c, c]` before the
/// posterior mean is formed. `None` leaves the mean unclipped.
pub fn ddpm_sample_clipped<E: Element, P: NoisePredictor<E> + ?Sized>(
    net: &P,
    obs: &Tensor<E>,
    shape: &[usize],
    sched: &NoiseSchedule,
    seed: u64,
    clip: Option<f64>,
) -> Result<Tensor<E>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = shape[0];
    let mut x = gaussian::<E>(shape, &mut rng);
    for t in (0..sched.steps()).rev() {
        let eps = net.predict(&x, &vec![t; batch], obs)?;
        if eps.shape() != shape {
            return Err(Error::shape("ddpm_sample", format!("predictor returned {:?}", eps.shape())));
        }
        let sigma = sched.posterior_variance(t).sqrt();
        let mean: Box<dyn Fn(f64, f64) -> f64> = match clip {
            None => {
                let coef = sched.beta[t] / (1.0 - sched.alpha_bar[t]).sqrt();
                let inv_sqrt_alpha = 1.0 / sched.alpha[t].sqrt();
                Box::new(move |xv, ev| (xv - coef * ev) * inv_sqrt_alpha)
            }
            Some(c) => {
                let ab = sched.alpha_bar[t];
                let ab_prev = if t == 0 { 1.0 } else { sched.alpha_bar[t - 1] };
                let c0 = ab_prev.sqrt() * sched.beta[t] / (1.0 - ab);
                let ct = sched.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                Box::new(move |xv, ev| {
                    let x0 = ((xv - (1.0 - ab).sqrt() * ev) / ab.sqrt()).clamp(-c, c);
                    c0 * x0 + ct * xv
                })
            }
        };
        let data = x
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&xv, &ev)| {
                let m = mean(xv.to_f64_lossy(), ev.to_f64_lossy());
                let noise = if t > 0 { sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                E::from_f64_lossy(m + noise)
            })
            .collect();
        x = Tensor::new(shape.to_vec(), data)?;
    }
    x.ensure_finite("ddpm_sample")?;
    Ok(x)
}
