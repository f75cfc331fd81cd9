//! Discrete-time leaky integrate-and-fire neurons with learnable
//! channel-wise membrane thresholds.
//!
//! Membrane update per step, with hard reset:
//!
//! ```text
//! u[t] = tau * u[t-1] * (1 - s[t-1]) + I[t]
//! s[t] = H(u[t] - theta[c])            H(0) = 1
//! ```
//!
//! Thresholds are reparameterised as `theta = m / sqrt(1 + m^2)` so that the
//! raw parameter `m` is unbounded while `theta` stays inside `(-1, 1)`.
//! One `m` is shared by every neuron of a channel.
//!
//! Backward uses the rectangular surrogate `S'(x) = 1` on `0 <= x <= 0.5`.
//! The reset factor `(1 - s[t-1])` is treated as a constant in the backward
//! pass: gradients flow through the direct surrogate path and through the
//! membrane carry-over `tau * (1 - s[t-1])`, not through the reset gate.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Fixed-θ ablation baseline used when threshold learning is disabled.
pub const FIXED_THETA: f64 = 0.5;
pub const DEFAULT_M_INIT: f64 = 0.7;
pub const DEFAULT_TAU: f64 = 0.5;

/// Upper edge of the surrogate window.
pub const SURROGATE_WIDTH: f64 = 0.5;

/// Binary activations with a leading time axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain<E = f32>(Tensor<E>);

impl<E: Element> SpikeTrain<E> {
    /// Wraps `t`, rejecting any element outside `{0, 1}`.
    pub fn new(t: Tensor<E>) -> Result<Self> {
        if let Some((index, v)) = t
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| v != E::zero() && v != E::one())
        {
            return Err(Error::NonBinary {
                index,
                value: v.to_f64_lossy(),
            });
        }
        if t.rank() < 2 {
            return Err(Error::shape("SpikeTrain", format!("rank {} lacks a time axis", t.rank())));
        }
        Ok(Self(t))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self(Tensor::zeros(shape))
    }

    pub fn time_steps(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn as_tensor(&self) -> &Tensor<E> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<E> {
        self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == E::one()).count()
    }

    /// Fraction of elements equal to one.
    pub fn firing_rate(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.0.len() as f64
    }
}

/// `m / sqrt(1 + m²)`, evaluated as `±1 / sqrt(1 + 1/m²)` so that every
/// rounding step is monotone in `m`.
pub fn theta_scalar<E: Element>(m: E) -> E {
    if m == E::zero() {
        return m;
    }
    let r = E::one() / (E::one() + E::one() / (m * m)).sqrt();
    if m < E::zero() {
        -r
    } else {
        r
    }
}

pub fn dtheta_dm_scalar<E: Element>(m: E) -> E {
    let q = E::one() + m * m;
    E::one() / (q * q.sqrt())
}

/// Inverse of [`theta_scalar`] on `(-1, 1)`.
pub fn m_for_theta(theta: f64) -> f64 {
    theta / (1.0 - theta * theta).sqrt()
}

pub fn theta_of_m<E: Element>(m: &Tensor<E>) -> Result<Tensor<E>> {
    m.ensure_finite("theta_of_m")?;
    Ok(m.map(theta_scalar))
}

pub fn dtheta_dm<E: Element>(m: &Tensor<E>) -> Result<Tensor<E>> {
    m.ensure_finite("dtheta_dm")?;
    Ok(m.map(dtheta_dm_scalar))
}

#[inline]
pub fn surrogate_scalar<E: Element>(x: E) -> E {
    if x >= E::zero() && x <= E::from_f64_lossy(SURROGATE_WIDTH) {
        E::one()
    } else {
        E::zero()
    }
}

pub fn surrogate_grad<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(surrogate_scalar)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifParams<E = f32> {
    pub tau: E,
    /// Raw threshold parameters, one per channel.
    pub m: Tensor<E>,
}

impl<E: Element> LifParams<E> {
    pub fn new(tau: E, m: Tensor<E>) -> Result<Self> {
        if !(tau >= E::zero() && tau <= E::one()) {
            return Err(Error::OutOfRange {
                what: "tau",
                detail: format!("{tau} not in [0, 1]"),
            });
        }
        if m.rank() != 1 {
            return Err(Error::shape("LifParams", format!("m must be 1-D, got {:?}", m.shape())));
        }
        Ok(Self { tau, m })
    }

    pub fn uniform(channels: usize, tau: f64, m_init: f64) -> Self {
        Self {
            tau: E::from_f64_lossy(tau),
            m: Tensor::full(&[channels], E::from_f64_lossy(m_init)),
        }
    }

    pub fn channels(&self) -> usize {
        self.m.len()
    }

    pub fn theta(&self) -> Vec<E> {
        self.m.data().iter().map(|&m| theta_scalar(m)).collect()
    }
}

/// Per-step membrane potentials (before reset) and emitted spikes.
#[derive(Clone, Debug)]
pub struct LifTape<E = f32> {
    u: Tensor<E>,
    s: Tensor<E>,
}

impl<E: Element> LifTape<E> {
    pub fn membrane(&self) -> &Tensor<E> {
        &self.u
    }

    pub fn spikes(&self) -> &Tensor<E> {
        &self.s
    }
}

#[derive(Clone, Debug)]
pub struct LifGrads<E = f32> {
    pub currents: Tensor<E>,
    pub m: Tensor<E>,
}

/// `(time, per-step elements, channels, positions per channel)`
fn layout<E: Element>(shape: &[usize], params: &LifParams<E>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(Error::shape(op, format!("expected [T, B, C, ...], got {shape:?}")));
    }
    let channels = shape[2];
    if channels != params.channels() {
        return Err(Error::shape(
            op,
            format!("{channels} channels but {} thresholds", params.channels()),
        ));
    }
    let inner: usize = shape[3..].iter().product();
    let per_step: usize = shape[1..].iter().product();
    Ok((shape[0], per_step, channels, inner))
}

/// Runs the membrane recurrence over currents `[T, B, C, ...]`, starting from rest.
pub fn lif_forward<E: Element>(currents: &Tensor<E>, params: &LifParams<E>) -> Result<(SpikeTrain<E>, LifTape<E>)> {
    let (steps, n, channels, inner) = layout(currents.shape(), params, "lif_forward")?;
    let theta = params.theta();
    let tau = params.tau;
    let cur = currents.data();
    let mut u = vec![E::zero(); steps * n];
    let mut s = vec![E::zero(); steps * n];
    for t in 0..steps {
        for i in 0..n {
            let c = (i / inner) % channels;
            let carry = if t == 0 {
                E::zero()
            } else {
                let k = (t - 1) * n + i;
                tau * u[k] * (E::one() - s[k])
            };
            let ut = carry + cur[t * n + i];
            u[t * n + i] = ut;
            s[t * n + i] = if ut - theta[c] >= E::zero() { E::one() } else { E::zero() };
        }
    }
    let shape = currents.shape().to_vec();
    let u = Tensor::new(shape.clone(), u)?;
    u.ensure_finite("lif_forward")?;
    let s = Tensor::new(shape, s)?;
    Ok((SpikeTrain(s.clone()), LifTape { u, s }))
}

/// Backpropagation through time for [`lif_forward`].
///
/// `grad_out` is dL/ds for every element of the emitted spike train.
pub fn lif_backward<E: Element>(grad_out: &Tensor<E>, tape: LifTape<E>, params: &LifParams<E>) -> Result<LifGrads<E>> {
    if grad_out.shape() != tape.u.shape() {
        return Err(Error::shape(
            "lif_backward",
            format!("grad {:?} vs tape {:?}", grad_out.shape(), tape.u.shape()),
        ));
    }
    let (steps, n, channels, inner) = layout(tape.u.shape(), params, "lif_backward")?;
    let theta = params.theta();
    let tau = params.tau;
    let (u, s, gs) = (tape.u.data(), tape.s.data(), grad_out.data());
    let mut grad_i = vec![E::zero(); steps * n];
    let mut grad_theta = vec![E::zero(); channels];
    let mut carry = vec![E::zero(); n];
    for t in (0..steps).rev() {
        for i in 0..n {
            let c = (i / inner) % channels;
            let k = t * n + i;
            let direct = gs[k] * surrogate_scalar(u[k] - theta[c]);
            let gu = direct + carry[i];
            grad_i[k] = gu;
            grad_theta[c] = grad_theta[c] - direct;
            carry[i] = if t > 0 {
                gu * tau * (E::one() - s[k - n])
            } else {
                E::zero()
            };
        }
    }
    let grad_m: Vec<E> = grad_theta
        .iter()
        .zip(params.m.data())
        .map(|(&g, &m)| g * dtheta_dm_scalar(m))
        .collect();
    let grads = LifGrads {
        currents: Tensor::new(tape.u.shape().to_vec(), grad_i)?,
        m: Tensor::new(vec![channels], grad_m)?,
    };
    grads.currents.ensure_finite("lif_backward")?;
    grads.m.ensure_finite("lif_backward")?;
    Ok(grads)
}
