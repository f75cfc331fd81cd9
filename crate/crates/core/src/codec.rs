//! Conversion between static tensors and spike trains.
//!
//! Encoding is direct coding: `conv(x)` is computed once and injected as a
//! constant current into a LIF layer for `T_S` steps. Decoding applies a
//! convolution with shared weights to every time slice and averages over time.

use crate::error::{Error, Result};
use crate::lif::{lif_backward, lif_forward, LifParams, LifTape, SpikeTrain};
use crate::tensor::{
    conv1d_backward, conv1d_forward, mean_over_axis, mean_over_axis_backward, ConvGrads, ConvParams, ConvTape, Element,
    Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock<E = f32> {
    pub conv: ConvParams<E>,
    pub lif: LifParams<E>,
    pub time_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock<E = f32> {
    pub conv: ConvParams<E>,
}

#[derive(Debug)]
pub struct EncodeTape<E = f32> {
    conv: ConvTape<E>,
    lif: LifTape<E>,
}

impl<E: Element> EncodeTape<E> {
    pub fn lif(&self) -> &LifTape<E> {
        &self.lif
    }
}

#[derive(Clone, Debug)]
pub struct EncodeGrads<E = f32> {
    pub x: Tensor<E>,
    pub conv: ConvGrads<E>,
    pub m: Tensor<E>,
}

#[derive(Debug)]
pub struct DecodeTape<E = f32> {
    conv: ConvTape<E>,
    time_steps: usize,
    batch: usize,
}

#[derive(Clone, Debug)]
pub struct DecodeGrads<E = f32> {
    pub spikes: Tensor<E>,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

/// Repeats `x` along a new leading axis of length `steps`.
pub(crate) fn repeat_time<E: Element>(x: &Tensor<E>, steps: usize) -> Tensor<E> {
    let mut data = Vec::with_capacity(x.len() * steps);
    for _ in 0..steps {
        data.extend_from_slice(x.data());
    }
    let mut shape = vec![steps];
    shape.extend_from_slice(x.shape());
    Tensor::new(shape, data).expect("repeat preserves element count")
}

/// Sums `[T, ...]` over its leading axis.
pub(crate) fn sum_time<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let steps = x.shape()[0];
    let inner = x.len() / steps.max(1);
    let mut out = Tensor::zeros(&x.shape()[1..]);
    for chunk in x.data().chunks(inner.max(1)) {
        for (d, &s) in out.data_mut().iter_mut().zip(chunk) {
            *d = *d + s;
        }
    }
    out
}

/// Merges the leading `[T, B]` axes of a spike train into one batch axis.
pub(crate) fn fold_time<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(Error::shape("fold_time", format!("{s:?}")));
    }
    let mut shape = vec![s[0] * s[1]];
    shape.extend_from_slice(&s[2..]);
    x.clone().reshape(&shape)
}

pub(crate) fn unfold_time<E: Element>(x: Tensor<E>, steps: usize) -> Result<Tensor<E>> {
    let s = x.shape().to_vec();
    if s[0] % steps != 0 {
        return Err(Error::shape("unfold_time", format!("{s:?} by {steps}")));
    }
    let mut shape = vec![steps, s[0] / steps];
    shape.extend_from_slice(&s[1..]);
    x.reshape(&shape)
}

pub fn encode<E: Element>(x: &Tensor<E>, enc: &EncoderBlock<E>) -> Result<(SpikeTrain<E>, EncodeTape<E>)> {
    if enc.time_steps == 0 {
        return Err(Error::OutOfRange {
            what: "time_steps",
            detail: "must be at least 1".into(),
        });
    }
    let (current, conv) = conv1d_forward(x, &enc.conv)?;
    let currents = repeat_time(&current, enc.time_steps);
    let (spikes, lif) = lif_forward(&currents, &enc.lif)?;
    Ok((spikes, EncodeTape { conv, lif }))
}

pub fn encode_backward<E: Element>(
    grad_spikes: &Tensor<E>,
    tape: EncodeTape<E>,
    enc: &EncoderBlock<E>,
) -> Result<EncodeGrads<E>> {
    let lif = lif_backward(grad_spikes, tape.lif, &enc.lif)?;
    let grad_current = sum_time(&lif.currents);
    let conv = conv1d_backward(&grad_current, tape.conv, &enc.conv)?;
    Ok(EncodeGrads {
        x: conv.x.clone(),
        conv,
        m: lif.m,
    })
}

pub fn decode<E: Element>(spikes: &SpikeTrain<E>, dec: &DecoderBlock<E>) -> Result<(Tensor<E>, DecodeTape<E>)> {
    let t = spikes.as_tensor();
    if t.rank() != 4 {
        return Err(Error::shape("decode", format!("expected [T, B, C, L], got {:?}", t.shape())));
    }
    let (steps, batch) = (t.shape()[0], t.shape()[1]);
    let (per_step, conv) = conv1d_forward(&fold_time(t)?, &dec.conv)?;
    let per_step = unfold_time(per_step, steps)?;
    let out = mean_over_axis(&per_step, 0)?;
    Ok((
        out,
        DecodeTape {
            conv,
            time_steps: steps,
            batch,
        },
    ))
}

pub fn decode_backward<E: Element>(
    grad_out: &Tensor<E>,
    tape: DecodeTape<E>,
    dec: &DecoderBlock<E>,
) -> Result<DecodeGrads<E>> {
    let mut full = vec![tape.time_steps];
    full.extend_from_slice(grad_out.shape());
    let g = mean_over_axis_backward(grad_out, &full, 0)?;
    let g = fold_time(&g)?;
    let conv = conv1d_backward(&g, tape.conv, &dec.conv)?;
    let spikes = unfold_time(conv.x, tape.time_steps)?;
    debug_assert_eq!(spikes.shape()[1], tape.batch);
    Ok(DecodeGrads {
        spikes,
        weight: conv.weight,
        bias: conv.bias,
    })
}
