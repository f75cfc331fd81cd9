use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Dense affine map, `weight` is `[d_out, d_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<E = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> LinearParams<E> {
    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[d_out, d_in]),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_out(), self.d_in())
    }
}

#[derive(Debug)]
pub struct LinearTape<E = f32> {
    input: Tensor<E>,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<E = f32> {
    pub x: Tensor<E>,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

pub fn linear_forward<E: Element>(
    x: &Tensor<E>,
    p: &LinearParams<E>,
) -> Result<(Tensor<E>, LinearTape<E>)> {
    let (d_out, d_in) = (p.d_out(), p.d_in());
    if x.rank() != 2 || x.shape()[1] != d_in || p.bias.shape() != [d_out] {
        return Err(Error::shape(
            "linear_forward",
            format!("input {:?} for weight {:?}", x.shape(), p.weight.shape()),
        ));
    }
    let batch = x.shape()[0];
    let mut out = Vec::with_capacity(batch * d_out);
    for _ in 0..batch {
        out.extend_from_slice(p.bias.data());
    }
    // out = x · Wᵀ + b
    E::gemm(
        batch,
        d_in,
        d_out,
        x.data(),
        d_in as isize,
        1,
        p.weight.data(),
        1,
        d_in as isize,
        E::one(),
        &mut out,
        d_out as isize,
        1,
    );
    let out = Tensor::new(vec![batch, d_out], out)?;
    out.ensure_finite("linear_forward")?;
    Ok((out, LinearTape { input: x.clone() }))
}

pub fn linear_backward<E: Element>(
    grad_out: &Tensor<E>,
    tape: LinearTape<E>,
    p: &LinearParams<E>,
) -> Result<LinearGrads<E>> {
    let (d_out, d_in) = (p.d_out(), p.d_in());
    let batch = tape.input.shape()[0];
    if grad_out.shape() != [batch, d_out] {
        return Err(Error::shape(
            "linear_backward",
            format!("grad {:?}, expected {:?}", grad_out.shape(), [batch, d_out]),
        ));
    }
    let mut gx = vec![E::zero(); batch * d_in];
    E::gemm(
        batch,
        d_out,
        d_in,
        grad_out.data(),
        d_out as isize,
        1,
        p.weight.data(),
        d_in as isize,
        1,
        E::zero(),
        &mut gx,
        d_in as isize,
        1,
    );
    let mut gw = vec![E::zero(); d_out * d_in];
    E::gemm(
        d_out,
        batch,
        d_in,
        grad_out.data(),
        1,
        d_out as isize,
        tape.input.data(),
        d_in as isize,
        1,
        E::zero(),
        &mut gw,
        d_in as isize,
        1,
    );
    let mut gb = vec![E::zero(); d_out];
    for row in grad_out.data().chunks(d_out) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    let grads = LinearGrads {
        x: Tensor::new(vec![batch, d_in], gx)?,
        weight: Tensor::new(vec![d_out, d_in], gw)?,
        bias: Tensor::new(vec![d_out], gb)?,
    };
    for t in [&grads.x, &grads.weight, &grads.bias] {
        t.ensure_finite("linear_backward")?;
    }
    Ok(grads)
}
