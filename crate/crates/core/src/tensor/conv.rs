use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Weights of a 1-D convolution: `weight` is `[c_out, c_in, k]`, `bias` is `[c_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<E = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Element> ConvParams<E> {
    pub fn new(weight: Tensor<E>, bias: Tensor<E>, stride: usize, padding: usize) -> Result<Self> {
        if weight.rank() != 3 {
            return Err(Error::shape("ConvParams", format!("weight rank {}", weight.rank())));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(
                "ConvParams",
                format!("bias {:?} for weight {:?}", bias.shape(), weight.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("ConvParams", "stride must be positive"));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[c_out, c_in, k]),
            bias: Tensor::zeros(&[c_out]),
            stride,
            padding,
        }
    }

    /// Stride-1 convolution whose output length equals its input length.
    pub fn same(c_out: usize, c_in: usize, k: usize) -> Self {
        Self::zeros(c_out, c_in, k, 1, (k - 1) / 2)
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel() {
            return None;
        }
        Some((padded - self.kernel()) / self.stride + 1)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Cached unfolded input of one convolution call.
#[derive(Debug)]
pub struct ConvTape<E = f32> {
    cols: Vec<E>,
    batch: usize,
    len_in: usize,
    len_out: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<E = f32> {
    pub x: Tensor<E>,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

/// Cross-correlation of `x: [B, C_in, L]` with `p`, giving `[B, C_out, L_out]`.
pub fn conv1d_forward<E: Element>(x: &Tensor<E>, p: &ConvParams<E>) -> Result<(Tensor<E>, ConvTape<E>)> {
    let (c_out, c_in, k) = (p.c_out(), p.c_in(), p.kernel());
    if x.rank() != 3 || x.shape()[1] != c_in {
        return Err(Error::shape(
            "conv1d_forward",
            format!("input {:?} for weight {:?}", x.shape(), p.weight.shape()),
        ));
    }
    let (batch, len_in) = (x.shape()[0], x.shape()[2]);
    let len_out = p
        .out_len(len_in)
        .ok_or_else(|| Error::shape("conv1d_forward", format!("length {len_in} shorter than kernel {k}")))?;

    // im2col: rows are (ci, kk), columns are (b, lo).
    let rows = c_in * k;
    let ncols = batch * len_out;
    let mut cols = vec![E::zero(); rows * ncols];
    let xd = x.data();
    for ci in 0..c_in {
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * ncols..(ci * k + kk + 1) * ncols];
            for b in 0..batch {
                let src = &xd[(b * c_in + ci) * len_in..(b * c_in + ci + 1) * len_in];
                for lo in 0..len_out {
                    let li = (lo * p.stride + kk) as isize - p.padding as isize;
                    if li >= 0 && (li as usize) < len_in {
                        row[b * len_out + lo] = src[li as usize];
                    }
                }
            }
        }
    }

    let mut prod = vec![E::zero(); c_out * ncols];
    E::gemm(
        c_out,
        rows,
        ncols,
        p.weight.data(),
        rows as isize,
        1,
        &cols,
        ncols as isize,
        1,
        E::zero(),
        &mut prod,
        ncols as isize,
        1,
    );

    let mut out = vec![E::zero(); batch * c_out * len_out];
    let bias = p.bias.data();
    for co in 0..c_out {
        for b in 0..batch {
            let dst = &mut out[(b * c_out + co) * len_out..(b * c_out + co + 1) * len_out];
            let src = &prod[co * ncols + b * len_out..co * ncols + (b + 1) * len_out];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bias[co];
            }
        }
    }
    let out = Tensor::new(vec![batch, c_out, len_out], out)?;
    out.ensure_finite("conv1d_forward")?;
    Ok((
        out,
        ConvTape {
            cols,
            batch,
            len_in,
            len_out,
        },
    ))
}

pub fn conv1d_backward<E: Element>(
    grad_out: &Tensor<E>,
    tape: ConvTape<E>,
    p: &ConvParams<E>,
) -> Result<ConvGrads<E>> {
    let (c_out, c_in, k) = (p.c_out(), p.c_in(), p.kernel());
    let ConvTape {
        cols,
        batch,
        len_in,
        len_out,
    } = tape;
    if grad_out.shape() != [batch, c_out, len_out] {
        return Err(Error::shape(
            "conv1d_backward",
            format!("grad {:?}, expected {:?}", grad_out.shape(), [batch, c_out, len_out]),
        ));
    }
    let rows = c_in * k;
    let ncols = batch * len_out;

    // Permute [B, C_out, L_out] -> [C_out, B·L_out].
    let god = grad_out.data();
    let mut g = vec![E::zero(); c_out * ncols];
    let mut grad_bias = vec![E::zero(); c_out];
    for co in 0..c_out {
        let mut acc = E::zero();
        for b in 0..batch {
            let src = &god[(b * c_out + co) * len_out..(b * c_out + co + 1) * len_out];
            let dst = &mut g[co * ncols + b * len_out..co * ncols + (b + 1) * len_out];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s;
                acc = acc + s;
            }
        }
        grad_bias[co] = acc;
    }

    let mut grad_w = vec![E::zero(); c_out * rows];
    E::gemm(
        c_out,
        ncols,
        rows,
        &g,
        ncols as isize,
        1,
        &cols,
        1,
        ncols as isize,
        E::zero(),
        &mut grad_w,
        rows as isize,
        1,
    );

    let mut grad_cols = vec![E::zero(); rows * ncols];
    E::gemm(
        rows,
        c_out,
        ncols,
        p.weight.data(),
        1,
        rows as isize,
        &g,
        ncols as isize,
        1,
        E::zero(),
        &mut grad_cols,
        ncols as isize,
        1,
    );

    let mut grad_x = vec![E::zero(); batch * c_in * len_in];
    for ci in 0..c_in {
        for kk in 0..k {
            let row = &grad_cols[(ci * k + kk) * ncols..(ci * k + kk + 1) * ncols];
            for b in 0..batch {
                let dst = &mut grad_x[(b * c_in + ci) * len_in..(b * c_in + ci + 1) * len_in];
                for lo in 0..len_out {
                    let li = (lo * p.stride + kk) as isize - p.padding as isize;
                    if li >= 0 && (li as usize) < len_in {
                        dst[li as usize] = dst[li as usize] + row[b * len_out + lo];
                    }
                }
            }
        }
    }

    let grads = ConvGrads {
        x: Tensor::new(vec![batch, c_in, len_in], grad_x)?,
        weight: Tensor::new(vec![c_out, c_in, k], grad_w)?,
        bias: Tensor::new(vec![c_out], grad_bias)?,
    };
    for t in [&grads.x, &grads.weight, &grads.bias] {
        t.ensure_finite("conv1d_backward")?;
    }
    Ok(grads)
}
