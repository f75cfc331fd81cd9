use super::{Element, Tensor};
use crate::error::{Error, Result};

/// `x + y` where `y` has either the shape of `x` or the shape of `x` with
/// its leading axis removed (broadcast along that axis).
pub fn add<E: Element>(x: &Tensor<E>, y: &Tensor<E>) -> Result<Tensor<E>> {
    let inner = broadcast_len(x, y)?;
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(inner) {
        for (a, &b) in chunk.iter_mut().zip(y.data()) {
            *a = *a + b;
        }
    }
    out.ensure_finite("add")?;
    Ok(out)
}

/// Returns `(grad_x, grad_y)`; a broadcast `y` collects the sum over the leading axis.
pub fn add_backward<E: Element>(grad: &Tensor<E>, y_shape: &[usize]) -> Result<(Tensor<E>, Tensor<E>)> {
    if y_shape == grad.shape() {
        return Ok((grad.clone(), grad.clone()));
    }
    if grad.rank() == 0 || &grad.shape()[1..] != y_shape {
        return Err(Error::shape(
            "add_backward",
            format!("grad {:?} vs operand {:?}", grad.shape(), y_shape),
        ));
    }
    let inner: usize = y_shape.iter().product();
    let mut gy = Tensor::zeros(y_shape);
    for chunk in grad.data().chunks(inner.max(1)) {
        for (a, &b) in gy.data_mut().iter_mut().zip(chunk) {
            *a = *a + b;
        }
    }
    Ok((grad.clone(), gy))
}

fn broadcast_len<E: Element>(x: &Tensor<E>, y: &Tensor<E>) -> Result<usize> {
    if x.shape() == y.shape() {
        Ok(x.len().max(1))
    } else if x.rank() >= 1 && &x.shape()[1..] == y.shape() {
        Ok(y.len().max(1))
    } else {
        Err(Error::shape("add", format!("{:?} + {:?}", x.shape(), y.shape())))
    }
}

pub fn scale<E: Element>(x: &Tensor<E>, s: E) -> Result<Tensor<E>> {
    let out = x.map(|v| v * s);
    out.ensure_finite("scale")?;
    Ok(out)
}

pub fn scale_backward<E: Element>(grad: &Tensor<E>, s: E) -> Tensor<E> {
    grad.map(|v| v * s)
}

/// Arithmetic mean over `axis`; the axis is removed from the output shape.
pub fn mean_over_axis<E: Element>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    if axis >= x.rank() || x.shape()[axis] == 0 {
        return Err(Error::shape("mean_over_axis", format!("axis {axis} of {:?}", x.shape())));
    }
    let (outer, n, inner) = split(x.shape(), axis);
    let inv = E::one() / E::from_usize(n).unwrap();
    let mut out = vec![E::zero(); outer * inner];
    let xd = x.data();
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for i in 0..n {
            let src = &xd[(o * n + i) * inner..(o * n + i + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        dst.iter_mut().for_each(|d| *d = *d * inv);
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    let out = Tensor::new(shape, out)?;
    out.ensure_finite("mean_over_axis")?;
    Ok(out)
}

/// Spreads `grad / n` back over every slice of the reduced axis.
pub fn mean_over_axis_backward<E: Element>(grad: &Tensor<E>, in_shape: &[usize], axis: usize) -> Result<Tensor<E>> {
    let mut reduced = in_shape.to_vec();
    if axis >= in_shape.len() {
        return Err(Error::shape("mean_over_axis_backward", format!("axis {axis} of {in_shape:?}")));
    }
    reduced.remove(axis);
    if grad.shape() != reduced.as_slice() {
        return Err(Error::shape(
            "mean_over_axis_backward",
            format!("grad {:?}, expected {:?}", grad.shape(), reduced),
        ));
    }
    let (outer, n, inner) = split(in_shape, axis);
    let inv = E::one() / E::from_usize(n).unwrap();
    let mut out = vec![E::zero(); outer * n * inner];
    for o in 0..outer {
        let src = &grad.data()[o * inner..(o + 1) * inner];
        for i in 0..n {
            let dst = &mut out[(o * n + i) * inner..(o * n + i + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s * inv;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), out)
}

fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
