use super::LayerObserver;
use crate::codec::{fold_time, unfold_time};
use crate::error::{Error, Result};
use crate::lif::{lif_backward, lif_forward, LifParams, LifTape, SpikeTrain};
use crate::tensor::{
    conv1d_backward, conv1d_forward, linear_backward, linear_forward, ConvGrads, ConvParams, ConvTape, Element,
    LinearGrads, LinearParams, LinearTape, Tensor,
};

/// Two spiking neurons (conv → LIF) joined by a residual on the currents:
///
/// ```text
/// c1  = conv1(s_in) + cond(e) [+ level skip]
/// s1  = LIF1(c1)
/// c2  = conv2(s1) + c1
/// out = LIF2(c2)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct SpikingBlock<E = f32> {
    pub conv1: ConvParams<E>,
    pub conv2: ConvParams<E>,
    pub lif1: LifParams<E>,
    pub lif2: LifParams<E>,
    /// Per-channel conditioning current, from the shared embedding.
    pub cond: LinearParams<E>,
    /// When false the `+ c1` term is dropped. Only used for ablations.
    pub residual: bool,
}

impl<E: Element> SpikingBlock<E> {
    pub fn channels(&self) -> usize {
        self.conv1.c_out()
    }
}

#[derive(Debug)]
pub struct BlockTape<E = f32> {
    conv1: ConvTape<E>,
    lif1: LifTape<E>,
    conv2: ConvTape<E>,
    lif2: LifTape<E>,
    cond: LinearTape<E>,
    time_steps: usize,
}

impl<E: Element> BlockTape<E> {
    pub fn lif1(&self) -> &LifTape<E> {
        &self.lif1
    }

    pub fn lif2(&self) -> &LifTape<E> {
        &self.lif2
    }
}

#[derive(Clone, Debug)]
pub struct BlockGrads<E = f32> {
    pub input: Tensor<E>,
    /// Gradient on `c1`; this is what flows into an injected level skip.
    pub first_current: Tensor<E>,
    pub cond_input: Tensor<E>,
    pub conv1: ConvGrads<E>,
    pub conv2: ConvGrads<E>,
    pub lif1_m: Tensor<E>,
    pub lif2_m: Tensor<E>,
    pub cond: LinearGrads<E>,
}

/// Adds `bc[b, c]` to every `(t, l)` of `x: [T, B, C, L]`.
pub(crate) fn add_channel_current<E: Element>(x: &mut Tensor<E>, bc: &Tensor<E>) {
    let s = x.shape().to_vec();
    let (b, c, l) = (s[1], s[2], s[3]);
    let bcd = bc.data();
    for (i, chunk) in x.data_mut().chunks_mut(l).enumerate() {
        let v = bcd[i % (b * c)];
        chunk.iter_mut().for_each(|x| *x = *x + v);
    }
}

/// Sums `g: [T, B, C, L]` over `t` and `l`, giving `[B, C]`.
pub(crate) fn reduce_channel_current<E: Element>(g: &Tensor<E>) -> Tensor<E> {
    let s = g.shape();
    let (b, c, l) = (s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[b, c]);
    for (i, chunk) in g.data().chunks(l).enumerate() {
        let acc: E = chunk.iter().copied().sum();
        let d = &mut out.data_mut()[i % (b * c)];
        *d = *d + acc;
    }
    out
}

/// Forward pass of one block. Returns the output spikes, the tape and the
/// pre-LIF current `c2` (used as a level skip by the decoder half).
pub fn block_forward<E: Element>(
    s_in: &SpikeTrain<E>,
    embedding: &Tensor<E>,
    skip: Option<&Tensor<E>>,
    block: &SpikingBlock<E>,
    name: &str,
    observer: &mut dyn LayerObserver<E>,
) -> Result<(SpikeTrain<E>, BlockTape<E>, Tensor<E>)> {
    let steps = s_in.time_steps();
    let folded = fold_time(s_in.as_tensor())?;
    observer.conv(&format!("{name}.conv1"), &folded, &block.conv1, true);
    let (c1, conv1) = conv1d_forward(&folded, &block.conv1)?;
    let mut c1 = unfold_time(c1, steps)?;

    observer.linear(&format!("{name}.cond"), embedding, &block.cond);
    let (cc, cond) = linear_forward(embedding, &block.cond)?;
    if cc.shape() != [c1.shape()[1], c1.shape()[2]] {
        return Err(Error::shape(
            "block_forward",
            format!("conditioning {:?} for currents {:?}", cc.shape(), c1.shape()),
        ));
    }
    add_channel_current(&mut c1, &cc);
    if let Some(skip) = skip {
        c1.add_assign(skip)?;
    }

    let (s1, lif1) = lif_forward(&c1, &block.lif1)?;
    observer.lif(&format!("{name}.lif1"), &lif1, &block.lif1);

    let folded1 = fold_time(s1.as_tensor())?;
    observer.conv(&format!("{name}.conv2"), &folded1, &block.conv2, true);
    let (c2, conv2) = conv1d_forward(&folded1, &block.conv2)?;
    let mut c2 = unfold_time(c2, steps)?;
    if block.residual {
        c2.add_assign(&c1)?;
    }
    c2.ensure_finite("block_forward")?;

    let (out, lif2) = lif_forward(&c2, &block.lif2)?;
    observer.lif(&format!("{name}.lif2"), &lif2, &block.lif2);
    Ok((
        out,
        BlockTape {
            conv1,
            lif1,
            conv2,
            lif2,
            cond,
            time_steps: steps,
        },
        c2,
    ))
}

/// `grad_skip_out` is the gradient arriving on `c2` through a level skip.
pub fn block_backward<E: Element>(
    grad_out: &Tensor<E>,
    grad_skip_out: Option<&Tensor<E>>,
    tape: BlockTape<E>,
    block: &SpikingBlock<E>,
) -> Result<BlockGrads<E>> {
    let steps = tape.time_steps;
    let lif2 = lif_backward(grad_out, tape.lif2, &block.lif2)?;
    let mut g_c2 = lif2.currents;
    if let Some(g) = grad_skip_out {
        g_c2.add_assign(g)?;
    }
    let conv2 = conv1d_backward(&fold_time(&g_c2)?, tape.conv2, &block.conv2)?;
    let g_s1 = unfold_time(conv2.x.clone(), steps)?;
    let lif1 = lif_backward(&g_s1, tape.lif1, &block.lif1)?;
    let mut g_c1 = lif1.currents;
    if block.residual {
        g_c1.add_assign(&g_c2)?;
    }
    let g_cc = reduce_channel_current(&g_c1);
    let cond = linear_backward(&g_cc, tape.cond, &block.cond)?;
    let conv1 = conv1d_backward(&fold_time(&g_c1)?, tape.conv1, &block.conv1)?;
    Ok(BlockGrads {
        input: unfold_time(conv1.x.clone(), steps)?,
        first_current: g_c1,
        cond_input: cond.x.clone(),
        conv1,
        conv2,
        lif1_m: lif1.m,
        lif2_m: lif2.m,
        cond,
    })
}
