use super::block::{block_backward, block_forward, BlockTape};
use super::{LayerObserver, SpikingUNet};
use crate::codec::{decode, decode_backward, encode, encode_backward, fold_time, unfold_time, DecodeTape, EncodeTape};
use crate::error::{Error, Result};
use crate::lif::{lif_backward, lif_forward, LifParams, LifTape, SpikeTrain};
use crate::tensor::{
    add, conv1d_backward, conv1d_forward, linear_backward, linear_forward, ConvParams, ConvTape, Element, LinearTape,
    Tensor,
};

/// `[sin(t·f_i), cos(t·f_i)]` with `f_i = 10000^(-i/(half-1))`, one row per timestep.
pub fn sinusoidal_embedding<E: Element>(timesteps: &[usize], dim: usize) -> Tensor<E> {
    let half = dim / 2;
    let scale = (10000f64).ln() / (half as f64 - 1.0);
    let mut data = Vec::with_capacity(timesteps.len() * dim);
    for &t in timesteps {
        let t = t as f64;
        let freqs = (0..half).map(|i| (-(i as f64) * scale).exp());
        data.extend(freqs.clone().map(|f| E::from_f64_lossy((t * f).sin())));
        data.extend(freqs.map(|f| E::from_f64_lossy((t * f).cos())));
    }
    Tensor::new(vec![timesteps.len(), dim], data).expect("embedding shape")
}

/// `[B, X, Y] -> [B, Y, X]`
fn swap_last<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let s = x.shape();
    let (b, r, c) = (s[0], s[1], s[2]);
    let mut out = vec![E::zero(); x.len()];
    let d = x.data();
    for bi in 0..b {
        for i in 0..r {
            for j in 0..c {
                out[bi * r * c + j * r + i] = d[bi * r * c + i * c + j];
            }
        }
    }
    Tensor::new(vec![b, c, r], out).expect("transpose shape")
}

/// Nearest-neighbour ×2 repeat along the last axis.
fn repeat2<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let l = *x.shape().last().unwrap();
    let mut data = Vec::with_capacity(x.len() * 2);
    for row in x.data().chunks(l) {
        for &v in row {
            data.push(v);
            data.push(v);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() *= 2;
    Tensor::new(shape, data).expect("repeat shape")
}

fn repeat2_backward<E: Element>(g: &Tensor<E>) -> Tensor<E> {
    let data: Vec<E> = g.data().chunks(2).map(|p| p[0] + p[1]).collect();
    let mut shape = g.shape().to_vec();
    *shape.last_mut().unwrap() /= 2;
    Tensor::new(shape, data).expect("repeat shape")
}

#[derive(Debug)]
struct ResampleTape<E> {
    conv: ConvTape<E>,
    lif: LifTape<E>,
    steps: usize,
}

fn resample_forward<E: Element>(
    s: &SpikeTrain<E>,
    params: &(ConvParams<E>, LifParams<E>),
    upsample: bool,
    name: &str,
    observer: &mut dyn LayerObserver<E>,
) -> Result<(SpikeTrain<E>, ResampleTape<E>)> {
    let steps = s.time_steps();
    let mut x = fold_time(s.as_tensor())?;
    if upsample {
        x = repeat2(&x);
    } else if x.shape()[2] % 2 != 0 {
        return Err(Error::shape("downsample", format!("odd length {}", x.shape()[2])));
    }
    observer.conv(&format!("{name}.conv"), &x, &params.0, true);
    let (c, conv) = conv1d_forward(&x, &params.0)?;
    let c = unfold_time(c, steps)?;
    let (out, lif) = lif_forward(&c, &params.1)?;
    observer.lif(&format!("{name}.lif"), &lif, &params.1);
    Ok((out, ResampleTape { conv, lif, steps }))
}

fn resample_backward<E: Element>(
    g: &Tensor<E>,
    tape: ResampleTape<E>,
    params: &(ConvParams<E>, LifParams<E>),
    upsample: bool,
    grads: &mut (ConvParams<E>, LifParams<E>),
) -> Result<Tensor<E>> {
    let lif = lif_backward(g, tape.lif, &params.1)?;
    let conv = conv1d_backward(&fold_time(&lif.currents)?, tape.conv, &params.0)?;
    grads.0.weight = conv.weight;
    grads.0.bias = conv.bias;
    grads.1.m = lif.m;
    let gx = if upsample { repeat2_backward(&conv.x) } else { conv.x };
    unfold_time(gx, tape.steps)
}

/// Everything recorded by [`SpikingUNet::forward`] that the backward pass needs.
#[derive(Debug)]
pub struct UNetTape<E = f32> {
    time_embed: LinearTape<E>,
    obs_embed: LinearTape<E>,
    encode: EncodeTape<E>,
    down: Vec<BlockTape<E>>,
    downsample: Vec<ResampleTape<E>>,
    mid: BlockTape<E>,
    /// Indexed by level, not by execution order.
    up: Vec<Option<BlockTape<E>>>,
    upsample: Vec<Option<ResampleTape<E>>>,
    decode: DecodeTape<E>,
    batch: usize,
}

impl<E: Element> SpikingUNet<E> {
    /// Shared conditioning vector `[B, cond_dim]` from timesteps and observations.
    fn embed(
        &self,
        timesteps: &[usize],
        obs: &Tensor<E>,
        observer: &mut dyn LayerObserver<E>,
    ) -> Result<(Tensor<E>, LinearTape<E>, LinearTape<E>)> {
        let temb = sinusoidal_embedding::<E>(timesteps, self.config.time_embed_dim);
        observer.linear("time_embed", &temb, &self.time_embed);
        let (te, t_tape) = linear_forward(&temb, &self.time_embed)?;
        observer.linear("obs_embed", obs, &self.obs_embed);
        let (oe, o_tape) = linear_forward(obs, &self.obs_embed)?;
        Ok((add(&te, &oe)?, t_tape, o_tape))
    }

    fn check_inputs(&self, x: &Tensor<E>, timesteps: &[usize], obs: &Tensor<E>) -> Result<usize> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 3 || s[1] != c.horizon || s[2] != c.action_dim {
            return Err(Error::shape(
                "unet_forward",
                format!("input {s:?}, expected [B, {}, {}]", c.horizon, c.action_dim),
            ));
        }
        let b = s[0];
        if timesteps.len() != b {
            return Err(Error::shape("unet_forward", format!("{} timesteps for batch {b}", timesteps.len())));
        }
        if obs.shape() != [b, c.obs_dim] {
            return Err(Error::shape(
                "unet_forward",
                format!("observations {:?}, expected [{b}, {}]", obs.shape(), c.obs_dim),
            ));
        }
        Ok(b)
    }

    /// Predicts the noise in `x_noisy: [B, H, Da]` at per-sample diffusion
    /// steps `timesteps`, conditioned on `obs: [B, obs_dim]`.
    pub fn forward(&self, x_noisy: &Tensor<E>, timesteps: &[usize], obs: &Tensor<E>) -> Result<(Tensor<E>, UNetTape<E>)> {
        self.forward_observed(x_noisy, timesteps, obs, &mut super::NoObserver)
    }

    pub fn forward_observed(
        &self,
        x_noisy: &Tensor<E>,
        timesteps: &[usize],
        obs: &Tensor<E>,
        observer: &mut dyn LayerObserver<E>,
    ) -> Result<(Tensor<E>, UNetTape<E>)> {
        let batch = self.check_inputs(x_noisy, timesteps, obs)?;
        let n = self.config.levels();
        let (emb, time_embed, obs_embed) = self.embed(timesteps, obs, observer)?;

        let x = swap_last(x_noisy);
        observer.conv("enc.conv", &x, &self.encoder.conv, false);
        let (mut s, encode_tape) = encode(&x, &self.encoder)?;
        observer.lif("enc.lif", encode_tape.lif(), &self.encoder.lif);

        let mut skips = Vec::with_capacity(n);
        let mut down = Vec::with_capacity(n);
        let mut downsample = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let (out, tape, c2) = block_forward(&s, &emb, None, &self.down[i], &format!("down{i}"), observer)?;
            skips.push(c2);
            down.push(tape);
            s = out;
            if i + 1 < n {
                let (out, tape) = resample_forward(&s, &self.downsample[i], false, &format!("downsample{i}"), observer)?;
                downsample.push(tape);
                s = out;
            }
        }

        let (out, mid, _) = block_forward(&s, &emb, None, &self.mid, "mid", observer)?;
        s = out;

        let mut up: Vec<Option<BlockTape<E>>> = (0..n).map(|_| None).collect();
        let mut upsample: Vec<Option<ResampleTape<E>>> = (0..n.saturating_sub(1)).map(|_| None).collect();
        for i in (0..n).rev() {
            let (out, tape, _) = block_forward(&s, &emb, Some(&skips[i]), &self.up[i], &format!("up{i}"), observer)?;
            up[i] = Some(tape);
            s = out;
            if i > 0 {
                let (out, tape) = resample_forward(&s, &self.upsample[i - 1], true, &format!("upsample{}", i - 1), observer)?;
                upsample[i - 1] = Some(tape);
                s = out;
            }
        }

        observer.conv("dec.conv", &fold_time(s.as_tensor())?, &self.decoder.conv, true);
        let (y, decode_tape) = decode(&s, &self.decoder)?;
        let y = swap_last(&y);
        y.ensure_finite("unet_forward")?;
        Ok((
            y,
            UNetTape {
                time_embed,
                obs_embed,
                encode: encode_tape,
                down,
                downsample,
                mid,
                up,
                upsample,
                decode: decode_tape,
                batch,
            },
        ))
    }

    /// Gradients of every parameter given dL/dε̂, in a network-shaped container.
    pub fn backward(&self, grad_out: &Tensor<E>, tape: UNetTape<E>) -> Result<SpikingUNet<E>> {
        let c = &self.config;
        if grad_out.shape() != [tape.batch, c.horizon, c.action_dim] {
            return Err(Error::shape(
                "unet_backward",
                format!("grad {:?} for batch {}", grad_out.shape(), tape.batch),
            ));
        }
        let n = c.levels();
        let mut grads = self.zeros_like();
        let mut g_emb = Tensor::zeros(&[tape.batch, c.cond_dim]);

        let dec = decode_backward(&swap_last(grad_out), tape.decode, &self.decoder)?;
        grads.decoder.conv.weight = dec.weight;
        grads.decoder.conv.bias = dec.bias;
        let mut g = dec.spikes;

        let mut skip_grads: Vec<Option<Tensor<E>>> = (0..n).map(|_| None).collect();
        let mut up_tapes = tape.up;
        let mut upsample_tapes = tape.upsample;
        for i in 0..n {
            let t = up_tapes[i].take().ok_or(Error::MissingTape("up block"))?;
            let bg = block_backward(&g, None, t, &self.up[i])?;
            store_block(&mut grads.up[i], &bg);
            g_emb.add_assign(&bg.cond_input)?;
            skip_grads[i] = Some(bg.first_current);
            g = bg.input;
            if i + 1 < n {
                let t = upsample_tapes[i].take().ok_or(Error::MissingTape("upsample"))?;
                g = resample_backward(&g, t, &self.upsample[i], true, &mut grads.upsample[i])?;
            }
        }

        let bg = block_backward(&g, None, tape.mid, &self.mid)?;
        store_block(&mut grads.mid, &bg);
        g_emb.add_assign(&bg.cond_input)?;
        g = bg.input;

        let mut down_tapes = tape.down;
        let mut downsample_tapes = tape.downsample;
        for i in (0..n).rev() {
            if i + 1 < n {
                let t = downsample_tapes.pop().ok_or(Error::MissingTape("downsample"))?;
                g = resample_backward(&g, t, &self.downsample[i], false, &mut grads.downsample[i])?;
            }
            let t = down_tapes.pop().ok_or(Error::MissingTape("down block"))?;
            let bg = block_backward(&g, skip_grads[i].as_ref(), t, &self.down[i])?;
            store_block(&mut grads.down[i], &bg);
            g_emb.add_assign(&bg.cond_input)?;
            g = bg.input;
        }

        let eg = encode_backward(&g, tape.encode, &self.encoder)?;
        grads.encoder.conv.weight = eg.conv.weight;
        grads.encoder.conv.bias = eg.conv.bias;
        grads.encoder.lif.m = eg.m;

        let tg = linear_backward(&g_emb, tape.time_embed, &self.time_embed)?;
        grads.time_embed.weight = tg.weight;
        grads.time_embed.bias = tg.bias;
        let og = linear_backward(&g_emb, tape.obs_embed, &self.obs_embed)?;
        grads.obs_embed.weight = og.weight;
        grads.obs_embed.bias = og.bias;
        Ok(grads)
    }
}

fn store_block<E: Element>(dst: &mut super::SpikingBlock<E>, g: &super::BlockGrads<E>) {
    dst.conv1.weight = g.conv1.weight.clone();
    dst.conv1.bias = g.conv1.bias.clone();
    dst.conv2.weight = g.conv2.weight.clone();
    dst.conv2.bias = g.conv2.bias.clone();
    dst.lif1.m = g.lif1_m.clone();
    dst.lif2.m = g.lif2_m.clone();
    dst.cond.weight = g.cond.weight.clone();
    dst.cond.bias = g.cond.bias.clone();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::UNetConfig;

    fn tiny() -> UNetConfig {
        UNetConfig {
            widths: vec![4, 8],
            horizon: 8,
            time_steps: 2,
            time_embed_dim: 8,
            cond_dim: 8,
            ..UNetConfig::default()
        }
    }

    #[test]
    fn output_shape_matches_input() {
        for (b, h, da) in [(1, 16, 2), (2, 16, 2), (2, 32, 7)] {
            let cfg = UNetConfig {
                widths: vec![4, 8],
                horizon: h,
                action_dim: da,
                ..UNetConfig::default()
            };
            let net = SpikingUNet::<f32>::new(&cfg, 0).unwrap();
            let x = Tensor::full(&[b, h, da], 0.3);
            let obs = Tensor::zeros(&[b, cfg.obs_dim]);
            let (y, _) = net.forward(&x, &vec![5; b], &obs).unwrap();
            assert_eq!(y.shape(), &[b, h, da]);
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = tiny();
        let mut net = SpikingUNet::<f32>::zeros(&cfg).unwrap();
        // θ = 0 would fire on zero current, so use positive thresholds.
        net.for_each_param_mut(|name, t| {
            if name.ends_with(".m") {
                t.fill(0.7)
            }
        });
        let x = Tensor::full(&[2, 8, 2], 1.0);
        let (y, _) = net.forward(&x, &[3, 7], &Tensor::full(&[2, 12], 1.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = tiny();
        let net = SpikingUNet::<f32>::new(&cfg, 1).unwrap();
        let obs = Tensor::zeros(&[1, 12]);
        assert!(net.forward(&Tensor::zeros(&[1, 6, 2]), &[0], &obs).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 8, 2]), &[0, 1], &obs).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 8, 2]), &[0], &Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn up_down_shapes() {
        let mut down = (ConvParams::<f32>::zeros(3, 2, 1, 2, 0), LifParams::uniform(3, 0.5, 0.7));
        down.0.weight.fill(1.0);
        let s = SpikeTrain::new(Tensor::from_f64(&[1, 1, 2, 4], &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let (_, tape) = resample_forward(&s, &down, false, "d", &mut crate::unet::NoObserver).unwrap();
        // stride-2, k=1, unit weights: channel sums of [1,0,1,0] and zeros at even positions
        let c = tape.lif.membrane();
        assert_eq!(c.shape(), &[1, 1, 3, 2]);
        assert_eq!(&c.data()[..2], &[1.0, 1.0]);

        let upp = (ConvParams::<f32>::same(2, 3, 3), LifParams::uniform(2, 0.5, 0.7));
        let (out, _) = resample_forward(&SpikeTrain::zeros(&[2, 1, 3, 8]), &upp, true, "u", &mut crate::unet::NoObserver).unwrap();
        assert_eq!(out.shape(), &[2, 1, 2, 16]);

        let odd = SpikeTrain::<f32>::zeros(&[1, 1, 2, 5]);
        assert!(resample_forward(&odd, &down, false, "d", &mut crate::unet::NoObserver).is_err());
    }

    #[test]
    fn deterministic_forward() {
        let cfg = tiny();
        let net = SpikingUNet::<f32>::new(&cfg, 9).unwrap();
        let x = Tensor::from_f64(&[1, 8, 2], &(0..16).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        let obs = Tensor::full(&[1, 12], 0.2);
        let (a, _) = net.forward(&x, &[42], &obs).unwrap();
        let (b, _) = net.forward(&x, &[42], &obs).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn every_parameter_gets_a_gradient() {
        let cfg = tiny();
        let net = SpikingUNet::<f64>::new(&cfg, 2).unwrap();
        let x = Tensor::full(&[2, 8, 2], 0.5);
        let obs = Tensor::full(&[2, 12], 0.1);
        let (y, tape) = net.forward(&x, &[1, 2], &obs).unwrap();
        let grads = net.backward(&Tensor::zeros(y.shape()), tape).unwrap();
        let names: Vec<_> = grads.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, net.named_params().into_iter().map(|(n, _)| n).collect::<Vec<_>>());
        assert!(grads.named_params().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }
}
