//! Straight-line reference implementations used as test oracles. Everything
//! here is written with explicit loops over flat `Vec<f64>` buffers and
//! shares no code with the library's tensor kernels.

#![allow(dead_code)]

use sdp::unet::SpikingUNet;

pub mod checks;

pub fn theta(m: f64) -> f64 {
    m / (1.0 + m * m).sqrt()
}

/// Ramp whose derivative is the surrogate window `[0, 0.5]`.
pub fn ramp(x: f64) -> f64 {
    x.clamp(0.0, 0.5)
}

/// `x: [n, c_in, len]`, `w: [c_out, c_in, k]`.
pub fn conv1d(x: &[f64], n: usize, c_in: usize, len: usize, w: &[f64], b: &[f64], c_out: usize, k: usize, stride: usize, pad: usize) -> (Vec<f64>, usize) {
    let l_out = (len + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * c_out * l_out];
    for bi in 0..n {
        for co in 0..c_out {
            for o in 0..l_out {
                let mut acc = b[co];
                for ci in 0..c_in {
                    for j in 0..k {
                        let p = (o * stride + j) as isize - pad as isize;
                        if p >= 0 && (p as usize) < len {
                            acc += w[(co * c_in + ci) * k + j] * x[(bi * c_in + ci) * len + p as usize];
                        }
                    }
                }
                y[(bi * c_out + co) * l_out + o] = acc;
            }
        }
    }
    (y, l_out)
}

/// `x: [n, d_in]`, `w: [d_out, d_in]`.
pub fn linear(x: &[f64], n: usize, d_in: usize, w: &[f64], b: &[f64], d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * d_out];
    for r in 0..n {
        for o in 0..d_out {
            let mut acc = b[o];
            for i in 0..d_in {
                acc += w[o * d_in + i] * x[r * d_in + i];
            }
            y[r * d_out + o] = acc;
        }
    }
    y
}

/// How LIF nodes turn membrane potential into output.
pub enum SpikeMode<'a> {
    /// Heaviside spikes; each node's `(u - θ, s)` is appended to the record.
    Record(&'a mut Vec<(Vec<f64>, Vec<f64>)>),
    /// `s = s_base + r(u - θ) - r(u_base - θ_base)` with the reset driven by
    /// `s_base`; node `i` reads entry `i` of the base record.
    Smoothed(&'a [(Vec<f64>, Vec<f64>)], usize),
}

/// LIF over currents `[T, B, C, L]`.
pub fn lif(currents: &[f64], t_steps: usize, b: usize, c: usize, l: usize, tau: f64, m: &[f64], mode: &mut SpikeMode) -> Vec<f64> {
    let per = b * c * l;
    let mut u = vec![0.0; currents.len()];
    let mut s = vec![0.0; currents.len()];
    match mode {
        SpikeMode::Record(rec) => {
            for t in 0..t_steps {
                for i in 0..per {
                    let ch = (i / l) % c;
                    let prev = if t == 0 { 0.0 } else { tau * u[(t - 1) * per + i] * (1.0 - s[(t - 1) * per + i]) };
                    let idx = t * per + i;
                    u[idx] = prev + currents[idx];
                    s[idx] = if u[idx] - theta(m[ch]) >= 0.0 { 1.0 } else { 0.0 };
                }
            }
            let x = u.iter().enumerate().map(|(i, v)| v - theta(m[(i / l) % c])).collect();
            rec.push((x, s.clone()));
            s
        }
        SpikeMode::Smoothed(base, next) => {
            let (xb, sb) = &base[*next];
            *next += 1;
            for t in 0..t_steps {
                for i in 0..per {
                    let ch = (i / l) % c;
                    let th = theta(m[ch]);
                    let prev = if t == 0 { 0.0 } else { tau * u[(t - 1) * per + i] * (1.0 - sb[(t - 1) * per + i]) };
                    let idx = t * per + i;
                    u[idx] = prev + currents[idx];
                    s[idx] = sb[idx] + ramp(u[idx] - th) - ramp(xb[idx]);
                }
            }
            s
        }
    }
}

pub fn sinusoidal(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let f = 10000f64.powf(-(i as f64) / (half as f64 - 1.0));
        v[i] = (t as f64 * f).sin();
        v[half + i] = (t as f64 * f).cos();
    }
    v
}

fn data(t: &sdp::tensor::Tensor<f64>) -> &[f64] {
    t.data()
}

struct Ctx<'a, 'b> {
    t_steps: usize,
    b: usize,
    k: usize,
    mode: &'a mut SpikeMode<'b>,
}

impl Ctx<'_, '_> {
    /// Conv applied to every timestep of `[T, B, C, L]`.
    fn conv_t(&self, x: &[f64], c_in: usize, len: usize, p: &sdp::tensor::ConvParams<f64>) -> (Vec<f64>, usize) {
        conv1d(
            x,
            self.t_steps * self.b,
            c_in,
            len,
            data(&p.weight),
            data(&p.bias),
            p.c_out(),
            self.k,
            p.stride,
            p.padding,
        )
    }

    fn lif(&mut self, c: &[f64], ch: usize, len: usize, p: &sdp::lif::LifParams<f64>) -> Vec<f64> {
        lif(c, self.t_steps, self.b, ch, len, p.tau, data(&p.m), self.mode)
    }

    /// Returns `(spikes, c2)`.
    fn block(&mut self, s: &[f64], ch: usize, len: usize, emb: &[f64], cond_dim: usize, skip: Option<&[f64]>, blk: &sdp::unet::SpikingBlock<f64>) -> (Vec<f64>, Vec<f64>) {
        let (mut c1, _) = self.conv_t(s, ch, len, &blk.conv1);
        let cc = linear(emb, self.b, cond_dim, data(&blk.cond.weight), data(&blk.cond.bias), ch);
        for t in 0..self.t_steps {
            for bi in 0..self.b {
                for c in 0..ch {
                    for l in 0..len {
                        c1[((t * self.b + bi) * ch + c) * len + l] += cc[bi * ch + c];
                    }
                }
            }
        }
        if let Some(sk) = skip {
            for (a, b) in c1.iter_mut().zip(sk) {
                *a += b;
            }
        }
        let s1 = self.lif(&c1, ch, len, &blk.lif1);
        let (mut c2, _) = self.conv_t(&s1, ch, len, &blk.conv2);
        if blk.residual {
            for (a, b) in c2.iter_mut().zip(&c1) {
                *a += b;
            }
        }
        let out = self.lif(&c2, ch, len, &blk.lif2);
        (out, c2)
    }
}

/// Reference forward of the whole network. `x: [B, H, Da]`, `obs: [B, Do]`;
/// returns `[B, H, Da]`.
pub fn unet_forward(net: &SpikingUNet<f64>, x: &[f64], timesteps: &[usize], obs: &[f64], mode: &mut SpikeMode) -> Vec<f64> {
    let cfg = &net.config;
    let b = timesteps.len();
    let (h, da, t_steps, k, e) = (cfg.horizon, cfg.action_dim, cfg.time_steps, cfg.kernel, cfg.cond_dim);
    let w = &cfg.widths;
    let n = w.len();

    let temb: Vec<f64> = timesteps.iter().flat_map(|&t| sinusoidal(t, cfg.time_embed_dim)).collect();
    let te = linear(&temb, b, cfg.time_embed_dim, data(&net.time_embed.weight), data(&net.time_embed.bias), e);
    let oe = linear(obs, b, cfg.obs_dim, data(&net.obs_embed.weight), data(&net.obs_embed.bias), e);
    let emb: Vec<f64> = te.iter().zip(&oe).map(|(a, c)| a + c).collect();

    // [B, H, Da] -> [B, Da, H]
    let mut xt = vec![0.0; x.len()];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..da {
                xt[(bi * da + j) * h + i] = x[(bi * h + i) * da + j];
            }
        }
    }
    let enc = &net.encoder.conv;
    let (cur, _) = conv1d(&xt, b, da, h, data(&enc.weight), data(&enc.bias), w[0], k, enc.stride, enc.padding);
    let currents: Vec<f64> = (0..t_steps).flat_map(|_| cur.iter().copied()).collect();

    let mut ctx = Ctx { t_steps, b, k, mode };
    let mut s = ctx.lif(&currents, w[0], h, &net.encoder.lif);
    let mut len = h;
    let mut skips = Vec::new();
    for i in 0..n {
        let (out, c2) = ctx.block(&s, w[i], len, &emb, e, None, &net.down[i]);
        skips.push(c2);
        s = out;
        if i + 1 < n {
            let (c, l_out) = ctx.conv_t(&s, w[i], len, &net.downsample[i].0);
            len = l_out;
            s = ctx.lif(&c, w[i + 1], len, &net.downsample[i].1);
        }
    }
    s = ctx.block(&s, w[n - 1], len, &emb, e, None, &net.mid).0;
    for i in (0..n).rev() {
        s = ctx.block(&s, w[i], len, &emb, e, Some(&skips[i]), &net.up[i]).0;
        if i > 0 {
            let rep: Vec<f64> = s.iter().flat_map(|&v| [v, v]).collect();
            len *= 2;
            let (c, _) = ctx.conv_t(&rep, w[i], len, &net.upsample[i - 1].0);
            s = ctx.lif(&c, w[i - 1], len, &net.upsample[i - 1].1);
        }
    }
    let dec = &net.decoder.conv;
    let (per, _) = ctx.conv_t(&s, w[0], h, dec);
    // mean over T, then [B, Da, H] -> [B, H, Da]
    let mut y = vec![0.0; b * h * da];
    for t in 0..t_steps {
        for bi in 0..b {
            for j in 0..da {
                for i in 0..h {
                    y[(bi * h + i) * da + j] += per[((t * b + bi) * da + j) * h + i] / t_steps as f64;
                }
            }
        }
    }
    y
}

/// Smallest distance of any recorded `u - θ` from the surrogate kinks 0 and 0.5.
pub fn kink_margin(record: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    record
        .iter()
        .flat_map(|(x, _)| x)
        .map(|x| x.abs().min((x - 0.5).abs()))
        .fold(f64::INFINITY, f64::min)
}
