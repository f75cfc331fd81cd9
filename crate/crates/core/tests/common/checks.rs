//! Measurements shared by the unit tests and the acceptance report. Each
//! function returns the measured error so the caller decides the tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdp::lif::{dtheta_dm, lif_backward, lif_forward, surrogate_scalar, theta_of_m, LifParams, LifTape};
use sdp::tensor::{
    add, add_backward, conv1d_backward, conv1d_forward, linear_backward, linear_forward, mean_over_axis,
    mean_over_axis_backward, scale, scale_backward, ConvParams, LinearParams, Tensor,
};
use sdp::energy::{count_aops, estimate_energy, measure_firing_rate, EnergyConstants, InstrumentedCounter};
use sdp::unet::{LayerObserver, SpikingUNet, UNetConfig};

use super::{kink_margin, theta, unet_forward, SpikeMode};

pub const FD_STEP: f64 = 1e-4;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let fp = f(&p);
            p.data_mut()[i] -= 2.0 * h;
            let fm = f(&p);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `(label, relative error)` for conv1d over three shapes and every input.
pub fn conv_fd_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    // (batch, c_in, c_out, len, k, stride, pad)
    for &(b, ci, co, l, k, stride, pad) in &[(2, 3, 4, 7, 3, 1, 1), (1, 2, 5, 9, 5, 2, 2), (3, 1, 2, 6, 3, 2, 0)] {
        let x = rand_tensor(&mut rng, &[b, ci, l]);
        let p = ConvParams::new(rand_tensor(&mut rng, &[co, ci, k]), rand_tensor(&mut rng, &[co]), stride, pad).unwrap();
        let (y, tape) = conv1d_forward(&x, &p).unwrap();
        let w = rand_tensor(&mut rng, y.shape());
        let g = conv1d_backward(&w, tape, &p).unwrap();
        let loss = |x: &Tensor<f64>, p: &ConvParams<f64>| dot(&conv1d_forward(x, p).unwrap().0, &w);

        let nx = numeric_grad(&x, FD_STEP, |x| loss(x, &p));
        let nw = numeric_grad(&p.weight, FD_STEP, |wt| {
            loss(&x, &ConvParams::new(wt.clone(), p.bias.clone(), stride, pad).unwrap())
        });
        let nb = numeric_grad(&p.bias, FD_STEP, |bt| {
            loss(&x, &ConvParams::new(p.weight.clone(), bt.clone(), stride, pad).unwrap())
        });
        let tag = format!("conv [{b},{ci},{l}] k{k} s{stride}");
        out.push((format!("{tag} x"), rel_err(g.x.data(), &nx)));
        out.push((format!("{tag} w"), rel_err(g.weight.data(), &nw)));
        out.push((format!("{tag} b"), rel_err(g.bias.data(), &nb)));
    }
    out
}

pub fn linear_fd_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    for &(n, di, d_o) in &[(1, 3, 2), (4, 5, 7), (6, 1, 3)] {
        let x = rand_tensor(&mut rng, &[n, di]);
        let p = LinearParams {
            weight: rand_tensor(&mut rng, &[d_o, di]),
            bias: rand_tensor(&mut rng, &[d_o]),
        };
        let (y, tape) = linear_forward(&x, &p).unwrap();
        let w = rand_tensor(&mut rng, y.shape());
        let g = linear_backward(&w, tape, &p).unwrap();
        let loss = |x: &Tensor<f64>, p: &LinearParams<f64>| dot(&linear_forward(x, p).unwrap().0, &w);
        let nx = numeric_grad(&x, FD_STEP, |x| loss(x, &p));
        let nw = numeric_grad(&p.weight, FD_STEP, |wt| {
            loss(&x, &LinearParams { weight: wt.clone(), bias: p.bias.clone() })
        });
        let nb = numeric_grad(&p.bias, FD_STEP, |bt| {
            loss(&x, &LinearParams { weight: p.weight.clone(), bias: bt.clone() })
        });
        let tag = format!("linear [{n},{di}]->{d_o}");
        out.push((format!("{tag} x"), rel_err(g.x.data(), &nx)));
        out.push((format!("{tag} w"), rel_err(g.weight.data(), &nw)));
        out.push((format!("{tag} b"), rel_err(g.bias.data(), &nb)));
    }
    out
}

/// add (same shape and broadcast), scale and mean_over_axis.
pub fn elementwise_fd_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for (xs, ys) in [(vec![3, 4], vec![3, 4]), (vec![2, 3, 5], vec![3, 5]), (vec![5, 2], vec![2])] {
        let x = rand_tensor(&mut rng, &xs);
        let y = rand_tensor(&mut rng, &ys);
        let w = rand_tensor(&mut rng, &xs);
        let (gx, gy) = add_backward(&w, &ys).unwrap();
        let nx = numeric_grad(&x, FD_STEP, |x| dot(&add(x, &y).unwrap(), &w));
        let ny = numeric_grad(&y, FD_STEP, |y| dot(&add(&x, y).unwrap(), &w));
        out.push((format!("add {xs:?}+{ys:?} x"), rel_err(gx.data(), &nx)));
        out.push((format!("add {xs:?}+{ys:?} y"), rel_err(gy.data(), &ny)));

        let s = rng.gen_range(-2.0..2.0);
        let g = scale_backward(&w, s);
        let n = numeric_grad(&x, FD_STEP, |x| dot(&scale(x, s).unwrap(), &w));
        out.push((format!("scale {xs:?}"), rel_err(g.data(), &n)));
    }
    for shape in [vec![4, 3], vec![2, 3, 4], vec![3, 1, 2, 5]] {
        let x = rand_tensor(&mut rng, &shape);
        let axis = rng.gen_range(0..shape.len());
        let y = mean_over_axis(&x, axis).unwrap();
        let w = rand_tensor(&mut rng, y.shape());
        let g = mean_over_axis_backward(&w, &shape, axis).unwrap();
        let n = numeric_grad(&x, FD_STEP, |x| dot(&mean_over_axis(x, axis).unwrap(), &w));
        out.push((format!("mean axis {axis} of {shape:?}"), rel_err(g.data(), &n)));
    }
    out
}

/// Two neurons (one per channel), three steps, unrolled by hand with the
/// reset factor held constant in the backward pass. Returns the largest
/// absolute deviation over current and threshold gradients.
pub fn lif_hand_unrolled_error() -> f64 {
    let tau = 0.5;
    let m = [1.0 / 3f64.sqrt(), 0.2];
    let currents = [[0.7, 0.1], [0.3, 0.9], [0.4, 0.2]]; // [t][neuron]
    let g = [[0.3, -1.1], [0.8, 0.5], [-0.6, 1.7]];
    let sg = |x: f64| if (0.0..=0.5).contains(&x) { 1.0 } else { 0.0 };
    let h = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };

    let mut want_i = [[0.0; 2]; 3];
    let mut want_m = [0.0; 2];
    let mut want_s = [[0.0; 2]; 3];
    for n in 0..2 {
        let th = theta(m[n]);
        let u1 = currents[0][n];
        let s1 = h(u1 - th);
        let u2 = tau * u1 * (1.0 - s1) + currents[1][n];
        let s2 = h(u2 - th);
        let u3 = tau * u2 * (1.0 - s2) + currents[2][n];
        let s3 = h(u3 - th);
        want_s[0][n] = s1;
        want_s[1][n] = s2;
        want_s[2][n] = s3;

        let du3 = g[2][n] * sg(u3 - th);
        let du2 = g[1][n] * sg(u2 - th) + du3 * tau * (1.0 - s2);
        let du1 = g[0][n] * sg(u1 - th) + du2 * tau * (1.0 - s1);
        want_i[0][n] = du1;
        want_i[1][n] = du2;
        want_i[2][n] = du3;
        let dtheta = -(g[0][n] * sg(u1 - th) + g[1][n] * sg(u2 - th) + g[2][n] * sg(u3 - th));
        want_m[n] = dtheta / (1.0 + m[n] * m[n]).powf(1.5);
    }
    // the chosen currents exercise both sides of the window and a reset
    assert_eq!(want_s, [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    assert!(want_m.iter().all(|v| *v != 0.0));

    let params = LifParams::new(tau, Tensor::from_f64(&[2], &m).unwrap()).unwrap();
    let cur = Tensor::from_f64(&[3, 1, 2], &currents.concat()).unwrap();
    let (s, tape) = lif_forward(&cur, &params).unwrap();
    if s.as_tensor().data() != &want_s.concat()[..] {
        return f64::INFINITY;
    }
    let grads = lif_backward(&Tensor::from_f64(&[3, 1, 2], &g.concat()).unwrap(), tape, &params).unwrap();
    grads
        .currents
        .data()
        .iter()
        .zip(want_i.concat())
        .chain(grads.m.data().iter().zip(want_m))
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max)
}

pub fn randomize(net: &mut SpikingUNet<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    net.for_each_param_mut(|name, t| {
        for v in t.data_mut() {
            *v = if name.ends_with(".m") { rng.gen_range(0.2..1.0) } else { rng.gen_range(-scale..scale) };
        }
    });
}

pub fn unet_inputs(cfg: &UNetConfig, b: usize, rng: &mut ChaCha8Rng) -> (Tensor<f64>, Vec<usize>, Tensor<f64>) {
    let x = Tensor::new(
        vec![b, cfg.horizon, cfg.action_dim],
        (0..b * cfg.horizon * cfg.action_dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap();
    let t = (0..b).map(|_| rng.gen_range(0..100)).collect();
    let obs = Tensor::new(vec![b, cfg.obs_dim], (0..b * cfg.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    (x, t, obs)
}

fn bump(net: &mut SpikingUNet<f64>, param: usize, elem: usize, delta: f64) {
    let mut k = 0;
    net.for_each_param_mut(|_, tensor| {
        if k == param {
            tensor.data_mut()[elem] += delta;
        }
        k += 1;
    });
}

pub struct UnetFd {
    /// Worst per-tensor relative error, with the tensor's name.
    pub worst: (String, f64),
    pub overall: f64,
    pub grad_norm: f64,
    pub m_grad_norm: f64,
}

/// Full U-Net backward against central differences of the smoothed forward
/// pass, on a draw where every LIF layer has an entry inside the surrogate
/// window and no entry within 1e-4 of a kink.
pub fn unet_fd(widths: Vec<usize>, seed: u64) -> UnetFd {
    let cfg = UNetConfig {
        widths,
        horizon: 4,
        time_steps: 2,
        time_embed_dim: 4,
        cond_dim: 3,
        ..UNetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut net, x, t, obs, record) = loop {
        let mut net = SpikingUNet::<f64>::zeros(&cfg).unwrap();
        randomize(&mut net, &mut rng, 0.9);
        let (x, t, obs) = unet_inputs(&cfg, 2, &mut rng);
        let mut record = Vec::new();
        unet_forward(&net, x.data(), &t, obs.data(), &mut SpikeMode::Record(&mut record));
        let live = record.iter().all(|(x, _)| x.iter().any(|v| (0.0..=0.5).contains(v)));
        if live && kink_margin(&record) > 1e-4 {
            break (net, x, t, obs, record);
        }
    };
    let (y, tape) = net.forward(&x, &t, &obs).unwrap();
    let w = Tensor::new(y.shape().to_vec(), (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let grads = net.backward(&w, tape).unwrap();

    let loss = |net: &SpikingUNet<f64>| -> f64 {
        let out = unet_forward(net, x.data(), &t, obs.data(), &mut SpikeMode::Smoothed(&record, 0));
        out.iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    let analytic = grads.named_params();
    let mut total_a = Vec::new();
    let mut total_n = Vec::new();
    let mut worst = (String::new(), 0.0);
    for (pi, name) in names.iter().enumerate() {
        let len = analytic[pi].1.len();
        let mut numeric = Vec::with_capacity(len);
        for e in 0..len {
            bump(&mut net, pi, e, h);
            let fp = loss(&net);
            bump(&mut net, pi, e, -2.0 * h);
            let fm = loss(&net);
            bump(&mut net, pi, e, h);
            numeric.push((fp - fm) / (2.0 * h));
        }
        let a = analytic[pi].1.data();
        let err = rel_err(a, &numeric);
        if err >= worst.1 {
            worst = (name.clone(), err);
        }
        total_a.extend_from_slice(a);
        total_n.extend(numeric);
    }
    UnetFd {
        worst,
        overall: rel_err(&total_a, &total_n),
        grad_norm: total_a.iter().map(|v| v * v).sum::<f64>().sqrt(),
        m_grad_norm: analytic
            .iter()
            .filter(|(n, _)| n.ends_with(".m"))
            .flat_map(|(_, t)| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt(),
    }
}

/// Double-double arithmetic, enough for a ~1e-30 relative reference.
#[derive(Clone, Copy)]
struct Dd(f64, f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        let e = s.1 + self.1 + o.1;
        two_sum(s.0, e)
    }
    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p) + self.0 * o.1 + self.1 * o.0;
        two_sum(p, e)
    }
    fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd(-q1, 0.0)));
        let q2 = r.0 / o.0;
        let r = r.add(o.mul(Dd(-q2, 0.0)));
        let q3 = r.0 / o.0;
        Dd(q1, 0.0).add(Dd(q2, 0.0)).add(Dd(q3, 0.0))
    }
    fn sqrt(self) -> Dd {
        let y = Dd(self.0.sqrt(), 0.0);
        // one Newton step in double-double: y + (x - y²) / 2y
        let r = self.add(y.mul(y).mul(Dd(-1.0, 0.0)));
        y.add(r.div(y.mul(Dd(2.0, 0.0))))
    }
}

pub fn theta_ref(m: f64) -> f64 {
    let m = Dd(m, 0.0);
    m.div(Dd(1.0, 0.0).add(m.mul(m)).sqrt()).0
}

pub fn dtheta_ref(m: f64) -> f64 {
    let m = Dd(m, 0.0);
    let q = Dd(1.0, 0.0).add(m.mul(m));
    Dd(1.0, 0.0).div(q.mul(q.sqrt())).0
}

/// Largest absolute deviation of `(θ, dθ/dm)` from the double-double
/// reference over 1000 points mixing small, moderate and large `m`.
pub fn theta_reference_error() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m: Vec<f64> = (0..1000)
        .map(|i| match i % 3 {
            0 => rng.gen_range(-3.0..3.0),
            1 => rng.gen_range(-100.0..100.0),
            _ => rng.gen_range(-1e-3..1e-3),
        })
        .collect();
    let mt = Tensor::new(vec![m.len()], m.clone()).unwrap();
    let th = theta_of_m(&mt).unwrap();
    let d = dtheta_dm(&mt).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    for (i, &mi) in m.iter().enumerate() {
        worst.0 = worst.0.max((th.data()[i] - theta_ref(mi)).abs());
        worst.1 = worst.1.max((d.data()[i] - dtheta_ref(mi)).abs());
    }
    worst
}

/// `(out of (-1, 1), monotonicity breaks)` over `n` sorted draws in
/// `[-50, 50]`, counted in both f64 and f32.
pub fn theta_range_violations(n: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut m: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
    m.sort_by(f64::total_cmp);
    let th = theta_of_m(&Tensor::new(vec![m.len()], m.clone()).unwrap()).unwrap();
    let m32: Vec<f32> = m.iter().map(|&v| v as f32).collect();
    let th32 = theta_of_m(&Tensor::new(vec![m32.len()], m32).unwrap()).unwrap();
    let bounds = th.data().iter().filter(|&&t| !(t > -1.0 && t < 1.0)).count()
        + th32.data().iter().filter(|&&t| !(t > -1.0 && t < 1.0)).count();
    let breaks = th.data().windows(2).filter(|w| w[0] > w[1]).count()
        + th32.data().windows(2).filter(|w| w[0] > w[1]).count();
    (bounds, breaks)
}

/// Surrogate values at and just beyond both window edges, in f64 and f32.
pub fn surrogate_boundaries_exact() -> bool {
    surrogate_scalar(0.0f64) == 1.0
        && surrogate_scalar(0.5f64) == 1.0
        && surrogate_scalar(0.25f64) == 1.0
        && surrogate_scalar(-f64::MIN_POSITIVE) == 0.0
        && surrogate_scalar(f64::from_bits(0.5f64.to_bits() + 1)) == 0.0
        && surrogate_scalar(0.0f32) == 1.0
        && surrogate_scalar(0.5f32) == 1.0
        && surrogate_scalar(-f32::MIN_POSITIVE) == 0.0
        && surrogate_scalar(f32::from_bits(0.5f32.to_bits() + 1)) == 0.0
}

#[derive(Default)]
pub struct BinaryAudit {
    pub spiking_inputs: usize,
    pub lif_outputs: usize,
    pub violations: Vec<String>,
}

impl LayerObserver<f32> for BinaryAudit {
    fn conv(&mut self, name: &str, input: &Tensor<f32>, _params: &ConvParams<f32>, spiking: bool) {
        if spiking {
            self.spiking_inputs += 1;
            if let Some(v) = input.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                self.violations.push(format!("{name} input {v}"));
            }
        }
    }
    fn lif(&mut self, name: &str, tape: &LifTape<f32>, _params: &LifParams<f32>) {
        self.lif_outputs += 1;
        if let Some(v) = tape.spikes().data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            self.violations.push(format!("{name} output {v}"));
        }
    }
}

pub struct AuditSummary {
    pub passes: usize,
    pub edges_checked: usize,
    pub lif_layers_per_pass: Vec<usize>,
    pub violations: Vec<String>,
}

/// Forward passes of a `[4, 8]` U-Net with parameters redrawn every ten
/// passes at random gains, thresholds of either sign and input scales up to
/// ten, auditing every spike-carrying edge.
pub fn binary_audit(passes: usize) -> AuditSummary {
    let cfg = UNetConfig {
        widths: vec![4, 8],
        horizon: 8,
        time_steps: 4,
        time_embed_dim: 8,
        cond_dim: 8,
        ..UNetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut net = SpikingUNet::<f32>::new(&cfg, 0).unwrap();
    let mut summary = AuditSummary {
        passes,
        edges_checked: 0,
        lif_layers_per_pass: Vec::new(),
        violations: Vec::new(),
    };
    for pass in 0..passes {
        if pass % 10 == 0 {
            let gain = rng.gen_range(0.1f32..3.0);
            net.for_each_param_mut(|name, t| {
                for v in t.data_mut() {
                    *v = if name.ends_with(".m") { rng.gen_range(-2.0..2.0) } else { gain * rng.gen_range(-1.0..1.0) };
                }
            });
        }
        let b = rng.gen_range(1..4);
        let scale = rng.gen_range(0.1f32..10.0);
        let x = Tensor::new(vec![b, 8, 2], (0..b * 16).map(|_| scale * rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let t: Vec<usize> = (0..b).map(|_| rng.gen_range(0..100)).collect();
        let obs = Tensor::new(vec![b, 12], (0..b * 12).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let mut audit = BinaryAudit::default();
        net.forward_observed(&x, &t, &obs, &mut audit).unwrap();
        summary.edges_checked += audit.spiking_inputs + audit.lif_outputs;
        summary.lif_layers_per_pass.push(audit.lif_outputs);
        summary.violations.extend(audit.violations.into_iter().map(|v| format!("pass {pass}: {v}")));
    }
    summary
}

pub struct EnergyCheck {
    /// `(layer, closed form × calls, instrumented multiplies)` where they differ.
    pub aops_mismatches: Vec<(String, u64, u64)>,
    pub layers: usize,
    /// Σ over spike-input layers of `T_S·ψ·AOPs`, from the report.
    pub sops_formula: f64,
    /// Accumulates counted one spike and one in-range tap at a time.
    pub accumulates: u64,
}

impl EnergyCheck {
    pub fn sops_rel_gap(&self) -> f64 {
        (self.sops_formula - self.accumulates as f64).abs() / self.accumulates as f64
    }
}

/// Runs a randomly initialised `[32, 64]`, `T_S = 4` network once with the
/// instrumented counter and compares it with the closed-form report.
pub fn energy_counts(horizon: usize, batch: usize, seed: u64) -> EnergyCheck {
    let cfg = UNetConfig {
        widths: vec![32, 64],
        horizon,
        time_steps: 4,
        ..UNetConfig::default()
    };
    let net = SpikingUNet::<f32>::new(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch * horizon * cfg.action_dim;
    let x = Tensor::new(vec![batch, horizon, cfg.action_dim], (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect()).unwrap();
    let t: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..100)).collect();
    let obs = Tensor::new(vec![batch, cfg.obs_dim], (0..batch * cfg.obs_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .unwrap();

    let aops = count_aops(&cfg, batch).unwrap();
    let psi = measure_firing_rate(&net, &x, &t, &obs).unwrap();
    let report = estimate_energy(&aops, &psi, cfg.time_steps, &EnergyConstants::default()).unwrap();
    let mut counter = InstrumentedCounter::default();
    net.forward_observed(&x, &t, &obs, &mut counter).unwrap();

    let mut aops_mismatches = Vec::new();
    for a in &aops {
        let calls = if a.spiking { cfg.time_steps as u64 } else { 1 };
        let counted = counter.layers.iter().find(|(n, _)| *n == a.name).map_or(0, |(_, t)| t.multiplies);
        if a.aops * calls != counted {
            aops_mismatches.push((a.name.clone(), a.aops * calls, counted));
        }
    }
    if counter.layers.len() != aops.len() {
        aops_mismatches.push(("<layer count>".into(), aops.len() as u64, counter.layers.len() as u64));
    }
    EnergyCheck {
        aops_mismatches,
        layers: aops.len(),
        sops_formula: report.spiking_only.sops,
        accumulates: counter.layers.iter().filter(|(_, t)| t.spiking).map(|(_, t)| t.accumulates).sum(),
    }
}
