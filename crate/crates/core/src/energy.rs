//! Synaptic-operation energy model.
//!
//! For a layer with dense multiply-accumulate count `AOPs` whose input spike
//! train fires at rate `ψ`, a spiking network performs `SOPs = T_S·ψ·AOPs`
//! accumulates. Energy is `E_SNN = e_ac·SOPs` against `E_ANN = e_mac·AOPs`
//! for the equivalent dense network. Layers whose input is continuous (the
//! embedding maps, the conditioning projections and the encoder conv) are
//! billed at MAC cost in both models.
//!
//! Energy constants default to 0.9 and 4.6 per op. Those numbers are usually
//! quoted in pJ for 45 nm CMOS; only the ratio matters for the reduction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Element, LinearParams, Tensor};
use crate::unet::{LayerObserver, SpikingUNet, UNetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConstants {
    pub e_ac: f64,
    pub e_mac: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self { e_ac: 0.9, e_mac: 4.6 }
    }
}

impl EnergyConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_ac > 0.0 && self.e_mac > 0.0 && self.e_ac.is_finite() && self.e_mac.is_finite()) {
            return Err(Error::Config(format!(
                "energy constants must be positive, got e_ac={} e_mac={}",
                self.e_ac, self.e_mac
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Linear,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Linear => "linear",
        }
    }
}

/// Dense MAC count of one layer for one network evaluation of `batch` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAops {
    pub name: String,
    pub kind: LayerKind,
    /// Whether the layer's input is a spike train.
    pub spiking: bool,
    pub aops: u64,
}

/// Closed-form per-layer MAC counts, in forward order. Bias additions are
/// not counted. Spiking layers are counted for a single SNN timestep.
pub fn count_aops(config: &UNetConfig, batch: usize) -> Result<Vec<LayerAops>> {
    config.validate()?;
    let b = batch as u64;
    let k = config.kernel as u64;
    let e = config.cond_dim as u64;
    let w: Vec<u64> = config.widths.iter().map(|&c| c as u64).collect();
    let len = |level: usize| (config.horizon >> level) as u64;
    let mut out = Vec::new();
    let mut push = |name: String, kind, spiking, aops| out.push(LayerAops { name, kind, spiking, aops });
    let conv = |l_out: u64, c_out: u64, c_in: u64| b * l_out * c_out * c_in * k;
    let block = |push: &mut dyn FnMut(String, LayerKind, bool, u64), name: &str, level: usize| {
        let c = w[level];
        push(format!("{name}.conv1"), LayerKind::Conv, true, conv(len(level), c, c));
        push(format!("{name}.cond"), LayerKind::Linear, false, b * e * c);
        push(format!("{name}.conv2"), LayerKind::Conv, true, conv(len(level), c, c));
    };

    push("time_embed".into(), LayerKind::Linear, false, b * config.time_embed_dim as u64 * e);
    push("obs_embed".into(), LayerKind::Linear, false, b * config.obs_dim as u64 * e);
    push("enc.conv".into(), LayerKind::Conv, false, conv(len(0), w[0], config.action_dim as u64));
    let n = w.len();
    for i in 0..n {
        block(&mut push, &format!("down{i}"), i);
        if i + 1 < n {
            push(format!("downsample{i}.conv"), LayerKind::Conv, true, conv(len(i + 1), w[i + 1], w[i]));
        }
    }
    block(&mut push, "mid", n - 1);
    for i in (0..n).rev() {
        block(&mut push, &format!("up{i}"), i);
        if i > 0 {
            push(format!("upsample{}.conv", i - 1), LayerKind::Conv, true, conv(len(i - 1), w[i - 1], w[i]));
        }
    }
    push("dec.conv".into(), LayerKind::Conv, true, conv(len(0), config.action_dim as u64, w[0]));
    Ok(out)
}

/// Observer recording the firing rate of every spike-input layer.
#[derive(Debug, Default)]
pub struct FiringRateObserver {
    /// `(ones, elements)` per layer, in first-seen order.
    counts: Vec<(String, u64, u64)>,
}

impl FiringRateObserver {
    fn record<E: Element>(&mut self, name: &str, input: &Tensor<E>) {
        let ones = input.data().iter().filter(|&&v| v == E::one()).count() as u64;
        match self.counts.iter_mut().find(|(n, ..)| n == name) {
            Some(c) => {
                c.1 += ones;
                c.2 += input.len() as u64;
            }
            None => self.counts.push((name.to_string(), ones, input.len() as u64)),
        }
    }

    /// `ψ` per layer: ones entering the layer over spike-train elements entering it.
    pub fn rates(&self) -> Vec<(String, f64)> {
        self.counts
            .iter()
            .map(|(n, ones, total)| (n.clone(), if *total == 0 { 0.0 } else { *ones as f64 / *total as f64 }))
            .collect()
    }
}

impl<E: Element> LayerObserver<E> for FiringRateObserver {
    fn conv(&mut self, name: &str, input: &Tensor<E>, _params: &ConvParams<E>, spiking: bool) {
        if spiking {
            self.record(name, input);
        }
    }
}

/// Runs one forward pass and returns `ψ` for every spike-input layer.
pub fn measure_firing_rate<E: Element>(
    net: &SpikingUNet<E>,
    x_noisy: &Tensor<E>,
    timesteps: &[usize],
    obs: &Tensor<E>,
) -> Result<Vec<(String, f64)>> {
    if timesteps.is_empty() {
        return Err(Error::shape("measure_firing_rate", "empty batch"));
    }
    let mut obs_rates = FiringRateObserver::default();
    net.forward_observed(x_noisy, timesteps, obs, &mut obs_rates)?;
    Ok(obs_rates.rates())
}

/// Per-layer tallies from [`InstrumentedCounter`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerTally {
    /// Multiplies of a dense evaluation, padded taps included, summed over calls.
    pub multiplies: u64,
    /// One per spike per synapse that actually receives it.
    pub accumulates: u64,
    pub spiking: bool,
}

/// Observer that re-walks every layer with explicit loops and counts
/// operations one by one. It is deliberately slow.
#[derive(Debug, Default)]
pub struct InstrumentedCounter {
    pub layers: Vec<(String, LayerTally)>,
}

impl InstrumentedCounter {
    fn entry(&mut self, name: &str) -> &mut LayerTally {
        if let Some(i) = self.layers.iter().position(|(n, _)| n == name) {
            return &mut self.layers[i].1;
        }
        self.layers.push((name.to_string(), LayerTally::default()));
        &mut self.layers.last_mut().unwrap().1
    }
}

impl<E: Element> LayerObserver<E> for InstrumentedCounter {
    fn conv(&mut self, name: &str, input: &Tensor<E>, params: &ConvParams<E>, spiking: bool) {
        let (n, c_in, len) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, k) = (params.c_out(), params.kernel());
        let l_out = params.out_len(len).unwrap_or(0);
        let x = input.data();
        let mut mults = 0u64;
        let mut accs = 0u64;
        for b in 0..n {
            for o in 0..l_out {
                for _co in 0..c_out {
                    for ci in 0..c_in {
                        for j in 0..k {
                            mults += 1;
                            let pos = (o * params.stride + j) as isize - params.padding as isize;
                            if spiking && pos >= 0 && (pos as usize) < len && x[(b * c_in + ci) * len + pos as usize] == E::one() {
                                accs += 1;
                            }
                        }
                    }
                }
            }
        }
        let t = self.entry(name);
        t.multiplies += mults;
        t.accumulates += accs;
        t.spiking = spiking;
    }

    fn linear(&mut self, name: &str, input: &Tensor<E>, params: &LinearParams<E>) {
        let rows = input.shape()[0];
        let mut mults = 0u64;
        for _ in 0..rows {
            for _ in 0..params.d_out() {
                for _ in 0..params.d_in() {
                    mults += 1;
                }
            }
        }
        self.entry(name).multiplies += mults;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerEnergy {
    pub name: String,
    pub kind: LayerKind,
    pub spiking: bool,
    pub aops: u64,
    /// `None` for continuous-input layers.
    pub psi: Option<f64>,
    pub sops: f64,
    pub e_snn: f64,
    pub e_ann: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyTotals {
    pub aops: u64,
    pub sops: f64,
    pub e_snn: f64,
    pub e_ann: f64,
    pub reduction_percent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub time_steps: usize,
    pub constants: EnergyConstants,
    pub layers: Vec<LayerEnergy>,
    /// Every layer, continuous-input ones billed at MAC cost in both models.
    pub whole: EnergyTotals,
    /// Spike-input layers only.
    pub spiking_only: EnergyTotals,
}

/// `T_S·ψ` that would produce `reduction_percent` for a network whose every
/// layer is spike-driven.
pub fn implied_ts_psi(reduction_percent: f64, constants: &EnergyConstants) -> f64 {
    (1.0 - reduction_percent / 100.0) * constants.e_mac / constants.e_ac
}

/// Headline reduction used as the reference for the implied-ψ diagnostic.
pub const REFERENCE_REDUCTION_PERCENT: f64 = 94.3;

fn totals<'a>(layers: impl Iterator<Item = &'a LayerEnergy>) -> Result<EnergyTotals> {
    let mut t = EnergyTotals::default();
    for l in layers {
        t.aops += l.aops;
        t.sops += l.sops;
        t.e_snn += l.e_snn;
        t.e_ann += l.e_ann;
    }
    if t.e_ann <= 0.0 {
        return Err(Error::Numeric("total AOPs is zero; reduction is undefined".into()));
    }
    t.reduction_percent = 100.0 * (1.0 - t.e_snn / t.e_ann);
    Ok(t)
}

/// Builds the report. `psi` must name every spiking layer in `aops`.
pub fn estimate_energy(
    aops: &[LayerAops],
    psi: &[(String, f64)],
    time_steps: usize,
    constants: &EnergyConstants,
) -> Result<EnergyReport> {
    constants.validate()?;
    if time_steps == 0 {
        return Err(Error::OutOfRange {
            what: "time_steps",
            detail: "must be at least 1".into(),
        });
    }
    let psi: BTreeMap<&str, f64> = psi.iter().map(|(n, p)| (n.as_str(), *p)).collect();
    let mut layers = Vec::with_capacity(aops.len());
    for l in aops {
        let e_ann = constants.e_mac * l.aops as f64;
        let entry = if l.spiking {
            let p = *psi.get(l.name.as_str()).ok_or_else(|| Error::Config(format!("no firing rate for layer {}", l.name)))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfRange {
                    what: "psi",
                    detail: format!("{} for layer {}", p, l.name),
                });
            }
            let sops = time_steps as f64 * p * l.aops as f64;
            LayerEnergy {
                name: l.name.clone(),
                kind: l.kind,
                spiking: true,
                aops: l.aops,
                psi: Some(p),
                sops,
                e_snn: constants.e_ac * sops,
                e_ann,
            }
        } else {
            LayerEnergy {
                name: l.name.clone(),
                kind: l.kind,
                spiking: false,
                aops: l.aops,
                psi: None,
                sops: 0.0,
                e_snn: e_ann,
                e_ann,
            }
        };
        layers.push(entry);
    }
    let whole = totals(layers.iter())?;
    let spiking_only = totals(layers.iter().filter(|l| l.spiking))?;
    Ok(EnergyReport {
        time_steps,
        constants: *constants,
        layers,
        whole,
        spiking_only,
    })
}

pub const ENERGY_CSV_HEADER: &str = "layer,kind,spiking,aops,psi,sops,e_snn,e_ann";

impl EnergyReport {
    /// AOP-weighted mean firing rate over spike-input layers.
    pub fn mean_psi(&self) -> f64 {
        let (num, den) = self
            .layers
            .iter()
            .filter_map(|l| l.psi.map(|p| (p * l.aops as f64, l.aops as f64)))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn implied_ts_psi(&self) -> f64 {
        implied_ts_psi(REFERENCE_REDUCTION_PERCENT, &self.constants)
    }

    pub fn implied_psi(&self) -> f64 {
        self.implied_ts_psi() / self.time_steps as f64
    }

    /// One row per layer, then `TOTAL` and `TOTAL_SPIKING` rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{ENERGY_CSV_HEADER}\n");
        for l in &self.layers {
            let psi = l.psi.map(|p| format!("{p:.9}")).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{psi},{:.3},{:.6e},{:.6e}",
                l.name,
                l.kind.as_str(),
                l.spiking as u8,
                l.aops,
                l.sops,
                l.e_snn,
                l.e_ann
            )
            .unwrap();
        }
        for (name, t) in [("TOTAL", &self.whole), ("TOTAL_SPIKING", &self.spiking_only)] {
            writeln!(s, "{name},,,{},,{:.3},{:.6e},{:.6e}", t.aops, t.sops, t.e_snn, t.e_ann).unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<20} {:>6} {:>14} {:>9} {:>16}", "layer", "kind", "AOPs", "psi", "SOPs").unwrap();
        for l in &self.layers {
            let psi = l.psi.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into());
            writeln!(s, "{:<20} {:>6} {:>14} {:>9} {:>16.1}", l.name, l.kind.as_str(), l.aops, psi, l.sops).unwrap();
        }
        writeln!(s).unwrap();
        for (label, t) in [("whole U-Net", &self.whole), ("spiking layers", &self.spiking_only)] {
            writeln!(
                s,
                "{label:<15} E_SNN {:.4e}  E_ANN {:.4e}  reduction {:.2}%",
                t.e_snn, t.e_ann, t.reduction_percent
            )
            .unwrap();
        }
        writeln!(
            s,
            "mean psi {:.4} at T_S={} (T_S*psi = {:.4}); a {REFERENCE_REDUCTION_PERCENT}% reduction implies T_S*psi = {:.4}, psi = {:.4}",
            self.mean_psi(),
            self.time_steps,
            self.mean_psi() * self.time_steps as f64,
            self.implied_ts_psi(),
            self.implied_psi()
        )
        .unwrap();
        s
    }
}
