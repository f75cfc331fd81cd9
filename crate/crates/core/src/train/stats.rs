//! Per-channel spiking statistics: firing rate, membrane potential at the
//! firing instants, and the channel threshold.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lif::{LifParams, LifTape};
use crate::tensor::{Element, Tensor};
use crate::unet::{LayerObserver, SpikingUNet};

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub layer: String,
    pub channel: usize,
    pub firing_rate: f64,
    /// Mean of `u[t]` over the instants where `s[t] = 1`; `None` if silent.
    pub firing_potential: Option<f64>,
    pub theta: f64,
}

#[derive(Debug, Default)]
struct Acc {
    spikes: Vec<u64>,
    elements: Vec<u64>,
    potential: Vec<f64>,
    theta: Vec<f64>,
}

/// Observer accumulating [`ChannelStats`] over every LIF node it sees.
#[derive(Debug, Default)]
pub struct StatsObserver {
    layers: Vec<(String, Acc)>,
}

impl<E: Element> LayerObserver<E> for StatsObserver {
    fn lif(&mut self, name: &str, tape: &LifTape<E>, params: &LifParams<E>) {
        let c = params.channels();
        let i = match self.layers.iter().position(|(n, _)| n == name) {
            Some(i) => i,
            None => {
                self.layers.push((
                    name.to_string(),
                    Acc {
                        spikes: vec![0; c],
                        elements: vec![0; c],
                        potential: vec![0.0; c],
                        theta: params.theta().iter().map(|t| t.to_f64_lossy()).collect(),
                    },
                ));
                self.layers.len() - 1
            }
        };
        let acc = &mut self.layers[i].1;
        let (u, s) = (tape.membrane(), tape.spikes());
        // layout [T, B, C, rest...]
        let shape = s.shape();
        let inner: usize = shape[3..].iter().product();
        let outer = shape[0] * shape[1];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for j in base..base + inner {
                    acc.elements[ch] += 1;
                    if s.data()[j] == E::one() {
                        acc.spikes[ch] += 1;
                        acc.potential[ch] += u.data()[j].to_f64_lossy();
                    }
                }
            }
        }
    }
}

impl StatsObserver {
    pub fn finish(self) -> Vec<ChannelStats> {
        let mut out = Vec::new();
        for (layer, acc) in self.layers {
            for ch in 0..acc.spikes.len() {
                let spikes = acc.spikes[ch];
                out.push(ChannelStats {
                    layer: layer.clone(),
                    channel: ch,
                    firing_rate: if acc.elements[ch] == 0 { 0.0 } else { spikes as f64 / acc.elements[ch] as f64 },
                    firing_potential: (spikes > 0).then(|| acc.potential[ch] / spikes as f64),
                    theta: acc.theta[ch],
                });
            }
        }
        out
    }
}

pub fn channel_stats(net: &SpikingUNet, x_t: &Tensor, timesteps: &[usize], obs: &Tensor) -> Result<Vec<ChannelStats>> {
    if timesteps.is_empty() {
        return Err(Error::Config("statistics need a non-empty sample".into()));
    }
    let mut obs_stats = StatsObserver::default();
    net.forward_observed(x_t, timesteps, obs, &mut obs_stats)?;
    Ok(obs_stats.finish())
}

pub const STATS_CSV_HEADER: &str = "layer,channel,firing_rate,firing_potential,theta";

pub fn stats_csv(rows: &[ChannelStats]) -> String {
    let mut s = format!("{STATS_CSV_HEADER}\n");
    for r in rows {
        let pot = r.firing_potential.map(|p| format!("{p:.9}")).unwrap_or_default();
        writeln!(s, "{},{},{:.9},{pot},{:.9}", r.layer, r.channel, r.firing_rate, r.theta).unwrap();
    }
    s
}
