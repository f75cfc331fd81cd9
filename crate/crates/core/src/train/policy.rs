//! DDPM sampling wrapped as a receding-horizon policy.

use crate::diffusion::{ddpm_sample_clipped, NoiseSchedule};
use crate::env::{episode_seed, NormStats, Policy, Vec2, ACTION_DIM, OBS_DIM};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::unet::SpikingUNet;

use super::data::normalize_window;

pub struct DiffusionPolicy<'a> {
    pub net: &'a SpikingUNet,
    pub schedule: &'a NoiseSchedule,
    pub norm: NormStats,
    pub clip: Option<f64>,
    seed: u64,
    calls: u64,
}

impl<'a> DiffusionPolicy<'a> {
    /// Each call to `plan` draws its sampling noise from the next seed of a
    /// SplitMix64 stream started at `seed`.
    pub fn new(net: &'a SpikingUNet, schedule: &'a NoiseSchedule, norm: NormStats, seed: u64) -> Self {
        Self {
            net,
            schedule,
            norm,
            clip: None,
            seed,
            calls: 0,
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip = clip;
        self
    }
}

impl Policy for DiffusionPolicy<'_> {
    fn plan(&mut self, windows: &[[f32; OBS_DIM]]) -> Result<Vec<Vec<Vec2>>> {
        let n = windows.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let h = self.net.config.horizon;
        let obs: Vec<f32> = windows.iter().flat_map(|w| normalize_window(&self.norm, w)).collect();
        let obs = Tensor::new(vec![n, OBS_DIM], obs)?;
        let seed = episode_seed(self.seed, self.calls);
        self.calls += 1;
        let x = ddpm_sample_clipped(self.net, &obs, &[n, h, ACTION_DIM], self.schedule, seed, self.clip)?;
        Ok(x.data()
            .chunks(h * ACTION_DIM)
            .map(|plan| {
                plan.chunks(ACTION_DIM)
                    .map(|a| {
                        let raw = self.norm.denormalize_action([a[0], a[1]]);
                        [raw[0] as f64, raw[1] as f64]
                    })
                    .collect()
            })
            .collect())
    }
}
