//! Training windows cut from demonstration trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{forward_diffuse, DiffusionBatch, NoiseSchedule};
use crate::env::{episode_seed, Dataset, NormStats, ACTION_DIM, OBS_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalized `(observation window, action plan)` pairs.
///
/// Window `i` of a trajectory stacks states `i-1` and `i` (state 0 twice at
/// the start); its target is actions `i..i+H`, padded past the end with the
/// zero action the expert emits once the task is solved.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub horizon: usize,
    pub obs: Vec<[f32; OBS_DIM]>,
    /// `H·ACTION_DIM` values per sample, time-major.
    pub actions: Vec<Vec<f32>>,
}

pub fn normalize_window(norm: &NormStats, window: &[f32; OBS_DIM]) -> [f32; OBS_DIM] {
    let prev = norm.normalize_state(window[..STATE_DIM].try_into().unwrap());
    let cur = norm.normalize_state(window[STATE_DIM..].try_into().unwrap());
    std::array::from_fn(|i| if i < STATE_DIM { prev[i] } else { cur[i - STATE_DIM] })
}

impl TrainingSet {
    pub fn from_dataset(ds: &Dataset, horizon: usize) -> Result<Self> {
        let norm = &ds.stats;
        let pad = norm.normalize_action([0.0; ACTION_DIM]);
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        for t in &ds.trajectories {
            for i in 0..t.actions.len() {
                let mut w = [0.0; OBS_DIM];
                w[..STATE_DIM].copy_from_slice(&t.observations[i.saturating_sub(1)]);
                w[STATE_DIM..].copy_from_slice(&t.observations[i]);
                obs.push(normalize_window(norm, &w));
                let plan = (i..i + horizon)
                    .flat_map(|j| t.actions.get(j).map_or(pad, |&a| norm.normalize_action(a)))
                    .collect();
                actions.push(plan);
            }
        }
        if obs.is_empty() {
            return Err(Error::Config("dataset contains no actions".into()));
        }
        Ok(Self { horizon, obs, actions })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// `x0 [n, H, Da]` and `obs [n, OBS_DIM]` for the given sample indices.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let x0 = idx.iter().flat_map(|&i| self.actions[i].iter().copied()).collect();
        let obs = idx.iter().flat_map(|&i| self.obs[i]).collect();
        (
            Tensor::new(vec![idx.len(), self.horizon, ACTION_DIM], x0).unwrap(),
            Tensor::new(vec![idx.len(), OBS_DIM], obs).unwrap(),
        )
    }

    /// `n` indices spread evenly over the set.
    pub fn spread(&self, n: usize) -> Vec<usize> {
        let n = n.min(self.len());
        (0..n).map(|i| i * self.len() / n.max(1)).collect()
    }

    /// A seeded noisy batch for profiling and statistics: `(x_t, t, obs)`.
    pub fn probe_batch(&self, n: usize, sched: &NoiseSchedule, seed: u64) -> Result<(Tensor, Vec<usize>, Tensor)> {
        if n == 0 {
            return Err(Error::Config("probe batch must not be empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, 0));
        let (x0, obs) = self.gather(&self.spread(n));
        let batch = DiffusionBatch::sample(x0, obs, sched, &mut rng);
        let x_t = forward_diffuse(&batch.x0, &batch.timesteps, &batch.eps, sched)?;
        Ok((x_t, batch.timesteps, batch.obs))
    }
}
