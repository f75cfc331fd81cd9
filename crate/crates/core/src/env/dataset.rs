//! Expert demonstrations and the `SDPD` binary dataset format.
//!
//! Layout (all integers `u32`, all reals `f32`, little-endian):
//!
//! ```text
//! "SDPD" | version | n_traj | state_dim | action_dim
//! action_min[action_dim] | action_max[action_dim] | state_min[state_dim] | state_max[state_dim]
//! n_traj × ( n_steps | success | observations[(n_steps+1)·state_dim] | actions[n_steps·action_dim] )
//! ```
//!
//! A trajectory holds one more state than actions: `observations[i]` is observed
//! before `actions[i]` is applied, and the final state is the terminal one.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{env_step, episode_seed, scripted_expert, EnvState, ACTION_DIM, MAX_STEPS, STATE_DIM};
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader};

pub const DATASET_MAGIC: &[u8; 4] = b"SDPD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<[f32; STATE_DIM]>,
    pub actions: Vec<[f32; ACTION_DIM]>,
    pub success: bool,
}

/// Per-dimension ranges used to map data to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub action_min: [f32; ACTION_DIM],
    pub action_max: [f32; ACTION_DIM],
    pub state_min: [f32; STATE_DIM],
    pub state_max: [f32; STATE_DIM],
}

const MIN_RANGE: f32 = 1e-6;

fn to_unit(v: f32, lo: f32, hi: f32) -> f32 {
    if hi - lo < MIN_RANGE {
        0.0
    } else {
        2.0 * (v - lo) / (hi - lo) - 1.0
    }
}

fn from_unit(v: f32, lo: f32, hi: f32) -> f32 {
    if hi - lo < MIN_RANGE {
        lo
    } else {
        (v + 1.0) * 0.5 * (hi - lo) + lo
    }
}

impl NormStats {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let mut s = Self {
            action_min: [f32::INFINITY; ACTION_DIM],
            action_max: [f32::NEG_INFINITY; ACTION_DIM],
            state_min: [f32::INFINITY; STATE_DIM],
            state_max: [f32::NEG_INFINITY; STATE_DIM],
        };
        for t in trajs {
            for a in &t.actions {
                for d in 0..ACTION_DIM {
                    s.action_min[d] = s.action_min[d].min(a[d]);
                    s.action_max[d] = s.action_max[d].max(a[d]);
                }
            }
            for o in &t.observations {
                for d in 0..STATE_DIM {
                    s.state_min[d] = s.state_min[d].min(o[d]);
                    s.state_max[d] = s.state_max[d].max(o[d]);
                }
            }
        }
        s
    }

    pub fn normalize_action(&self, a: [f32; ACTION_DIM]) -> [f32; ACTION_DIM] {
        std::array::from_fn(|d| to_unit(a[d], self.action_min[d], self.action_max[d]))
    }

    pub fn denormalize_action(&self, a: [f32; ACTION_DIM]) -> [f32; ACTION_DIM] {
        std::array::from_fn(|d| from_unit(a[d], self.action_min[d], self.action_max[d]))
    }

    pub fn normalize_state(&self, s: [f32; STATE_DIM]) -> [f32; STATE_DIM] {
        std::array::from_fn(|d| to_unit(s[d], self.state_min[d], self.state_max[d]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub stats: NormStats,
    pub trajectories: Vec<Trajectory>,
}

fn to_f32<const N: usize>(v: [f64; N]) -> [f32; N] {
    std::array::from_fn(|i| v[i] as f32)
}

/// Runs the scripted expert from `start` until success or the step cap.
pub fn rollout_expert(start: EnvState) -> Trajectory {
    let mut s = start;
    let mut observations = vec![to_f32(s.observation())];
    let mut actions = Vec::new();
    while !s.is_success() && s.step_count < MAX_STEPS {
        let a = scripted_expert(&s);
        s = env_step(&s, a);
        actions.push(to_f32(a));
        observations.push(to_f32(s.observation()));
    }
    Trajectory {
        observations,
        actions,
        success: s.is_success(),
    }
}

/// Collects `n_traj` successful expert rollouts from seeded random starts.
/// Failed rollouts are discarded and replaced; more than `10·n_traj`
/// attempts is treated as a pathological seed.
pub fn generate_dataset(n_traj: usize, seed: u64) -> Result<Dataset> {
    if n_traj == 0 {
        return Err(Error::Config("data.n_traj must be at least 1".into()));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    let max_attempts = 10 * n_traj;
    let mut attempt = 0;
    while trajectories.len() < n_traj {
        if attempt >= max_attempts {
            return Err(Error::Numeric(format!(
                "expert solved only {} of {attempt} episodes for seed {seed}",
                trajectories.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, attempt as u64));
        attempt += 1;
        let t = rollout_expert(EnvState::random(&mut rng));
        if t.success {
            trajectories.push(t);
        }
    }
    Ok(Dataset {
        stats: NormStats::from_trajectories(&trajectories),
        trajectories,
    })
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        let f = |out: &mut Vec<u8>, vs: &[f32]| vs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(DATASET_MAGIC);
        u(&mut out, DATASET_VERSION);
        u(&mut out, self.trajectories.len() as u32);
        u(&mut out, STATE_DIM as u32);
        u(&mut out, ACTION_DIM as u32);
        f(&mut out, &self.stats.action_min);
        f(&mut out, &self.stats.action_max);
        f(&mut out, &self.stats.state_min);
        f(&mut out, &self.stats.state_max);
        for t in &self.trajectories {
            u(&mut out, t.actions.len() as u32);
            u(&mut out, t.success as u32);
            t.observations.iter().for_each(|s| f(&mut out, s));
            t.actions.iter().for_each(|a| f(&mut out, a));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::Format("not an SDPD dataset (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let n = r.u32()? as usize;
        let (sd, ad) = (r.u32()? as usize, r.u32()? as usize);
        if sd != STATE_DIM || ad != ACTION_DIM {
            return Err(Error::Format(format!("dataset dims {sd}/{ad}, expected {STATE_DIM}/{ACTION_DIM}")));
        }
        let stats = NormStats {
            action_min: r.f32_array()?,
            action_max: r.f32_array()?,
            state_min: r.f32_array()?,
            state_max: r.f32_array()?,
        };
        let mut trajectories = Vec::with_capacity(n);
        for _ in 0..n {
            let steps = r.u32()? as usize;
            let success = match r.u32()? {
                0 => false,
                1 => true,
                v => return Err(Error::Format(format!("bad success flag {v}"))),
            };
            let observations = (0..=steps).map(|_| r.f32_array()).collect::<Result<_>>()?;
            let actions = (0..steps).map(|_| r.f32_array()).collect::<Result<_>>()?;
            trajectories.push(Trajectory {
                observations,
                actions,
                success,
            });
        }
        r.finish()?;
        Ok(Self { stats, trajectories })
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.actions.len()).sum()
    }
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset.to_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(&read_file(path)?)
}
