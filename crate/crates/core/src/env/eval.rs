//! Receding-horizon policy evaluation.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{env_step, scripted_expert, EnvState, Vec2, MAX_STEPS, OBS_DIM, STATE_DIM};
use crate::error::Result;

/// Actions executed from each plan before the policy is queried again.
pub const EXECUTE_STEPS: usize = 4;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th output of a SplitMix64 stream seeded with `master`.
pub fn episode_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Two stacked raw states, oldest first. At the first step both frames are
/// the initial state.
pub fn observation_window(prev: &EnvState, cur: &EnvState) -> [f32; OBS_DIM] {
    let (p, c) = (prev.observation(), cur.observation());
    std::array::from_fn(|i| if i < STATE_DIM { p[i] as f32 } else { c[i - STATE_DIM] as f32 })
}

/// A policy plans raw (unnormalized) action sequences for a batch of
/// observation windows at once.
pub trait Policy {
    fn plan(&mut self, windows: &[[f32; OBS_DIM]]) -> Result<Vec<Vec<Vec2>>>;
}

/// Plans by simulating the scripted expert forward from the latest frame.
pub struct ExpertPolicy {
    pub horizon: usize,
}

impl Policy for ExpertPolicy {
    fn plan(&mut self, windows: &[[f32; OBS_DIM]]) -> Result<Vec<Vec<Vec2>>> {
        Ok(windows
            .iter()
            .map(|w| {
                let c = |i: usize| w[STATE_DIM + i] as f64;
                let mut s = EnvState {
                    agent: [c(0), c(1)],
                    block: [c(2), c(3)],
                    target: [c(4), c(5)],
                    step_count: 0,
                };
                (0..self.horizon)
                    .map(|_| {
                        let a = scripted_expert(&s);
                        s = env_step(&s, a);
                        a
                    })
                    .collect()
            })
            .collect())
    }
}

pub struct ZeroPolicy {
    pub horizon: usize,
}

impl Policy for ZeroPolicy {
    fn plan(&mut self, windows: &[[f32; OBS_DIM]]) -> Result<Vec<Vec<Vec2>>> {
        Ok(vec![vec![[0.0, 0.0]; self.horizon]; windows.len()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub initial_distance: f64,
    pub final_distance: f64,
}

impl EpisodeResult {
    pub fn coverage(&self) -> f64 {
        if self.initial_distance <= 0.0 {
            return 1.0;
        }
        (1.0 - self.final_distance / self.initial_distance).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub success_rate: f64,
    pub mean_steps: f64,
    pub coverage: f64,
    pub episodes: Vec<EpisodeResult>,
}

pub const EPISODE_CSV_HEADER: &str = "episode,seed,success,steps,initial_distance,final_distance,coverage";
pub const SUMMARY_CSV_HEADER: &str = "n_episodes,success_rate,mean_steps,coverage";

impl EvalMetrics {
    fn from_episodes(episodes: Vec<EpisodeResult>) -> Self {
        let n = episodes.len().max(1) as f64;
        Self {
            success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
            mean_steps: episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n,
            coverage: episodes.iter().map(EpisodeResult::coverage).sum::<f64>() / n,
            episodes,
        }
    }

    pub fn episodes_csv(&self) -> String {
        let mut s = format!("{EPISODE_CSV_HEADER}\n");
        for (i, e) in self.episodes.iter().enumerate() {
            writeln!(
                s,
                "{i},{},{},{},{:.9},{:.9},{:.9}",
                e.seed,
                e.success as u8,
                e.steps,
                e.initial_distance,
                e.final_distance,
                e.coverage()
            )
            .unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "{SUMMARY_CSV_HEADER}\n{},{:.9},{:.9},{:.9}\n",
            self.episodes.len(),
            self.success_rate,
            self.mean_steps,
            self.coverage
        )
    }
}

/// Runs `n_episodes` seeded episodes in lockstep: every active episode is
/// replanned together, executes up to [`EXECUTE_STEPS`] actions of its plan,
/// and stops on success or at the step cap.
pub fn evaluate_policy(policy: &mut dyn Policy, n_episodes: usize, seed: u64) -> Result<EvalMetrics> {
    struct Episode {
        seed: u64,
        prev: EnvState,
        cur: EnvState,
        initial_distance: f64,
        done: bool,
    }
    let mut eps: Vec<Episode> = (0..n_episodes as u64)
        .map(|i| {
            let seed = episode_seed(seed, i);
            let s = EnvState::random(&mut ChaCha8Rng::seed_from_u64(seed));
            Episode {
                seed,
                prev: s,
                cur: s,
                initial_distance: s.block_distance(),
                done: s.is_success(),
            }
        })
        .collect();

    loop {
        let active: Vec<usize> = (0..eps.len()).filter(|&i| !eps[i].done).collect();
        if active.is_empty() {
            break;
        }
        let windows: Vec<_> = active.iter().map(|&i| observation_window(&eps[i].prev, &eps[i].cur)).collect();
        let plans = policy.plan(&windows)?;
        for (&i, plan) in active.iter().zip(&plans) {
            let e = &mut eps[i];
            for &a in plan.iter().take(EXECUTE_STEPS) {
                e.prev = e.cur;
                e.cur = env_step(&e.cur, a);
                if e.cur.is_success() || e.cur.step_count >= MAX_STEPS {
                    break;
                }
            }
            e.done = e.cur.is_success() || e.cur.step_count >= MAX_STEPS || plan.is_empty();
        }
    }

    Ok(EvalMetrics::from_episodes(
        eps.into_iter()
            .map(|e| EpisodeResult {
                seed: e.seed,
                success: e.cur.is_success(),
                steps: e.cur.step_count,
                initial_distance: e.initial_distance,
                final_distance: e.cur.block_distance(),
            })
            .collect(),
    ))
}
