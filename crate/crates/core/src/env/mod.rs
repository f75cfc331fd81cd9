//! Desk-scale closed-loop benchmark: a point agent pushing a disc to a fixed
//! target inside the unit square.
//!
//! Contact model: whenever the agent centre comes closer than
//! [`CONTACT_RADIUS`] to the block centre, the block is moved along the
//! agent→block normal until the distance is exactly `CONTACT_RADIUS`. The
//! agent can push but never pull. Actions are integrated in sub-steps no
//! longer than `CONTACT_RADIUS / 2` so that a single command can never carry
//! the agent across the block.

mod dataset;
mod eval;

use rand::Rng;

pub use dataset::{generate_dataset, rollout_expert, read_dataset, write_dataset, Dataset, NormStats, Trajectory};
pub use eval::{
    episode_seed, evaluate_policy, observation_window, splitmix64, EpisodeResult, EvalMetrics, ExpertPolicy, Policy,
    ZeroPolicy, EPISODE_CSV_HEADER, EXECUTE_STEPS, SUMMARY_CSV_HEADER,
};

pub type Vec2 = [f64; 2];

pub const A_MAX: f64 = 0.05;
pub const CONTACT_RADIUS: f64 = 0.04;
pub const SUCCESS_TOL: f64 = 0.03;
pub const MAX_STEPS: usize = 300;
pub const TARGET: Vec2 = [0.5, 0.5];
pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;
/// Number of consecutive states stacked into one policy observation.
pub const OBS_FRAMES: usize = 2;
pub const OBS_DIM: usize = STATE_DIM * OBS_FRAMES;

const SUBSTEP: f64 = CONTACT_RADIUS / 2.0;
/// Distance the expert keeps from the block while circling around it.
const NAV_RADIUS: f64 = CONTACT_RADIUS + 0.03;
const NAV_CLEARANCE: f64 = CONTACT_RADIUS + 0.008;
const ALIGN_TOL: f64 = 0.01;

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn mul(a: Vec2, k: f64) -> Vec2 {
    [a[0] * k, a[1] * k]
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: Vec2) -> Option<Vec2> {
    let n = norm(a);
    (n > 1e-12).then(|| mul(a, 1.0 / n))
}

fn clamp_unit(a: Vec2) -> Vec2 {
    [a[0].clamp(0.0, 1.0), a[1].clamp(0.0, 1.0)]
}

/// Clips each component to `[-A_MAX, A_MAX]`.
pub fn clip_action(a: Vec2) -> Vec2 {
    let c = |v: f64| if v.is_finite() { v.clamp(-A_MAX, A_MAX) } else { 0.0 };
    [c(a[0]), c(a[1])]
}

/// Scales `a` down so that its length does not exceed `max_len`.
fn clip_norm(a: Vec2, max_len: f64) -> Vec2 {
    let n = norm(a);
    if n > max_len {
        mul(a, max_len / n)
    } else {
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub agent: Vec2,
    pub block: Vec2,
    pub target: Vec2,
    pub step_count: usize,
}

impl EnvState {
    /// Random start: block in `[0.2, 0.8]²` at least 0.15 from the target,
    /// agent in `[0.1, 0.9]²` at least 0.1 from the block.
    pub fn random(rng: &mut impl Rng) -> Self {
        let block = loop {
            let b = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
            if norm(sub(b, TARGET)) >= 0.15 {
                break b;
            }
        };
        let agent = loop {
            let a = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
            if norm(sub(a, block)) >= 0.1 {
                break a;
            }
        };
        Self {
            agent,
            block,
            target: TARGET,
            step_count: 0,
        }
    }

    pub fn block_distance(&self) -> f64 {
        norm(sub(self.block, self.target))
    }

    pub fn is_success(&self) -> bool {
        self.block_distance() < SUCCESS_TOL
    }

    /// `[agent, block, target]` flattened.
    pub fn observation(&self) -> [f64; STATE_DIM] {
        [
            self.agent[0],
            self.agent[1],
            self.block[0],
            self.block[1],
            self.target[0],
            self.target[1],
        ]
    }
}

/// Resolves agent/block overlap after the agent moved in direction `heading`.
fn resolve_contact(agent: Vec2, block: Vec2, heading: Vec2) -> (Vec2, Vec2) {
    let d = sub(block, agent);
    if norm(d) >= CONTACT_RADIUS {
        return (agent, block);
    }
    let n = unit(d).or_else(|| unit(heading)).unwrap_or([1.0, 0.0]);
    let block = clamp_unit(add(agent, mul(n, CONTACT_RADIUS)));
    // A block pinned against a wall pushes the agent back out.
    let d = sub(block, agent);
    if norm(d) < CONTACT_RADIUS {
        let n = unit(d).unwrap_or(n);
        return (clamp_unit(sub(block, mul(n, CONTACT_RADIUS))), block);
    }
    (agent, block)
}

pub fn env_step(state: &EnvState, action: Vec2) -> EnvState {
    let a = clip_action(action);
    let len = norm(a);
    let pieces = (len / SUBSTEP).ceil().max(1.0) as usize;
    let delta = mul(a, 1.0 / pieces as f64);
    let (mut agent, mut block) = (state.agent, state.block);
    if len > 0.0 {
        for _ in 0..pieces {
            agent = clamp_unit(add(agent, delta));
            (agent, block) = resolve_contact(agent, block, a);
        }
    }
    EnvState {
        agent,
        block,
        target: state.target,
        step_count: state.step_count + 1,
    }
}

/// Distance from `p` to the segment `a`–`b`.
fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    norm(sub(p, add(a, mul(ab, t))))
}

/// Scripted demonstrator: circle to the point behind the block on the
/// block→target line, then push straight at the target.
pub fn scripted_expert(state: &EnvState) -> Vec2 {
    let to_target = sub(state.target, state.block);
    let dist = norm(to_target);
    if dist < SUCCESS_TOL {
        return [0.0, 0.0];
    }
    let dir = mul(to_target, 1.0 / dist);
    let station = sub(state.block, mul(dir, CONTACT_RADIUS));

    if norm(sub(state.agent, station)) < ALIGN_TOL {
        let aim = add(station, mul(dir, dist.min(A_MAX)));
        return clip_action(clip_norm(sub(aim, state.agent), A_MAX));
    }

    let rel = sub(state.agent, state.block);
    let perp = [-dir[1], dir[0]];
    let lateral = dot(rel, perp);
    let behind = -dot(rel, dir);
    let goal = if lateral.abs() < ALIGN_TOL && behind > CONTACT_RADIUS - 1e-9 && behind < NAV_RADIUS + 0.01 {
        station
    } else {
        let side = if lateral >= 0.0 { perp } else { mul(perp, -1.0) };
        let ring = |v: Vec2| add(state.block, mul(unit(v).unwrap(), NAV_RADIUS));
        let candidates = [
            sub(state.block, mul(dir, NAV_RADIUS)),
            ring(sub(side, dir)),
            ring(side),
            ring(add(side, dir)),
        ];
        match candidates
            .into_iter()
            .find(|&c| segment_distance(state.block, state.agent, c) >= NAV_CLEARANCE)
        {
            Some(c) => c,
            None => {
                let away = unit(rel).unwrap_or(side);
                return clip_action(mul(away, A_MAX));
            }
        }
    };
    clip_action(clip_norm(sub(goal, state.agent), A_MAX))
}
