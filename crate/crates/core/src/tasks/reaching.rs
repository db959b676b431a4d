//! Planar two-link arm driven by joint velocity commands toward a goal point.
//!
//! The observation is the Cartesian error from the end effector to the goal
//! (scaled by [`ERROR_SCALE`]); the reward is minus the distance. An optional
//! perturbation rescales one joint's gain and moves the goal at a fixed step,
//! so the controller has to reach a new point with a crippled arm.

use super::{check_action, Environment, Perturbation, Step, TaskError, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LINKS: [f64; 2] = [0.5, 0.5];
pub const MAX_REACH: f64 = LINKS[0] + LINKS[1];
pub const HOME: [f64; 2] = [std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2];
/// Goals are the forward kinematics of `HOME` plus a uniform joint offset.
pub const GOAL_SPREAD: f64 = 0.6;
pub const DT: f64 = 0.1;
/// Joint speed at full action, rad/s.
pub const MAX_JOINT_SPEED: f64 = 1.0;
pub const ERROR_SCALE: f64 = 0.5;
pub const EPISODE_LEN: usize = 300;

pub fn forward_kinematics(q: [f64; 2]) -> [f64; 2] {
    let [l1, l2] = LINKS;
    [
        l1 * q[0].cos() + l2 * (q[0] + q[1]).cos(),
        l1 * q[0].sin() + l2 * (q[0] + q[1]).sin(),
    ]
}

#[derive(Debug, Clone)]
pub struct Reaching {
    len: usize,
    perturbation: Option<Perturbation>,
    pub q: [f64; 2],
    pub gain: [f64; 2],
    pub goal: [f64; 2],
    rng: ChaCha8Rng,
    t: Option<usize>,
}

impl Reaching {
    pub fn new(len: usize, perturbation: Option<Perturbation>) -> Reaching {
        Reaching {
            len,
            perturbation,
            q: HOME,
            gain: [1.0; 2],
            goal: forward_kinematics(HOME),
            rng: ChaCha8Rng::seed_from_u64(0),
            t: None,
        }
    }

    pub fn perturbation(&self) -> Option<Perturbation> {
        self.perturbation
    }

    pub fn distance(&self) -> f64 {
        let e = self.error();
        e[0].hypot(e[1])
    }

    fn error(&self) -> [f64; 2] {
        let p = forward_kinematics(self.q);
        [self.goal[0] - p[0], self.goal[1] - p[1]]
    }

    fn obs(&self) -> Vec<f64> {
        self.error().iter().map(|e| e / ERROR_SCALE).collect()
    }

    fn sample_goal(&mut self) {
        let dq = [
            self.rng.random_range(-GOAL_SPREAD..=GOAL_SPREAD),
            self.rng.random_range(-GOAL_SPREAD..=GOAL_SPREAD),
        ];
        self.goal = forward_kinematics([HOME[0] + dq[0], HOME[1] + dq[1]]);
    }
}

impl Environment for Reaching {
    fn kind(&self) -> TaskKind {
        TaskKind::Reaching
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn episode_len(&self) -> usize {
        self.len
    }

    /// Every variant is a different goal sequence; any index is valid.
    fn reset(&mut self, seed: u64, variant: usize) -> Result<Vec<f64>, TaskError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(variant as u64);
        self.q = HOME;
        self.gain = [1.0; 2];
        self.sample_goal();
        self.t = Some(0);
        Ok(self.obs())
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, TaskError> {
        check_action(2, action)?;
        let t = self.t.ok_or(TaskError::NotReset)?;
        if t >= self.len {
            return Err(TaskError::EpisodeOver);
        }
        if let Some(p) = self.perturbation {
            if p.at_step == t {
                if let Some(g) = self.gain.get_mut(p.joint) {
                    *g = p.gain;
                }
                self.sample_goal();
            }
        }
        for i in 0..2 {
            self.q[i] += DT * MAX_JOINT_SPEED * self.gain[i] * action[i].clamp(-1.0, 1.0);
        }
        self.t = Some(t + 1);
        Ok(Step {
            obs: self.obs(),
            reward: -self.distance(),
            done: t + 1 == self.len,
            correct: None,
        })
    }
}

/// Mean progress `1 - d/d0` over steps `[from, to)`, where `d0` is the
/// distance at step `start` (the first step after a goal was set).
pub fn mean_progress(rewards: &[f64], start: usize, from: usize, to: usize) -> f64 {
    let d0 = -rewards[start];
    if d0 <= 0.0 || from >= to {
        return 0.0;
    }
    let window = &rewards[from..to];
    window.iter().map(|r| 1.0 + r / d0).sum::<f64>() / window.len() as f64
}

/// Progress shortly before the perturbation and late after it, from the
/// per-step rewards of one perturbed episode. Windows are `window` steps long;
/// the post window ends `horizon` steps after the perturbation.
pub fn recovery(rewards: &[f64], at: usize, window: usize, horizon: usize) -> (f64, f64) {
    let pre = mean_progress(rewards, 0, at.saturating_sub(window), at);
    let end = (at + horizon).min(rewards.len());
    let post = mean_progress(rewards, at, end.saturating_sub(window).max(at), end);
    (pre, post)
}
