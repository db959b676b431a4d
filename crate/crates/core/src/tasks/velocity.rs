//! One-dimensional mass with linear drag that should hold a target speed.
//!
//! `v <- v + dt (gain * a - drag * v)`, so a constant action `a` settles at
//! `gain * a / drag`. Reward is `-|v - v*|`.

use super::{check_action, check_variant, Environment, Step, TaskError, TaskKind};

pub const TRAIN_SPEEDS: usize = 8;
pub const EVAL_SPEEDS: usize = 72;
pub const EPISODE_LEN: usize = 100;
pub const DT: f64 = 0.1;
pub const GAIN: f64 = 2.0;
pub const DRAG: f64 = 1.0;
/// Steady speed under full action.
pub const MAX_SPEED: f64 = GAIN / DRAG;

/// Target speed. Training targets are 0.25..=2.0 in steps of 0.25;
/// evaluation targets fall between them.
pub fn target_speed(variant: usize) -> f64 {
    if variant < TRAIN_SPEEDS {
        0.25 * (variant + 1) as f64
    } else {
        0.1375 + 0.025 * (variant - TRAIN_SPEEDS) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Velocity {
    len: usize,
    target: f64,
    pub v: f64,
    t: Option<usize>,
}

impl Velocity {
    pub fn new(len: usize) -> Velocity {
        Velocity {
            len,
            target: 0.0,
            v: 0.0,
            t: None,
        }
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.target / MAX_SPEED, (self.target - self.v) / MAX_SPEED]
    }
}

impl Environment for Velocity {
    fn kind(&self) -> TaskKind {
        TaskKind::Velocity
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn episode_len(&self) -> usize {
        self.len
    }

    fn reset(&mut self, _seed: u64, variant: usize) -> Result<Vec<f64>, TaskError> {
        check_variant(TaskKind::Velocity, variant)?;
        self.target = target_speed(variant);
        self.v = 0.0;
        self.t = Some(0);
        Ok(self.obs())
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, TaskError> {
        check_action(1, action)?;
        let t = self.t.ok_or(TaskError::NotReset)?;
        if t >= self.len {
            return Err(TaskError::EpisodeOver);
        }
        let a = action[0].clamp(-1.0, 1.0);
        self.v += DT * (GAIN * a - DRAG * self.v);
        self.t = Some(t + 1);
        Ok(Step {
            obs: self.obs(),
            reward: -(self.v - self.target).abs(),
            done: t + 1 == self.len,
            correct: None,
        })
    }
}
