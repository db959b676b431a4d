//! Planar point mass that should move in a commanded direction.
//!
//! Velocity follows the action with a first-order lag,
//! `v <- v + k (a - v)`, and the reward is the velocity component along the
//! target direction. The observation is the target direction itself.

use super::{check_action, check_variant, Environment, Step, TaskError, TaskKind};

pub const TRAIN_ANGLES: usize = 8;
pub const EVAL_ANGLES: usize = 72;
pub const EPISODE_LEN: usize = 50;
/// Velocity response per step.
pub const RESPONSE: f64 = 0.2;
pub const DT: f64 = 0.1;

/// Target heading in degrees. Training variants are multiples of 45 degrees;
/// evaluation variants sit on a 5 degree grid offset by 2.5 so that none of
/// them coincides with a training heading.
pub fn angle_deg(variant: usize) -> f64 {
    if variant < TRAIN_ANGLES {
        45.0 * variant as f64
    } else {
        2.5 + 5.0 * (variant - TRAIN_ANGLES) as f64
    }
}

/// Return of the policy that always outputs the target direction.
pub fn oracle_return(len: usize) -> f64 {
    (1..=len).map(|k| 1.0 - (1.0 - RESPONSE).powi(k as i32)).sum()
}

#[derive(Debug, Clone)]
pub struct PointMass {
    len: usize,
    dir: [f64; 2],
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    t: Option<usize>,
}

impl PointMass {
    pub fn new(len: usize) -> PointMass {
        PointMass {
            len,
            dir: [1.0, 0.0],
            pos: [0.0; 2],
            vel: [0.0; 2],
            t: None,
        }
    }

    pub fn direction(&self) -> [f64; 2] {
        self.dir
    }
}

impl Environment for PointMass {
    fn kind(&self) -> TaskKind {
        TaskKind::PointMass
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

    fn reset(&mut self, _seed: u64, variant: usize) -> Result<Vec<f64>, TaskError> {
        check_variant(TaskKind::PointMass, variant)?;
        let a = angle_deg(variant).to_radians();
        self.dir = [a.cos(), a.sin()];
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.t = Some(0);
        Ok(self.dir.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, TaskError> {
        check_action(2, action)?;
        let t = self.t.ok_or(TaskError::NotReset)?;
        if t >= self.len {
            return Err(TaskError::EpisodeOver);
        }
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            self.vel[i] += RESPONSE * (a - self.vel[i]);
            self.pos[i] += DT * self.vel[i];
        }
        let reward = self.vel[0] * self.dir[0] + self.vel[1] * self.dir[1];
        self.t = Some(t + 1);
        Ok(Step {
            obs: self.dir.to_vec(),
            reward,
            done: t + 1 == self.len,
            correct: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        assert_eq!(angle_deg(0), 0.0);
        assert_eq!(angle_deg(7), 315.0);
        assert_eq!(angle_deg(8), 2.5);
        assert_eq!(angle_deg(79), 357.5);
    }

    #[test]
    fn zero_action_earns_nothing() {
        let mut env = PointMass::new(10);
        env.reset(0, 3).unwrap();
        for _ in 0..10 {
            assert_eq!(env.step(&[0.0, 0.0]).unwrap().reward, 0.0);
        }
        assert!(matches!(env.step(&[0.0, 0.0]), Err(TaskError::EpisodeOver)));
    }
}
