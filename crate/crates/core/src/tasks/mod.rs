//! Small closed-form environments for rule search and online adaptation, plus
//! the spike coding and controller loop that connect them to a network.

pub mod classify;
pub mod coding;
pub mod controller;
pub mod point_mass;
pub mod reaching;
pub mod velocity;

pub use coding::{decode_rates, Coding, RateEncoder};
pub use controller::{run_episode, Backend, Controller, CycleBackend, EpisodeResult, FunctionalBackend, LogRow};

use crate::snn::{NetworkConfig, SnnError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("unknown task {0:?}; valid tasks: {valid}", valid = TaskKind::names().join(", "))]
    UnknownTask(String),
    #[error("variant {variant} out of range for {task} (0..{count})")]
    BadVariant { task: &'static str, variant: usize, count: usize },
    #[error("step called after the episode finished")]
    EpisodeOver,
    #[error("step called before reset")]
    NotReset,
    #[error("expected {expected} action components, got {got}")]
    ActionDim { expected: usize, got: usize },
    #[error("dataset record {index}: {reason}")]
    Dataset { index: usize, reason: String },
    #[error(transparent)]
    Snn(#[from] SnnError),
    #[error(transparent)]
    Sim(#[from] crate::accel::SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Classification tasks: whether the prediction was right.
    pub correct: Option<bool>,
}

/// Episodic environment contract. Deterministic given `(seed, variant)` and
/// the action sequence.
pub trait Environment: Send {
    fn kind(&self) -> TaskKind;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn episode_len(&self) -> usize;
    fn reset(&mut self, seed: u64, variant: usize) -> Result<Vec<f64>, TaskError>;
    fn step(&mut self, action: &[f64]) -> Result<Step, TaskError>;
}

/// Mid-episode change of a joint's gain; used by the reaching task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub at_step: usize,
    pub joint: usize,
    pub gain: f64,
}

impl Perturbation {
    pub const WEAK_JOINT: Perturbation = Perturbation {
        at_step: 100,
        joint: 0,
        gain: 0.25,
    };
    pub const JOINT_FREEZE: Perturbation = Perturbation {
        at_step: 100,
        joint: 0,
        gain: 0.0,
    };

    pub fn from_name(name: &str) -> Option<Option<Perturbation>> {
        match name {
            "none" => Some(None),
            "joint-weak" => Some(Some(Perturbation::WEAK_JOINT)),
            "joint-freeze" => Some(Some(Perturbation::JOINT_FREEZE)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PointMass,
    Velocity,
    Reaching,
    MiniClassify,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::PointMass,
        TaskKind::Velocity,
        TaskKind::Reaching,
        TaskKind::MiniClassify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::PointMass => "point_mass",
            TaskKind::Velocity => "velocity",
            TaskKind::Reaching => "reaching",
            TaskKind::MiniClassify => "mini_classify",
        }
    }

    pub fn names() -> Vec<&'static str> {
        TaskKind::ALL.iter().map(|t| t.name()).collect()
    }

    pub fn coding(self) -> Coding {
        match self {
            TaskKind::MiniClassify => Coding {
                signed_obs: false,
                signed_action: false,
            },
            _ => Coding {
                signed_obs: true,
                signed_action: true,
            },
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            TaskKind::PointMass | TaskKind::Velocity | TaskKind::Reaching => 2,
            TaskKind::MiniClassify => classify::PIXELS,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            TaskKind::PointMass | TaskKind::Reaching => 2,
            TaskKind::Velocity => 1,
            TaskKind::MiniClassify => classify::CLASSES,
        }
    }

    pub fn default_hidden(self) -> usize {
        match self {
            TaskKind::MiniClassify => 32,
            _ => 16,
        }
    }

    /// Network whose input and output widths match the task's coding.
    pub fn network_config(self, n_hidden: usize) -> NetworkConfig {
        let c = self.coding();
        NetworkConfig::new(
            c.input_width(self.obs_dim()),
            n_hidden,
            c.output_width(self.action_dim()),
        )
    }

    /// Variants used during rule search.
    pub fn train_variants(self) -> Vec<usize> {
        match self {
            TaskKind::PointMass => (0..point_mass::TRAIN_ANGLES).collect(),
            TaskKind::Velocity => (0..velocity::TRAIN_SPEEDS).collect(),
            TaskKind::Reaching => (0..4).collect(),
            TaskKind::MiniClassify => vec![classify::TRAIN_SPLIT],
        }
    }

    /// Held-out variants.
    pub fn eval_variants(self) -> Vec<usize> {
        match self {
            TaskKind::PointMass => (point_mass::TRAIN_ANGLES..point_mass::TRAIN_ANGLES + point_mass::EVAL_ANGLES).collect(),
            TaskKind::Velocity => (velocity::TRAIN_SPEEDS..velocity::TRAIN_SPEEDS + velocity::EVAL_SPEEDS).collect(),
            TaskKind::Reaching => (100..110).collect(),
            TaskKind::MiniClassify => vec![classify::TEST_SPLIT],
        }
    }

    pub fn variant_count(self) -> usize {
        match self {
            TaskKind::PointMass => point_mass::TRAIN_ANGLES + point_mass::EVAL_ANGLES,
            TaskKind::Velocity => velocity::TRAIN_SPEEDS + velocity::EVAL_SPEEDS,
            TaskKind::Reaching => usize::MAX,
            TaskKind::MiniClassify => 2,
        }
    }

    /// Lowest return an episode of `len` steps can produce; failed rollouts
    /// are scored with it.
    pub fn floor(self, len: usize) -> f64 {
        let per_step = match self {
            TaskKind::PointMass | TaskKind::MiniClassify => 1.0,
            TaskKind::Velocity => velocity::MAX_SPEED * 2.0,
            TaskKind::Reaching => reaching::MAX_REACH * 2.0,
        };
        -(len as f64) * per_step
    }

    /// Default episode length and, for reaching, the default perturbation.
    pub fn make(self, episode_len: Option<usize>, perturbation: Option<Perturbation>) -> Box<dyn Environment> {
        match self {
            TaskKind::PointMass => Box::new(point_mass::PointMass::new(episode_len.unwrap_or(point_mass::EPISODE_LEN))),
            TaskKind::Velocity => Box::new(velocity::Velocity::new(episode_len.unwrap_or(velocity::EPISODE_LEN))),
            TaskKind::Reaching => Box::new(reaching::Reaching::new(
                episode_len.unwrap_or(reaching::EPISODE_LEN),
                perturbation,
            )),
            TaskKind::MiniClassify => Box::new(classify::MiniClassify::new(
                classify::Dataset::generate(classify::DEFAULT_SIZE, 0),
                episode_len.unwrap_or(classify::EPISODE_LEN),
            )),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<TaskKind, TaskError> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TaskError::UnknownTask(s.to_string()))
    }
}

fn check_variant(task: TaskKind, variant: usize) -> Result<(), TaskError> {
    let count = task.variant_count();
    if variant < count {
        Ok(())
    } else {
        Err(TaskError::BadVariant {
            task: task.name(),
            variant,
            count,
        })
    }
}

fn check_action(expected: usize, action: &[f64]) -> Result<(), TaskError> {
    if action.len() == expected {
        Ok(())
    } else {
        Err(TaskError::ActionDim {
            expected,
            got: action.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(t.name().parse::<TaskKind>().unwrap(), t);
        }
        let err = "ant".parse::<TaskKind>().unwrap_err().to_string();
        assert!(err.contains("point_mass") && err.contains("reaching"), "{err}");
    }

    #[test]
    fn network_widths_follow_coding() {
        let c = TaskKind::PointMass.network_config(16);
        assert_eq!((c.n_in, c.n_out), (4, 4));
        let c = TaskKind::MiniClassify.network_config(32);
        assert_eq!((c.n_in, c.n_out), (64, 10));
    }

    #[test]
    fn variant_splits_have_the_expected_sizes() {
        assert_eq!(TaskKind::PointMass.train_variants().len(), 8);
        assert_eq!(TaskKind::PointMass.eval_variants().len(), 72);
        assert_eq!(TaskKind::Velocity.train_variants().len(), 8);
        assert_eq!(TaskKind::Velocity.eval_variants().len(), 72);
    }
}
