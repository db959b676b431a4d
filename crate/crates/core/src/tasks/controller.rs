//! Closed-loop control: encode an observation into a window of input spikes,
//! run the network for that window, decode the output counts into an action.

use super::coding::{decode_rates, RateEncoder};
use super::{Environment, TaskError, TaskKind};
use crate::accel::{Accelerator, Counters, HardwareConfig, RunOptions};
use crate::snn::{network_timestep, NetworkState, PlasticityRule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Anything that advances the network by a window of input spikes and
/// returns the output spikes of each timestep.
pub trait Backend {
    fn run(&mut self, inputs: &[Vec<bool>]) -> Result<Vec<Vec<bool>>, TaskError>;
    fn network(&self) -> NetworkState;
}

/// Reference implementation, timestep by timestep.
#[derive(Debug, Clone)]
pub struct FunctionalBackend {
    pub net: NetworkState,
    pub rule: PlasticityRule,
}

impl FunctionalBackend {
    pub fn new(net: NetworkState, rule: PlasticityRule) -> Result<FunctionalBackend, TaskError> {
        rule.check_shape(&net.config)?;
        Ok(FunctionalBackend { net, rule })
    }
}

impl Backend for FunctionalBackend {
    fn run(&mut self, inputs: &[Vec<bool>]) -> Result<Vec<Vec<bool>>, TaskError> {
        inputs
            .iter()
            .map(|s| Ok(network_timestep(&mut self.net, &self.rule, s)?.to_vec()))
            .collect()
    }

    fn network(&self) -> NetworkState {
        self.net.clone()
    }
}

/// Cycle-level accelerator model. Counters accumulate over all windows.
#[derive(Debug, Clone)]
pub struct CycleBackend {
    pub acc: Accelerator,
    pub opts: RunOptions,
    pub counters: Counters,
    pub ordering_violations: usize,
}

impl CycleBackend {
    pub fn new(hw: &HardwareConfig, net: &NetworkState, rule: &PlasticityRule, opts: RunOptions) -> Result<CycleBackend, TaskError> {
        Ok(CycleBackend {
            acc: Accelerator::new(hw, net, rule)?,
            opts,
            counters: Counters::default(),
            ordering_violations: 0,
        })
    }
}

impl Backend for CycleBackend {
    fn run(&mut self, inputs: &[Vec<bool>]) -> Result<Vec<Vec<bool>>, TaskError> {
        let report = self.acc.run_stream(inputs, &self.opts)?;
        self.counters.accumulate(&report.counters);
        self.ordering_violations += report.ordering_violations.len();
        Ok(report.outputs)
    }

    fn network(&self) -> NetworkState {
        self.acc.to_network_state()
    }
}

pub struct Controller<B> {
    pub backend: B,
    pub encoder: RateEncoder,
    signed_action: bool,
    /// Network timesteps per control step.
    pub window: usize,
    rng: ChaCha8Rng,
}

impl<B: Backend> Controller<B> {
    pub fn new(backend: B, task: TaskKind, window: usize) -> Controller<B> {
        let coding = task.coding();
        Controller {
            backend,
            encoder: RateEncoder::new(coding.signed_obs),
            signed_action: coding.signed_action,
            window,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Restarts the input spike sampler for an episode.
    pub fn reseed(&mut self, seed: u64, variant: usize) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(1 + variant as u64);
    }

    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>, TaskError> {
        let p = self.encoder.probabilities(obs);
        let inputs: Vec<Vec<bool>> = (0..self.window)
            .map(|_| RateEncoder::sample(&p, &mut self.rng))
            .collect();
        let outputs = self.backend.run(&inputs)?;
        let n_out = outputs.first().map_or(0, Vec::len);
        let mut counts = vec![0u32; n_out];
        for step in &outputs {
            for (c, &s) in counts.iter_mut().zip(step) {
                *c += s as u32;
            }
        }
        Ok(decode_rates(&counts, self.window, self.signed_action))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeResult {
    pub total: f64,
    pub rewards: Vec<f64>,
    /// Classification steps predicted correctly.
    pub correct: usize,
    /// Non-finite weights or rewards appeared; `total` is then meaningless.
    pub failed: bool,
    pub rows: Vec<LogRow>,
}

impl EpisodeResult {
    pub fn accuracy(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.correct as f64 / self.rewards.len() as f64
        }
    }
}

fn weights_finite(net: &NetworkState) -> bool {
    net.layers
        .iter()
        .all(|l| l.weights.as_slice().iter().all(|w| w.is_finite()))
}

/// Runs one episode to completion. The controller keeps whatever network
/// state it was given, so callers decide whether to start from scratch.
pub fn run_episode<B: Backend>(
    env: &mut dyn Environment,
    ctl: &mut Controller<B>,
    seed: u64,
    variant: usize,
    log: bool,
) -> Result<EpisodeResult, TaskError> {
    ctl.reseed(seed, variant);
    let mut obs = env.reset(seed, variant)?;
    let mut res = EpisodeResult::default();
    for step in 0..env.episode_len() {
        let action = ctl.act(&obs)?;
        let s = env.step(&action)?;
        res.total += s.reward;
        res.rewards.push(s.reward);
        if s.correct == Some(true) {
            res.correct += 1;
        }
        if log {
            res.rows.push(LogRow {
                step,
                obs: std::mem::take(&mut obs),
                action,
                reward: s.reward,
                correct: s.correct,
            });
        }
        obs = s.obs;
        if s.done {
            break;
        }
    }
    res.failed = !res.total.is_finite() || !weights_finite(&ctl.backend.network());
    Ok(res)
}
