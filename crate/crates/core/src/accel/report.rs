//! Latency and throughput reporting for synthetic workloads.

use super::config::HardwareConfig;
use super::sim::{Accelerator, RunOptions, SchedulePolicy};
use super::trace::{Counters, CycleEvent};
use super::SimError;
use crate::half::Half;
use crate::snn::{NetworkConfig, NetworkState, PlasticityRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// The machine-readable summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub cycles: u64,
    pub us: f64,
    pub fps: f64,
    pub stalls: u64,
    pub overlap_ratio: f64,
}

impl LatencyReport {
    pub fn from_counters(hw: &HardwareConfig, c: &Counters, frames: u64) -> LatencyReport {
        let us = hw.cycles_to_us(c.cycles);
        LatencyReport {
            cycles: c.cycles,
            us,
            fps: if us > 0.0 { frames as f64 * 1e6 / us } else { 0.0 },
            stalls: c.stall_events,
            overlap_ratio: c.overlap_ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub frames: u64,
    pub timesteps_per_frame: usize,
    /// Probability that an input neuron spikes in a timestep.
    pub input_rate: f64,
    pub seed: u64,
    pub policy: SchedulePolicy,
    /// Record cycle events for this many leading frames.
    pub trace_frames: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            frames: 1,
            timesteps_per_frame: 16,
            input_rate: 0.2,
            seed: 0,
            policy: SchedulePolicy::Overlapped,
            trace_frames: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub report: LatencyReport,
    pub counters: Counters,
    pub timesteps: u64,
    pub hidden_spike_rate: f64,
    pub input_spike_rate: f64,
    /// Events of the traced frames, with cycles counted from the first frame.
    pub events: Vec<CycleEvent>,
}

impl BenchResult {
    pub fn cycles_per_timestep(&self) -> f64 {
        self.report.cycles as f64 / self.timesteps.max(1) as f64
    }
}

/// Synthetic network: Gaussian weights scaled so the hidden layer fires at a
/// moderate rate under the given input rate, and small random plasticity
/// coefficients so weights stay bounded over a benchmark.
pub fn synthetic_network(config: NetworkConfig, input_rate: f64, seed: u64) -> (NetworkState, PlasticityRule) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = NetworkState::new(config).expect("valid config");
    let rates = [input_rate.max(1e-3), 0.1];
    for (l, layer) in state.layers.iter_mut().enumerate() {
        let n_pre = layer.n_pre() as f64;
        let drive = rates[l] * n_pre;
        let w = Normal::new(1.5 / drive, 1.0 / drive.sqrt()).expect("finite parameters");
        for x in layer.weights.as_mut_slice() {
            *x = Half::from_f64(w.sample(&mut rng));
        }
    }
    let genome: Vec<f64> = (0..PlasticityRule::genome_len(&config))
        .map(|_| rng.random_range(-1e-3..1e-3))
        .collect();
    let rule = PlasticityRule::from_genome(&config, &genome).expect("genome length matches");
    (state, rule)
}

/// Runs `frames` independent frames of Bernoulli input through the cycle
/// model. State persists between frames, as on the device.
pub fn run_benchmark(config: NetworkConfig, hw: &HardwareConfig, opts: &BenchOptions) -> Result<BenchResult, SimError> {
    let (state, rule) = synthetic_network(config, opts.input_rate, opts.seed);
    let mut acc = Accelerator::new(hw, &state, &rule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut total = Counters::default();
    let mut events = Vec::new();
    let (mut in_spikes, mut hid_spikes) = (0u64, 0u64);
    for frame in 0..opts.frames {
        let run_opts = RunOptions {
            policy: opts.policy,
            record_events: frame < opts.trace_frames,
        };
        let inputs: Vec<Vec<bool>> = (0..opts.timesteps_per_frame)
            .map(|_| (0..config.n_in).map(|_| rng.random_bool(opts.input_rate)).collect())
            .collect();
        in_spikes += inputs.iter().flatten().filter(|&&s| s).count() as u64;
        let r = acc.run_stream(&inputs, &run_opts)?;
        hid_spikes += r.hidden.iter().flatten().filter(|&&s| s).count() as u64;
        events.extend(r.events.into_iter().map(|mut e| {
            e.cycle += total.cycles;
            e
        }));
        total.accumulate(&r.counters);
    }
    let timesteps = opts.frames * opts.timesteps_per_frame as u64;
    let denom = |n: usize| (timesteps as f64 * n as f64).max(1.0);
    Ok(BenchResult {
        report: LatencyReport::from_counters(hw, &total, opts.frames),
        counters: total,
        timesteps,
        input_spike_rate: in_spikes as f64 / denom(config.n_in),
        hidden_spike_rate: hid_spikes as f64 / denom(config.n_hidden),
        events,
    })
}

/// Modelling assumptions printed alongside every report.
pub fn assumptions(hw: &HardwareConfig) -> Vec<String> {
    vec![
        format!("{} processing elements, {} MHz clock", hw.pe_count, hw.clock_mhz),
        format!(
            "{} plasticity lanes of 4 multipliers; one packed coefficient word per cycle",
            hw.plasticity_lanes
        ),
        "every bank dual-ported; writes win same-word conflicts, the read retries next cycle".into(),
        "forward fetches weights only for spiking inputs; plasticity visits every synapse".into(),
        "weights, coefficients, potentials and traces all resident on chip".into(),
        "host transfers and input encoding not modelled".into(),
    ]
}
