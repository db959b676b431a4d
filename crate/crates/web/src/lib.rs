//! Browser explorers over the core library. Each exported function takes
//! plain numbers and returns a JSON string; the Rust-side functions behind
//! them are public so they can be tested natively.

use fflp::accel::report::synthetic_network;
use fflp::accel::{
    assumptions, Accelerator, HardwareConfig, LatencyReport, RunOptions, SchedulePolicy,
};
use fflp::snn::{lif_step, plasticity_delta, trace_step, Coefficients, NetworkConfig};
use fflp::Half;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

/// Keeps a single cycle-model request responsive in a browser tab.
pub const MAX_SYNAPSES: usize = 200_000;
pub const MAX_TIMESTEPS: usize = 64;
pub const MAX_GRID: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronTrace {
    pub input: Vec<bool>,
    pub v: Vec<f64>,
    pub spike: Vec<bool>,
    pub pre_trace: Vec<f64>,
    pub post_trace: Vec<f64>,
}

/// One LIF neuron fed by a single Bernoulli input through weight `weight`,
/// with the spike traces of both sides.
pub fn neuron_trace(steps: usize, rate: f64, weight: f64, v_th: f64, lambda: f64, seed: u64) -> Result<NeuronTrace, String> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(format!("rate must be in [0, 1], got {rate}"));
    }
    let steps = steps.min(1000);
    let (w, th, lam) = (Half::from_f64(weight), Half::from_f64(v_th), Half::from_f64(lambda));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut v, mut s_pre, mut s_post) = (Half::ZERO, Half::ZERO, Half::ZERO);
    let mut out = NeuronTrace {
        input: Vec::with_capacity(steps),
        v: Vec::with_capacity(steps),
        spike: Vec::with_capacity(steps),
        pre_trace: Vec::with_capacity(steps),
        post_trace: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let x = rng.random_bool(rate);
        let current = if x { w } else { Half::ZERO };
        let (v_next, fired) = lif_step(v, current, th);
        v = v_next;
        s_pre = trace_step(s_pre, x, lam);
        s_post = trace_step(s_post, fired, lam);
        out.input.push(x);
        out.v.push(v.to_f64());
        out.spike.push(fired);
        out.pre_trace.push(s_pre.to_f64());
        out.post_trace.push(s_post.to_f64());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSurface {
    /// Trace values along both axes.
    pub axis: Vec<f64>,
    /// `dw[i][j]` for post trace `axis[i]` and pre trace `axis[j]`.
    pub dw: Vec<Vec<f64>>,
}

/// Weight change of one synapse over a grid of trace values, in half
/// precision exactly as the network applies it.
pub fn delta_surface(alpha: f64, beta: f64, gamma: f64, delta: f64, max_trace: f64, n: usize) -> Result<DeltaSurface, String> {
    if !(2..=MAX_GRID).contains(&n) {
        return Err(format!("grid size must be in 2..={MAX_GRID}, got {n}"));
    }
    if !(max_trace > 0.0 && max_trace.is_finite()) {
        return Err(format!("max trace must be positive, got {max_trace}"));
    }
    let c = Coefficients {
        alpha: Half::from_f64(alpha),
        beta: Half::from_f64(beta),
        gamma: Half::from_f64(gamma),
        delta: Half::from_f64(delta),
    };
    let axis: Vec<Half> = (0..n)
        .map(|i| Half::from_f64(max_trace * i as f64 / (n - 1) as f64))
        .collect();
    let dw = axis
        .iter()
        .map(|&post| axis.iter().map(|&pre| plasticity_delta(c, pre, post).to_f64()).collect())
        .collect();
    Ok(DeltaSurface {
        axis: axis.iter().map(|h| h.to_f64()).collect(),
        dw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Span {
    pub unit: String,
    pub timestep: usize,
    pub phase: String,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleView {
    pub report: LatencyReport,
    pub cycles_per_timestep: f64,
    pub spans: Vec<Span>,
    pub stalls: BTreeMap<String, u64>,
    pub assumptions: Vec<String>,
}

pub struct CycleRequest {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub pe_count: usize,
    pub plasticity_lanes: usize,
    pub clock_mhz: u32,
    pub timesteps: usize,
    pub input_rate: f64,
    pub seed: u64,
    pub serial: bool,
}

/// One frame of Bernoulli input through a synthetic network on the cycle
/// model, with the span of every engine run.
pub fn cycle_view(req: &CycleRequest) -> Result<CycleView, String> {
    let config = NetworkConfig::new(req.n_in, req.n_hidden, req.n_out);
    config.validate().map_err(|e| e.to_string())?;
    if config.synapse_count() > MAX_SYNAPSES {
        return Err(format!("at most {MAX_SYNAPSES} synapses in the browser, got {}", config.synapse_count()));
    }
    if !(1..=MAX_TIMESTEPS).contains(&req.timesteps) {
        return Err(format!("timesteps must be in 1..={MAX_TIMESTEPS}"));
    }
    if !(0.0..=1.0).contains(&req.input_rate) {
        return Err(format!("input rate must be in [0, 1], got {}", req.input_rate));
    }
    let hw = HardwareConfig {
        pe_count: req.pe_count,
        plasticity_lanes: req.plasticity_lanes,
        clock_mhz: req.clock_mhz,
        ..HardwareConfig::default()
    };
    hw.validate().map_err(|e| e.to_string())?;
    let (state, rule) = synthetic_network(config, req.input_rate, req.seed);
    let mut acc = Accelerator::new(&hw, &state, &rule).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed ^ 0x5eed);
    let inputs: Vec<Vec<bool>> = (0..req.timesteps)
        .map(|_| (0..req.n_in).map(|_| rng.random_bool(req.input_rate)).collect())
        .collect();
    let opts = RunOptions {
        policy: if req.serial { SchedulePolicy::Serial } else { SchedulePolicy::Overlapped },
        record_events: false,
    };
    let r = acc.run_stream(&inputs, &opts).map_err(|e| e.to_string())?;
    Ok(CycleView {
        report: LatencyReport::from_counters(&hw, &r.counters, 1),
        cycles_per_timestep: r.counters.cycles as f64 / req.timesteps as f64,
        spans: r
            .spans
            .iter()
            .map(|s| Span {
                unit: s.unit.to_string(),
                timestep: s.timestep,
                phase: format!("{:?}", s.phase),
                start: s.start,
                end: s.end,
            })
            .collect(),
        stalls: r
            .counters
            .stalls_by_reason
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), *v))
            .collect(),
        assumptions: assumptions(&hw),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = neuronTrace)]
pub fn neuron_trace_js(steps: u32, rate: f64, weight: f64, v_th: f64, lambda: f64, seed: u32) -> Result<String, JsError> {
    to_js(neuron_trace(steps as usize, rate, weight, v_th, lambda, u64::from(seed)))
}

#[wasm_bindgen(js_name = deltaSurface)]
pub fn delta_surface_js(alpha: f64, beta: f64, gamma: f64, delta: f64, max_trace: f64, n: u32) -> Result<String, JsError> {
    to_js(delta_surface(alpha, beta, gamma, delta, max_trace, n as usize))
}

#[wasm_bindgen(js_name = cycleView)]
#[allow(clippy::too_many_arguments)]
pub fn cycle_view_js(
    n_in: u32,
    n_hidden: u32,
    n_out: u32,
    pe_count: u32,
    plasticity_lanes: u32,
    clock_mhz: u32,
    timesteps: u32,
    input_rate: f64,
    seed: u32,
    serial: bool,
) -> Result<String, JsError> {
    to_js(cycle_view(&CycleRequest {
        n_in: n_in as usize,
        n_hidden: n_hidden as usize,
        n_out: n_out as usize,
        pe_count: pe_count as usize,
        plasticity_lanes: plasticity_lanes as usize,
        clock_mhz,
        timesteps: timesteps as usize,
        input_rate,
        seed: u64::from(seed),
        serial,
    }))
}
