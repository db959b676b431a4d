//! Golden functional model of the three-layer plastic SNN.
//!
//! All state lives in [`Half`]. The order of every floating-point operation is
//! fixed here and mirrored by the cycle simulator in [`crate::accel`]; the two
//! must agree bit for bit.

mod model_file;

pub use model_file::{
    export_packed_coefficients, read_model, read_model_file, write_model, write_model_file,
    ModelFile, MODEL_MAGIC, MODEL_VERSION,
};

use crate::half::{fused_psum, Half};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnnError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("malformed model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SnnError>;

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SnnError::Dimension {
            what,
            expected,
            got,
        })
    }
}

/// Sizes and neuron constants of a three-layer (two weight matrix) network.
/// The membrane time constant is fixed at 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    #[serde(default = "NetworkConfig::default_v_th")]
    pub v_th: Half,
    #[serde(default = "NetworkConfig::default_lambda")]
    pub lambda: Half,
}

impl NetworkConfig {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        NetworkConfig {
            n_in,
            n_hidden,
            n_out,
            v_th: Self::default_v_th(),
            lambda: Self::default_lambda(),
        }
    }

    fn default_v_th() -> Half {
        Half::ONE
    }

    fn default_lambda() -> Half {
        Half::HALF
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_in", self.n_in),
            ("n_hidden", self.n_hidden),
            ("n_out", self.n_out),
        ] {
            if n == 0 {
                return Err(SnnError::Config(format!("{name} must be at least 1")));
            }
            if n > u32::MAX as usize {
                return Err(SnnError::Config(format!("{name} does not fit in u32")));
            }
        }
        if !(self.lambda.to_f32() > 0.0 && self.lambda.to_f32() < 1.0) {
            return Err(SnnError::Config(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        if !(self.v_th.to_f32() > 0.0) || !self.v_th.is_finite() {
            return Err(SnnError::Config(format!(
                "v_th must be positive and finite, got {}",
                self.v_th
            )));
        }
        Ok(())
    }

    /// `(n_post, n_pre)` of each weight matrix.
    pub fn layer_shapes(&self) -> [(usize, usize); 2] {
        [(self.n_hidden, self.n_in), (self.n_out, self.n_hidden)]
    }

    pub fn synapse_count(&self) -> usize {
        self.n_hidden * self.n_in + self.n_out * self.n_hidden
    }
}

/// Row-major `[post][pre]` matrix of halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Half>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix::filled(rows, cols, Half::ZERO)
    }

    pub fn filled(rows: usize, cols: usize, value: Half) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Half>) -> Result<Matrix> {
        check_len("matrix data", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, post: usize, pre: usize) -> Half {
        self.data[post * self.cols + pre]
    }

    #[inline]
    pub fn set(&mut self, post: usize, pre: usize, value: Half) {
        self.data[post * self.cols + pre] = value;
    }

    pub fn row(&self, post: usize) -> &[Half] {
        &self.data[post * self.cols..(post + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Half] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Half] {
        &mut self.data
    }

    fn check_shape(&self, what: &'static str, rows: usize, cols: usize) -> Result<()> {
        check_len(what, rows, self.rows)?;
        check_len(what, cols, self.cols)
    }
}

/// One synapse's plasticity coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Coefficients {
    pub alpha: Half,
    pub beta: Half,
    pub gamma: Half,
    pub delta: Half,
}

/// Per-synapse coefficient tensors for one weight matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRule {
    pub alpha: Matrix,
    pub beta: Matrix,
    pub gamma: Matrix,
    pub delta: Matrix,
}

impl LayerRule {
    pub fn zeros(rows: usize, cols: usize) -> LayerRule {
        LayerRule {
            alpha: Matrix::zeros(rows, cols),
            beta: Matrix::zeros(rows, cols),
            gamma: Matrix::zeros(rows, cols),
            delta: Matrix::zeros(rows, cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.alpha.rows
    }

    pub fn cols(&self) -> usize {
        self.alpha.cols
    }

    #[inline]
    pub fn coefficients(&self, post: usize, pre: usize) -> Coefficients {
        Coefficients {
            alpha: self.alpha.get(post, pre),
            beta: self.beta.get(post, pre),
            gamma: self.gamma.get(post, pre),
            delta: self.delta.get(post, pre),
        }
    }

    pub fn set_coefficients(&mut self, post: usize, pre: usize, c: Coefficients) {
        self.alpha.set(post, pre, c.alpha);
        self.beta.set(post, pre, c.beta);
        self.gamma.set(post, pre, c.gamma);
        self.delta.set(post, pre, c.delta);
    }

    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        self.alpha.check_shape("alpha", rows, cols)?;
        self.beta.check_shape("beta", rows, cols)?;
        self.gamma.check_shape("gamma", rows, cols)?;
        self.delta.check_shape("delta", rows, cols)
    }
}

/// The full learnable rule: one [`LayerRule`] per weight matrix. The trace
/// decay constant is part of [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlasticityRule {
    pub layers: [LayerRule; 2],
}

impl PlasticityRule {
    pub fn zeros(config: &NetworkConfig) -> PlasticityRule {
        let [(r1, c1), (r2, c2)] = config.layer_shapes();
        PlasticityRule {
            layers: [LayerRule::zeros(r1, c1), LayerRule::zeros(r2, c2)],
        }
    }

    pub fn check_shape(&self, config: &NetworkConfig) -> Result<()> {
        for (layer, (rows, cols)) in self.layers.iter().zip(config.layer_shapes()) {
            layer.check_shape(rows, cols)?;
        }
        Ok(())
    }

    /// Number of scalar coefficients (4 per synapse).
    pub fn genome_len(config: &NetworkConfig) -> usize {
        4 * config.synapse_count()
    }

    /// Builds a rule from a real-valued genome laid out layer by layer,
    /// synapse-major `[post][pre]`, with `(alpha, beta, gamma, delta)`
    /// interleaved per synapse. Values are rounded to the nearest half.
    pub fn from_genome(config: &NetworkConfig, genome: &[f64]) -> Result<PlasticityRule> {
        check_len("genome", Self::genome_len(config), genome.len())?;
        let mut rule = PlasticityRule::zeros(config);
        let mut chunks = genome.chunks_exact(4);
        for layer in rule.layers.iter_mut() {
            for post in 0..layer.rows() {
                for pre in 0..layer.cols() {
                    let q = chunks.next().expect("length checked");
                    layer.set_coefficients(
                        post,
                        pre,
                        Coefficients {
                            alpha: Half::from_f64(q[0]),
                            beta: Half::from_f64(q[1]),
                            gamma: Half::from_f64(q[2]),
                            delta: Half::from_f64(q[3]),
                        },
                    );
                }
            }
        }
        Ok(rule)
    }

    /// Inverse of [`PlasticityRule::from_genome`] (exact, halves widen losslessly).
    pub fn to_genome(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for post in 0..layer.rows() {
                for pre in 0..layer.cols() {
                    let c = layer.coefficients(post, pre);
                    out.extend([c.alpha, c.beta, c.gamma, c.delta].map(Half::to_f64));
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            [&l.alpha, &l.beta, &l.gamma, &l.delta]
                .iter()
                .all(|m| m.as_slice().iter().all(|h| h.is_zero()))
        })
    }
}

/// `S(t) = lambda * S(t-1) + s(t)`.
#[inline]
pub fn trace_step(trace: Half, spike: bool, lambda: Half) -> Half {
    lambda * trace + if spike { Half::ONE } else { Half::ZERO }
}

/// One LIF update with `tau_m = 2`: `V + (I - V) / 2`, using only adds and a
/// halving. Fires when the result reaches `v_th`, with a hard reset to zero.
#[inline]
pub fn lif_step(v: Half, current: Half, v_th: Half) -> (Half, bool) {
    let v_mid = v + (current + v.negate()).halve();
    if v_mid.ge(v_th) {
        (Half::ZERO, true)
    } else {
        (v_mid, false)
    }
}

/// `alpha*S_pre*S_post + beta*S_pre + gamma*S_post + delta`.
///
/// Each product is rounded on its own (`alpha * (S_pre * S_post)` for the
/// associative term) and the four terms are summed as
/// `(t_alpha + t_beta) + (t_gamma + t_delta)`, matching a two-level adder tree.
#[inline]
pub fn plasticity_delta(c: Coefficients, s_pre: Half, s_post: Half) -> Half {
    let t_alpha = c.alpha * (s_pre * s_post);
    let t_beta = c.beta * s_pre;
    let t_gamma = c.gamma * s_post;
    (t_alpha + t_beta) + (t_gamma + c.delta)
}

/// Weights, membrane potentials, output spikes and post-synaptic traces of
/// one layer. The pre-synaptic trace belongs to whoever owns the presynaptic
/// population (the input for layer 1, layer 1 itself for layer 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerState {
    pub weights: Matrix,
    pub v: Vec<Half>,
    pub post_trace: Vec<Half>,
    pub out_spikes: Vec<bool>,
}

impl LayerState {
    pub fn zeros(n_post: usize, n_pre: usize) -> LayerState {
        LayerState {
            weights: Matrix::zeros(n_post, n_pre),
            v: vec![Half::ZERO; n_post],
            post_trace: vec![Half::ZERO; n_post],
            out_spikes: vec![false; n_post],
        }
    }

    pub fn n_post(&self) -> usize {
        self.weights.rows
    }

    pub fn n_pre(&self) -> usize {
        self.weights.cols
    }

    fn check(&self) -> Result<()> {
        check_len("membrane potentials", self.n_post(), self.v.len())?;
        check_len("post trace", self.n_post(), self.post_trace.len())?;
        check_len("output spikes", self.n_post(), self.out_spikes.len())
    }
}

/// Forward pass of one layer for one timestep.
///
/// Input current of each postsynaptic neuron is the spike-gated sum of its
/// weight row in ascending presynaptic order, starting from `+0`. Then the LIF
/// update, then the trace updates: `pre_trace` (if this layer owns it) with
/// `in_spikes`, and the layer's post trace with its new spikes.
pub fn forward_layer(
    layer: &mut LayerState,
    pre_trace: Option<&mut [Half]>,
    in_spikes: &[bool],
    v_th: Half,
    lambda: Half,
) -> Result<()> {
    check_len("input spikes", layer.n_pre(), in_spikes.len())?;
    layer.check()?;
    if let Some(t) = pre_trace.as_deref() {
        check_len("pre trace", layer.n_pre(), t.len())?;
    }
    for post in 0..layer.n_post() {
        let row = layer.weights.row(post);
        let current = row
            .iter()
            .zip(in_spikes)
            .fold(Half::ZERO, |acc, (&w, &s)| fused_psum(acc, w, s));
        let (v_next, spike) = lif_step(layer.v[post], current, v_th);
        layer.v[post] = v_next;
        layer.out_spikes[post] = spike;
    }
    if let Some(trace) = pre_trace {
        for (t, &s) in trace.iter_mut().zip(in_spikes) {
            *t = trace_step(*t, s, lambda);
        }
    }
    for (t, &s) in layer.post_trace.iter_mut().zip(&layer.out_spikes) {
        *t = trace_step(*t, s, lambda);
    }
    Ok(())
}

/// `w_ij += plasticity_delta(rule_ij, S_j, S_i)` for every synapse. Deltas
/// depend only on the traces, so update order does not matter.
pub fn plasticity_layer(layer: &mut LayerState, rule: &LayerRule, pre_trace: &[Half]) -> Result<()> {
    rule.check_shape(layer.n_post(), layer.n_pre())?;
    check_len("pre trace", layer.n_pre(), pre_trace.len())?;
    layer.check()?;
    let cols = layer.n_pre();
    for post in 0..layer.n_post() {
        let s_post = layer.post_trace[post];
        let row = &mut layer.weights.data[post * cols..(post + 1) * cols];
        for (pre, w) in row.iter_mut().enumerate() {
            *w = *w + plasticity_delta(rule.coefficients(post, pre), pre_trace[pre], s_post);
        }
    }
    Ok(())
}

/// Complete state of the network. The hidden layer's trace is stored once, as
/// layer 1's post trace, and read as layer 2's pre trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkState {
    pub config: NetworkConfig,
    pub input_trace: Vec<Half>,
    pub layers: [LayerState; 2],
}

impl NetworkState {
    /// Zero weights, potentials and traces.
    pub fn new(config: NetworkConfig) -> Result<NetworkState> {
        config.validate()?;
        Ok(NetworkState {
            config,
            input_trace: vec![Half::ZERO; config.n_in],
            layers: [
                LayerState::zeros(config.n_hidden, config.n_in),
                LayerState::zeros(config.n_out, config.n_hidden),
            ],
        })
    }

    /// Clears potentials, traces and spikes; keeps weights.
    pub fn reset_dynamics(&mut self) {
        self.input_trace.fill(Half::ZERO);
        for l in &mut self.layers {
            l.v.fill(Half::ZERO);
            l.post_trace.fill(Half::ZERO);
            l.out_spikes.fill(false);
        }
    }

    pub fn zero_weights(&mut self) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().fill(Half::ZERO);
        }
    }

    pub fn hidden_trace(&self) -> &[Half] {
        &self.layers[0].post_trace
    }

    pub fn output_spikes(&self) -> &[bool] {
        &self.layers[1].out_spikes
    }

    /// SHA-256 over weights, potentials, traces and last spikes, in a fixed
    /// little-endian layout.
    pub fn state_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |xs: &[Half]| {
            for x in xs {
                hasher.update(x.to_le_bytes());
            }
        };
        feed(&self.input_trace);
        for l in &self.layers {
            feed(l.weights.as_slice());
            feed(&l.v);
            feed(&l.post_trace);
        }
        for l in &self.layers {
            let bits: Vec<u8> = l.out_spikes.iter().map(|&s| s as u8).collect();
            hasher.update(&bits);
        }
        hex::encode(hasher.finalize())
    }
}

/// One timestep of inference plus adaptation:
/// L1 forward, L1 plasticity, L2 forward, L2 plasticity.
pub fn network_timestep<'a>(
    net: &'a mut NetworkState,
    rule: &PlasticityRule,
    in_spikes: &[bool],
) -> Result<&'a [bool]> {
    check_len("input spikes", net.config.n_in, in_spikes.len())?;
    rule.check_shape(&net.config)?;
    let NetworkConfig { v_th, lambda, .. } = net.config;
    let [l1, l2] = &mut net.layers;
    forward_layer(l1, Some(&mut net.input_trace), in_spikes, v_th, lambda)?;
    plasticity_layer(l1, &rule.layers[0], &net.input_trace)?;
    forward_layer(l2, None, &l1.out_spikes, v_th, lambda)?;
    plasticity_layer(l2, &rule.layers[1], &l1.post_trace)?;
    Ok(&net.layers[1].out_spikes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(x: f64) -> Half {
        Half::from_f64(x)
    }

    #[test]
    fn trace_examples() {
        assert_eq!(trace_step(h(0.0), false, h(0.5)), h(0.0));
        assert_eq!(trace_step(h(1.0), true, h(0.5)), h(1.5));
        let mut s = h(1.0);
        for _ in 0..3 {
            s = trace_step(s, false, h(0.5));
        }
        assert_eq!(s, h(0.125));
    }

    #[test]
    fn lif_examples() {
        assert_eq!(lif_step(h(0.0), h(0.0), h(1.0)), (h(0.0), false));
        assert_eq!(lif_step(h(0.0), h(2.0), h(1.0)), (h(0.0), true));
        assert_eq!(lif_step(h(1.0), h(0.0), h(2.0)), (h(0.5), false));
    }

    #[test]
    fn delta_examples() {
        let c = Coefficients {
            alpha: h(0.3),
            beta: h(-0.2),
            gamma: h(0.1),
            delta: h(-0.01),
        };
        assert_eq!(plasticity_delta(c, h(0.0), h(0.0)), c.delta);
        let only_alpha = Coefficients {
            alpha: h(1.0),
            ..Default::default()
        };
        assert_eq!(plasticity_delta(only_alpha, h(0.5), h(0.25)), h(0.125));
    }

    #[test]
    fn forward_rejects_bad_dims_without_mutation() {
        let mut layer = LayerState::zeros(3, 4);
        layer.v[0] = h(0.5);
        let before = layer.clone();
        let err = forward_layer(&mut layer, None, &[true; 3], h(1.0), h(0.5)).unwrap_err();
        assert!(matches!(err, SnnError::Dimension { .. }));
        assert_eq!(layer, before);
    }

    #[test]
    fn single_spike_path_fires() {
        let mut layer = LayerState::zeros(2, 3);
        layer.weights.set(1, 2, h(4.0));
        forward_layer(&mut layer, None, &[false, false, true], h(1.0), h(0.5)).unwrap();
        assert_eq!(layer.out_spikes, vec![false, true]);
        assert_eq!(layer.post_trace, vec![h(0.0), h(1.0)]);
    }

    #[test]
    fn uniform_decay_rule() {
        let mut layer = LayerState::zeros(2, 2);
        layer.weights.as_mut_slice().fill(h(1.0));
        let mut rule = LayerRule::zeros(2, 2);
        rule.delta.as_mut_slice().fill(h(-0.125));
        plasticity_layer(&mut layer, &rule, &[h(0.0); 2]).unwrap();
        assert!(layer.weights.as_slice().iter().all(|&w| w == h(0.875)));
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::new(1, 1, 1).validate().is_ok());
        assert!(NetworkConfig::new(0, 1, 1).validate().is_err());
        let mut c = NetworkConfig::new(1, 1, 1);
        c.lambda = h(1.0);
        assert!(c.validate().is_err());
        c.lambda = h(0.5);
        c.v_th = h(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_is_strict() {
        let ok: NetworkConfig =
            serde_json::from_str(r#"{"n_in":2,"n_hidden":3,"n_out":1}"#).unwrap();
        assert_eq!(ok.v_th, Half::ONE);
        assert_eq!(ok.lambda, Half::HALF);
        assert!(serde_json::from_str::<NetworkConfig>(
            r#"{"n_in":2,"n_hidden":3,"n_out":1,"tau":2}"#
        )
        .is_err());
    }

    #[test]
    fn genome_round_trip() {
        let cfg = NetworkConfig::new(2, 3, 1);
        let genome: Vec<f64> = (0..PlasticityRule::genome_len(&cfg))
            .map(|i| (i as f64) * 0.125 - 2.0)
            .collect();
        let rule = PlasticityRule::from_genome(&cfg, &genome).unwrap();
        assert_eq!(rule.to_genome(), genome);
        assert_eq!(rule.layers[0].coefficients(0, 1).alpha, h(0.5 - 2.0));
        assert!(PlasticityRule::from_genome(&cfg, &genome[1..]).is_err());
    }
}
