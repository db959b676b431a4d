//! Bernoulli rate coding of observations and rate decoding of actions.

use rand::Rng;

/// How features and actions map onto neurons. Signed values use an on/off
/// pair of neurons: one carries the positive part, the other the negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coding {
    pub signed_obs: bool,
    pub signed_action: bool,
}

impl Coding {
    pub fn input_width(&self, obs_dim: usize) -> usize {
        if self.signed_obs {
            2 * obs_dim
        } else {
            obs_dim
        }
    }

    pub fn output_width(&self, action_dim: usize) -> usize {
        if self.signed_action {
            2 * action_dim
        } else {
            action_dim
        }
    }
}

/// Stateless apart from a running count of clipped features.
#[derive(Debug, Clone, Default)]
pub struct RateEncoder {
    pub signed: bool,
    /// Features that fell outside their declared bounds and were clipped.
    pub clipped: u64,
}

impl RateEncoder {
    pub fn new(signed: bool) -> RateEncoder {
        RateEncoder { signed, clipped: 0 }
    }

    /// Spike probabilities for one observation. Features are expected in
    /// `[-1, 1]` (signed) or `[0, 1]` (unsigned).
    pub fn probabilities(&mut self, obs: &[f64]) -> Vec<f64> {
        let lo = if self.signed { -1.0 } else { 0.0 };
        let mut p = Vec::with_capacity(obs.len() * 2);
        for &x in obs {
            let x = if x.is_nan() { 0.0 } else { x };
            if x < lo || x > 1.0 {
                self.clipped += 1;
            }
            let x = x.clamp(lo, 1.0);
            if self.signed {
                p.push(x.max(0.0));
                p.push((-x).max(0.0));
            } else {
                p.push(x);
            }
        }
        p
    }

    /// One timestep of spikes for the given probabilities. Probability 0
    /// never fires and 1 always fires.
    pub fn sample(probabilities: &[f64], rng: &mut impl Rng) -> Vec<bool> {
        probabilities
            .iter()
            .map(|&p| p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p))
            .collect()
    }
}

/// Spike counts over a window of `window` timesteps to actions. Signed
/// coding gives `rate(on) - rate(off)` in `[-1, 1]`; unsigned gives the
/// rates themselves.
pub fn decode_rates(counts: &[u32], window: usize, signed: bool) -> Vec<f64> {
    let w = window.max(1) as f64;
    if signed {
        counts
            .chunks_exact(2)
            .map(|c| (c[0] as f64 - c[1] as f64) / w)
            .collect()
    } else {
        counts.iter().map(|&c| c as f64 / w).collect()
    }
}
