use super::SimError;
use serde::{Deserialize, Serialize};

/// Parallelism, clock and pipeline latencies of the modelled accelerator.
///
/// Latencies are in cycles. A memory read granted at cycle `c` delivers data
/// at `c + mem_read_latency`; a unit with latency `L` fed at `c` produces its
/// result at `c + L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareConfig {
    /// Postsynaptic neurons processed in parallel; also the word width of the
    /// weight, potential and trace banks.
    pub pe_count: usize,
    pub clock_mhz: u32,
    /// Synapses whose weight update is computed in parallel. Each lane holds
    /// four half-precision multipliers.
    pub plasticity_lanes: usize,
    pub mem_read_latency: u64,
    pub fp_add_latency: u64,
    pub fp_mul_latency: u64,
    /// Depth of the tree summing the four plasticity terms.
    pub adder_tree_latency: u64,
    /// Register stage between the weight adder and the bank write port.
    pub writeback_latency: u64,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            pe_count: 16,
            clock_mhz: 200,
            plasticity_lanes: 4,
            mem_read_latency: 1,
            fp_add_latency: 1,
            fp_mul_latency: 1,
            adder_tree_latency: 2,
            writeback_latency: 1,
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.pe_count == 0 {
            return bad("pe_count must be at least 1");
        }
        if self.plasticity_lanes == 0 || self.plasticity_lanes > self.pe_count {
            return bad("plasticity_lanes must be in 1..=pe_count");
        }
        if self.clock_mhz == 0 {
            return bad("clock_mhz must be positive");
        }
        if self.mem_read_latency == 0 {
            return bad("mem_read_latency must be at least 1");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<HardwareConfig, SimError> {
        let cfg: HardwareConfig =
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Subtract-and-add of the membrane update; halving and the threshold
    /// compare are wiring.
    pub fn neuron_latency(&self) -> u64 {
        2 * self.fp_add_latency
    }

    pub fn trace_latency(&self) -> u64 {
        self.fp_mul_latency + self.fp_add_latency
    }

    /// From operands (coefficients and traces) to the summed delta.
    pub fn delta_latency(&self) -> u64 {
        2 * self.fp_mul_latency + self.adder_tree_latency
    }

    /// Coefficient words per weight word.
    pub fn coeff_groups(&self) -> usize {
        self.pe_count.div_ceil(self.plasticity_lanes)
    }

    pub fn cycles_to_us(&self, cycles: u64) -> f64 {
        cycles as f64 / self.clock_mhz as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_strict() {
        assert!(HardwareConfig::from_json(r#"{"pe_count": 8}"#).is_ok());
        assert!(HardwareConfig::from_json(r#"{"pe_cont": 8}"#).is_err());
        assert!(HardwareConfig::from_json(r#"{"plasticity_lanes": 32}"#).is_err());
    }

    #[test]
    fn derived_latencies() {
        let c = HardwareConfig::default();
        assert_eq!(c.delta_latency(), 4);
        assert_eq!(c.coeff_groups(), 4);
        assert_eq!(c.cycles_to_us(200), 1.0);
    }
}
