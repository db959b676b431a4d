//! Plastic spiking-network controller with a learnable four-term plasticity
//! rule, an evolution-strategy rule search, desk-scale adaptation tasks, and a
//! cycle-level model of a dual-engine FP16 accelerator.

pub mod accel;
pub mod evolution;
pub mod half;
pub mod snn;
pub mod tasks;

pub use half::Half;
