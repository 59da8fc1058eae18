//! Simulated devices: trace files, zero-order-hold replay and synthetic
//! trace generation.

pub mod synth;
pub mod trace;

pub use synth::{gen_synthetic, sample_count, step_onset_tick, Scenario, SynthError};
pub use trace::{
    load_trace, DeviceKind, TraceCursor, TraceError, TraceSample, TraceSet, TraceSource,
};
