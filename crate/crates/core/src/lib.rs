//! Deterministic teleoperation feedback pipeline.
//!
//! One fixed-rate tick turns a force-torque sample into forearm servo targets,
//! glove IMU and Hall readings into robot-hand finger angles, and robot-hand
//! fingertip forces into vibration duty cycles. Every device is simulated
//! from trace files and the loop runs on an integer microsecond clock, so a
//! run is fully determined by its configuration and input traces.

pub mod bench;
pub mod command_log;
pub mod config;
pub mod episode;
pub mod glove_fusion;
pub mod haptics;
pub mod model;
pub mod pipeline;
pub mod session;
pub mod sim_bus;
pub mod stream;
pub mod wrench_map;

pub use config::{load_config, ConfigError, PipelineConfig};
pub use model::*;
