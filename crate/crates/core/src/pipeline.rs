//! One fixed-rate tick of the feedback pipeline.
//!
//! Stage order is fixed: filter wrench → encode servos → fuse fingers →
//! pinch calibration → haptics. A tick is a pure function of the pipeline
//! state, the active configuration and the sampled inputs.

use crate::config::{ConfigError, PipelineConfig};
use crate::glove_fusion::FingerFusionState;
use crate::haptics::map_haptics;
use crate::model::{
    FingerAngles, FingertipForces, HallSample, HapticCommand, ImuFrame, ServoCommand, SimClock,
    Wrench,
};
use crate::wrench_map::{encode_wrench, WrenchFilterState};
use serde::Serialize;
use std::time::Instant;

/// Device readings held at one tick boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickInputs {
    pub wrench: Wrench,
    pub imu: ImuFrame,
    pub hall: HallSample,
    pub forces: FingertipForces,
}

impl TickInputs {
    /// Idle devices: no load, glove flat and still, magnet far away.
    pub fn idle(t_us: u64) -> Self {
        TickInputs {
            wrench: Wrench::zero(t_us),
            imu: ImuFrame::at_rest(t_us),
            hall: HallSample { t_us, h: 0.0 },
            forces: FingertipForces::zero(t_us),
        }
    }
}

/// Wall-clock compute time per stage, microseconds. Informational only; never
/// part of any deterministic output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub sample: f64,
    pub wrench: f64,
    pub fusion: f64,
    pub haptics: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    pub t_us: u64,
    /// Post-filter wrench that produced `servo`.
    pub wrench: Wrench,
    pub servo: ServoCommand,
    pub fingers: FingerAngles,
    pub haptic: HapticCommand,
    pub stage_us: StageTimes,
}

fn micros_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e6
}

/// Owner of all per-tick state.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    clock: SimClock,
    tick: u64,
    filter: WrenchFilterState,
    glove: FingerFusionState,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Self {
        Pipeline {
            clock: SimClock::new(cfg.tick_rate_hz),
            tick: 0,
            filter: WrenchFilterState::new(cfg.wrench.window),
            glove: FingerFusionState::new(&cfg.fusion),
            cfg,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Index of the next tick to run.
    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    /// Simulated time of the next tick.
    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    pub fn glove(&self) -> &FingerFusionState {
        &self.glove
    }

    /// Swaps in a new configuration between ticks. The tick rate is fixed
    /// for the life of a pipeline.
    pub fn set_config(&mut self, cfg: PipelineConfig) -> Result<(), ConfigError> {
        cfg.validate()?;
        if cfg.tick_rate_hz != self.cfg.tick_rate_hz {
            return Err(ConfigError::Invalid(
                "tick_rate_hz cannot change while running",
            ));
        }
        self.filter.reconfigure(cfg.wrench.window);
        self.glove.reconfigure(&cfg.fusion);
        self.cfg = cfg;
        Ok(())
    }

    /// Runs one tick on already-sampled inputs and advances the clock.
    pub fn step(&mut self, inputs: &TickInputs) -> TickReport {
        let start = Instant::now();
        let t_us = self.clock.now_us();
        let dt = self.clock.dt();

        let wrench = self.filter.filter(Wrench {
            t_us,
            ..inputs.wrench
        });
        let servo = encode_wrench(&wrench, &self.cfg);
        let wrench_us = micros_since(start);

        let mark = Instant::now();
        let imu = ImuFrame { t_us, ..inputs.imu };
        let hall = HallSample {
            t_us,
            ..inputs.hall
        };
        let fingers = self.glove.step(&imu, &hall, dt, &self.cfg);
        let fusion_us = micros_since(mark);

        let mark = Instant::now();
        let haptic = map_haptics(
            &FingertipForces {
                t_us,
                ..inputs.forces
            },
            &self.cfg.haptics,
        );
        let haptics_us = micros_since(mark);

        let report = TickReport {
            tick: self.tick,
            t_us,
            wrench,
            servo,
            fingers,
            haptic,
            stage_us: StageTimes {
                sample: 0.0,
                wrench: wrench_us,
                fusion: fusion_us,
                haptics: haptics_us,
                total: micros_since(start),
            },
        };
        self.tick += 1;
        self.clock = self.clock.advance(1);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PinchState;

    #[test]
    fn idle_ticks_hold_theta_init() {
        let cfg = PipelineConfig::default();
        let mut p = Pipeline::new(cfg.clone());
        for k in 0..100 {
            let r = p.step(&TickInputs::idle(0));
            assert_eq!(r.tick, k);
            assert_eq!(r.t_us, k * 10_000);
            assert_eq!(r.servo.angles, cfg.servo.theta_init);
            assert_eq!(r.fingers.bend, [0.0; 5]);
            assert_eq!(r.fingers.pinch_state, PinchState::Free);
            assert_eq!(r.haptic.duty, [0.0; 5]);
        }
        assert_eq!(p.tick_index(), 100);
        assert_eq!(p.now_us(), 1_000_000);
    }

    #[test]
    fn outputs_are_stamped_with_tick_time() {
        let mut p = Pipeline::new(PipelineConfig::default());
        p.step(&TickInputs::idle(0));
        let r = p.step(&TickInputs::idle(999));
        assert_eq!(r.t_us, 10_000);
        assert_eq!(r.servo.t_us, 10_000);
        assert_eq!(r.fingers.t_us, 10_000);
        assert_eq!(r.haptic.t_us, 10_000);
        assert_eq!(r.wrench.t_us, 10_000);
    }

    #[test]
    fn tick_rate_is_fixed() {
        let mut p = Pipeline::new(PipelineConfig::default());
        let mut cfg = p.config().clone();
        cfg.tick_rate_hz = 50;
        assert!(p.set_config(cfg).is_err());
        assert_eq!(p.config().tick_rate_hz, 100);
    }

    #[test]
    fn live_config_changes_encoding() {
        let mut p = Pipeline::new(PipelineConfig::default());
        let mut inputs = TickInputs::idle(0);
        inputs.wrench.fy = 2.0;
        for _ in 0..5 {
            p.step(&inputs);
        }
        assert_eq!(p.step(&inputs).servo.angles, [200.0, 200.0, 160.0, 160.0]);
        let mut cfg = p.config().clone();
        cfg.wrench.kappa.fy = 20.0;
        p.set_config(cfg).unwrap();
        assert_eq!(p.step(&inputs).servo.angles, [220.0, 220.0, 140.0, 140.0]);
    }
}
