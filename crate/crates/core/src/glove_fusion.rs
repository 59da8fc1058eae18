//! Glove retargeting: finger bend angles from fingertip and hand-back IMUs,
//! plus Hall-sensor calibration of the thumb/index pinch.
//!
//! Index through little use a complementary filter,
//! `θ ← α·(θ + Δθ_gyro) + (1 − α)·θ_acc`, where `Δθ_gyro` integrates the
//! fingertip rate relative to the back of the hand about the finger's flexion
//! axis and `θ_acc` is the relative tilt seen by the two accelerometers. The
//! thumb integrates relative angular velocity only. Every finger output then
//! passes a moving average of `ma_window` samples.

use crate::config::{Axis, FusionConfig, PinchConfig, PipelineConfig};
use crate::model::{
    Finger, FingerAngles, HallSample, ImuFrame, PinchState, FINGER_COUNT, STANDARD_GRAVITY,
};
use std::collections::VecDeque;

/// Fixed-length arithmetic moving average.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    samples: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "moving-average window must be at least 1");
        MovingAverage {
            window,
            samples: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, x: f64) -> f64 {
        if self.samples.len() == self.window {
            self.samples.pop_front();
        }
        self.samples.push_back(x);
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn set_window(&mut self, window: usize) {
        assert!(window >= 1, "moving-average window must be at least 1");
        self.window = window;
        while self.samples.len() > window {
            self.samples.pop_front();
        }
    }
}

/// In-plane tilt of a specific-force vector about `axis`, degrees in (−180, 180].
///
/// Zero when the vector points along the sensor's −z (for the x axis; the
/// other axes follow cyclically), positive for rotation about `+axis`.
pub fn tilt_about(accel: &[f64; 3], axis: Axis) -> f64 {
    let (a, b) = match axis {
        Axis::X => (accel[1], accel[2]),
        Axis::Y => (accel[2], accel[0]),
        Axis::Z => (accel[0], accel[1]),
    };
    (-a).atan2(-b).to_degrees()
}

/// Bend angle implied by gravity's projection onto the finger's flexion
/// plane, clamped to the configured bend range.
pub fn accel_angle(accel: &[f64; 3], finger: Finger, cfg: &FusionConfig) -> f64 {
    cfg.clamp_bend(tilt_about(accel, cfg.axis(finger)))
}

/// Blend factor for the complementary filter.
///
/// `alpha_base` when the accelerometer reads exactly one g, rising linearly to
/// 1 at the edge of `accel_trust_band` and pure gyro beyond it.
pub fn adaptive_alpha(accel: &[f64; 3], cfg: &FusionConfig) -> f64 {
    let norm = accel.iter().map(|v| v * v).sum::<f64>().sqrt();
    let deviation = (norm - STANDARD_GRAVITY).abs();
    let alpha = if deviation > cfg.accel_trust_band {
        1.0
    } else {
        cfg.alpha_base + (1.0 - cfg.alpha_base) * deviation / cfg.accel_trust_band
    };
    alpha.max(cfg.alpha_floor)
}

fn wrap_degrees(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Gyro increment about the flexion axis, relative to the back of the hand.
/// Off-axis rate components are dropped and the result is damped.
fn relative_gyro_increment(frame: &ImuFrame, finger: Finger, dt: f64, cfg: &FusionConfig) -> f64 {
    let axis = cfg.axis(finger).index();
    let rate = frame.fingertip(finger).gyro[axis] - frame.hand_back().gyro[axis];
    cfg.damping * rate * dt
}

/// Outcome of the Hall pinch calibration for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinchOutput {
    pub thumb: f64,
    pub index: f64,
    pub state: PinchState,
    pub blend: f64,
}

/// Threshold logic on an already-smoothed Hall value.
pub fn pinch_blend(h_smoothed: f64, cfg: &PinchConfig) -> (PinchState, f64) {
    if h_smoothed < cfg.h_low {
        (PinchState::Free, 0.0)
    } else if h_smoothed >= cfg.h_high {
        (PinchState::Contact, 1.0)
    } else {
        (
            PinchState::Proximity,
            (h_smoothed - cfg.h_low) / (cfg.h_high - cfg.h_low),
        )
    }
}

/// Thumb and index angles after pinch calibration at smoothed reading `h_smoothed`.
pub fn interpolate_pinch(
    h_smoothed: f64,
    raw_thumb: f64,
    raw_index: f64,
    cfg: &PinchConfig,
) -> PinchOutput {
    let (state, blend) = pinch_blend(h_smoothed, cfg);
    let (thumb, index) = match state {
        PinchState::Free => (raw_thumb, raw_index),
        PinchState::Contact => (cfg.contact_angles.thumb, cfg.contact_angles.index),
        PinchState::Proximity => (
            (1.0 - blend) * raw_thumb + blend * cfg.contact_angles.thumb,
            (1.0 - blend) * raw_index + blend * cfg.contact_angles.index,
        ),
    };
    PinchOutput {
        thumb,
        index,
        state,
        blend,
    }
}

/// Per-glove fusion state. Slot 0 holds the integrated thumb angle; slots
/// 1..4 hold the complementary-filter angles of index..little.
#[derive(Debug, Clone)]
pub struct FingerFusionState {
    fused: [f64; FINGER_COUNT],
    smoothing: [MovingAverage; FINGER_COUNT],
    hall: Option<f64>,
    pinch: PinchState,
}

impl FingerFusionState {
    /// All fingers start straight (0°), clamped into the bend range.
    pub fn new(cfg: &FusionConfig) -> Self {
        FingerFusionState {
            fused: [cfg.clamp_bend(0.0); FINGER_COUNT],
            smoothing: std::array::from_fn(|_| MovingAverage::new(cfg.ma_window)),
            hall: None,
            pinch: PinchState::Free,
        }
    }

    /// Unsmoothed filter state for `finger`.
    pub fn fused(&self, finger: Finger) -> f64 {
        self.fused[finger.index()]
    }

    pub fn set_fused(&mut self, finger: Finger, deg: f64) {
        self.fused[finger.index()] = deg;
    }

    pub fn smoothed_hall(&self) -> Option<f64> {
        self.hall
    }

    pub fn pinch_state(&self) -> PinchState {
        self.pinch
    }

    pub fn smoothing(&self, finger: Finger) -> &MovingAverage {
        &self.smoothing[finger.index()]
    }

    /// Follows a config change without discarding state.
    pub fn reconfigure(&mut self, cfg: &FusionConfig) {
        for (theta, ma) in self.fused.iter_mut().zip(self.smoothing.iter_mut()) {
            *theta = cfg.clamp_bend(*theta);
            ma.set_window(cfg.ma_window);
        }
    }

    /// One complementary-filter step for index..little; returns the smoothed angle.
    pub fn fuse_finger(
        &mut self,
        frame: &ImuFrame,
        finger: Finger,
        dt: f64,
        cfg: &FusionConfig,
    ) -> f64 {
        assert!(finger != Finger::Thumb, "the thumb uses fuse_thumb");
        let slot = finger.index();
        let gyro_step = relative_gyro_increment(frame, finger, dt, cfg);
        let axis = cfg.axis(finger);
        let tip = frame.fingertip(finger);
        let acc_angle = cfg.clamp_bend(wrap_degrees(
            tilt_about(&tip.accel, axis) - tilt_about(&frame.hand_back().accel, axis),
        ));
        let alpha = adaptive_alpha(&tip.accel, cfg);
        let theta = alpha * (self.fused[slot] + gyro_step) + (1.0 - alpha) * acc_angle;
        self.fused[slot] = cfg.clamp_bend(theta);
        cfg.clamp_bend(self.smoothing[slot].push(self.fused[slot]))
    }

    /// Integrates thumb angular velocity relative to the hand back; returns
    /// the smoothed angle before any pinch override.
    pub fn fuse_thumb(&mut self, frame: &ImuFrame, dt: f64, cfg: &FusionConfig) -> f64 {
        let slot = Finger::Thumb.index();
        let step = relative_gyro_increment(frame, Finger::Thumb, dt, cfg);
        self.fused[slot] = cfg.clamp_bend(self.fused[slot] + step);
        cfg.clamp_bend(self.smoothing[slot].push(self.fused[slot]))
    }

    /// Low-passes the Hall reading, then applies the two-threshold pinch
    /// calibration to the thumb and index angles.
    pub fn calibrate_pinch(
        &mut self,
        hall: &HallSample,
        raw_thumb: f64,
        raw_index: f64,
        cfg: &PinchConfig,
    ) -> PinchOutput {
        let h = match self.hall {
            Some(prev) => cfg.hall_lp_cutoff * hall.h + (1.0 - cfg.hall_lp_cutoff) * prev,
            None => hall.h,
        };
        self.hall = Some(h);
        let out = interpolate_pinch(h, raw_thumb, raw_index, cfg);
        self.pinch = out.state;
        out
    }

    /// Runs the whole glove stage for one tick.
    pub fn step(
        &mut self,
        frame: &ImuFrame,
        hall: &HallSample,
        dt: f64,
        cfg: &PipelineConfig,
    ) -> FingerAngles {
        let mut bend = [0.0; FINGER_COUNT];
        bend[Finger::Thumb.index()] = self.fuse_thumb(frame, dt, &cfg.fusion);
        for finger in Finger::FUSED {
            bend[finger.index()] = self.fuse_finger(frame, finger, dt, &cfg.fusion);
        }
        let pinch = self.calibrate_pinch(
            hall,
            bend[Finger::Thumb.index()],
            bend[Finger::Index.index()],
            &cfg.pinch,
        );
        bend[Finger::Thumb.index()] = pinch.thumb;
        bend[Finger::Index.index()] = pinch.index;
        FingerAngles {
            t_us: frame.t_us,
            bend,
            pinch_state: pinch.state,
            pinch_blend: pinch.blend,
        }
    }
}
