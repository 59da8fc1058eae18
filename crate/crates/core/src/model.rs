//! Domain value types shared by every stage of the pipeline.
//!
//! Units are conventions, not types: forces in newtons, torques in
//! newton-meters, angles in degrees, angular rates in degrees/second,
//! specific force in meters/second², timestamps in integer microseconds.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Standard gravity used to judge accelerometer trust (m/s²).
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Number of wrench-feedback servos on the forearm fixator.
pub const SERVO_COUNT: usize = 4;

/// Number of instrumented fingers (thumb through little).
pub const FINGER_COUNT: usize = 5;

/// Number of IMUs on the glove: one per fingertip plus the back of the hand.
pub const IMU_COUNT: usize = 6;

/// Length of the agent pose and action vectors (6D arm + 6D hand).
pub const POSE_DIM: usize = 12;

/// A timestamped 6D force-torque sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub t_us: u64,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl Wrench {
    pub fn zero(t_us: u64) -> Self {
        Wrench {
            t_us,
            ..Default::default()
        }
    }

    /// Components in `(fx, fy, fz, tx, ty, tz)` order.
    pub fn components(&self) -> [f64; 6] {
        [self.fx, self.fy, self.fz, self.tx, self.ty, self.tz]
    }

    pub fn from_components(t_us: u64, c: [f64; 6]) -> Self {
        Wrench {
            t_us,
            fx: c[0],
            fy: c[1],
            fz: c[2],
            tx: c[3],
            ty: c[4],
            tz: c[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite())
    }

    /// Every component multiplied by `k`; the timestamp is kept.
    pub fn scaled(&self, k: f64) -> Self {
        Self::from_components(self.t_us, self.components().map(|v| v * k))
    }
}

/// Four servo target angles plus the limit flags raised while clamping them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoCommand {
    pub t_us: u64,
    pub angles: [f64; SERVO_COUNT],
    pub clamped: [bool; SERVO_COUNT],
}

/// Fingers in glove order; the hand-back IMU is not a finger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
}

impl Finger {
    pub const ALL: [Finger; FINGER_COUNT] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Little,
    ];

    /// Fingers whose angle comes from the complementary filter.
    pub const FUSED: [Finger; 4] = [Finger::Index, Finger::Middle, Finger::Ring, Finger::Little];

    /// Position in thumb→little order, which is also the IMU slot.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// IMU slot of the sensor on the back of the hand.
pub const HAND_BACK: usize = 5;

/// One IMU reading: angular velocity (deg/s) and specific force (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuReading {
    pub gyro: [f64; 3],
    pub accel: [f64; 3],
}

impl ImuReading {
    /// A motionless sensor in its zero-bend reference pose.
    pub fn at_rest() -> Self {
        ImuReading {
            gyro: [0.0; 3],
            accel: [0.0, 0.0, -STANDARD_GRAVITY],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gyro
            .iter()
            .chain(self.accel.iter())
            .all(|v| v.is_finite())
    }
}

/// Synchronized readings of all six glove IMUs (thumb..little, hand-back).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuFrame {
    pub t_us: u64,
    pub sensors: [ImuReading; IMU_COUNT],
}

impl ImuFrame {
    pub fn at_rest(t_us: u64) -> Self {
        ImuFrame {
            t_us,
            sensors: [ImuReading::at_rest(); IMU_COUNT],
        }
    }

    pub fn fingertip(&self, finger: Finger) -> &ImuReading {
        &self.sensors[finger.index()]
    }

    pub fn hand_back(&self) -> &ImuReading {
        &self.sensors[HAND_BACK]
    }

    pub fn is_finite(&self) -> bool {
        self.sensors.iter().all(ImuReading::is_finite)
    }
}

/// Raw reading of the thumb-pad Hall sensor in ADC counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallSample {
    pub t_us: u64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PinchState {
    Free,
    Proximity,
    Contact,
}

impl fmt::Display for PinchState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PinchState::Free => "FREE",
            PinchState::Proximity => "PROXIMITY",
            PinchState::Contact => "CONTACT",
        })
    }
}

/// Retargeting output: five bend angles (thumb→little) and the pinch calibration state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerAngles {
    pub t_us: u64,
    pub bend: [f64; FINGER_COUNT],
    pub pinch_state: PinchState,
    pub pinch_blend: f64,
}

/// Five fingertip normal forces from the robot hand, newtons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingertipForces {
    pub t_us: u64,
    pub force: [f64; FINGER_COUNT],
}

impl FingertipForces {
    /// Builds a sample, clamping negative sensor readings to zero.
    pub fn new(t_us: u64, force: [f64; FINGER_COUNT]) -> Self {
        FingertipForces {
            t_us,
            force: force.map(|f| f.max(0.0)),
        }
    }

    pub fn zero(t_us: u64) -> Self {
        FingertipForces {
            t_us,
            force: [0.0; FINGER_COUNT],
        }
    }
}

/// ERM duty-cycle fractions, one per fingertip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticCommand {
    pub t_us: u64,
    pub duty: [f64; FINGER_COUNT],
}

/// Agent pose sample: 6D arm pose followed by 6D hand pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t_us: u64,
    pub pose: [f64; POSE_DIM],
}

/// Simulated loop clock. Time only moves through [`SimClock::advance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    t_us: u64,
    period_us: u64,
}

impl SimClock {
    pub fn new(tick_rate_hz: u32) -> Self {
        Self::starting_at(0, tick_rate_hz)
    }

    pub fn starting_at(t_us: u64, tick_rate_hz: u32) -> Self {
        assert!(tick_rate_hz > 0, "tick rate must be positive");
        SimClock {
            t_us,
            period_us: period_us(tick_rate_hz),
        }
    }

    pub fn now_us(&self) -> u64 {
        self.t_us
    }

    pub fn period_us(&self) -> u64 {
        self.period_us
    }

    /// Tick period in seconds, derived from the integer period.
    pub fn dt(&self) -> f64 {
        self.period_us as f64 * 1e-6
    }

    #[must_use]
    pub fn advance(self, ticks: u64) -> Self {
        SimClock {
            t_us: self.t_us + ticks * self.period_us,
            ..self
        }
    }
}

/// `round(1e6 / rate)` in integer arithmetic (ties away from zero).
pub fn period_us(tick_rate_hz: u32) -> u64 {
    let rate = u64::from(tick_rate_hz);
    (2_000_000 + rate) / (2 * rate)
}
