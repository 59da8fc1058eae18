//! Synthetic trace recipes.
//!
//! Each scenario emits one sample per tick for every device (force-torque,
//! IMU, Hall, fingertip force, agent pose), so a run needs no other input.
//! Noise is uniform and drawn from ChaCha8 seeded with `seed`, using a
//! separate stream per device (`set_stream(0..=3)` for ft, imu, hall,
//! force). Within a tick, values are drawn in field order. The output is a
//! pure function of `(scenario, duration, seed, config)`.
//!
//! * `step_press`: quiet until [`step_onset_tick`], then `fz` ramps to
//!   [`PRESS_FORCE`] over [`PRESS_RAMP_TICKS`] ticks and holds; the index
//!   fingertip feels half of `fz`.
//! * `swing`: `fy = 3 sin(2π·1 Hz·t)`, `fx = 1.5 cos(2π·1 Hz·t)` with torques
//!   locked to them through an 8 cm lever (`tx = 0.08 fy`, `ty = −0.08 fx`);
//!   fingers hold a 40° grip.
//! * `pinch`: over the first 80 % of the run the Hall reading ramps from 0 to
//!   `h_high + 200` while thumb and index close to 40° and 50°.

use crate::config::PipelineConfig;
use crate::model::{
    period_us, Finger, FingertipForces, HallSample, ImuFrame, ImuReading, PoseSample, Wrench,
    POSE_DIM, STANDARD_GRAVITY,
};
use crate::sim_bus::trace::{TraceSample, TraceSet, TraceSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const PRESS_FORCE: f64 = 4.0;
pub const PRESS_RAMP_TICKS: u64 = 10;
pub const SWING_HZ: f64 = 1.0;

const FORCE_NOISE: f64 = 0.02;
const TORQUE_NOISE: f64 = 0.002;
const GYRO_NOISE: f64 = 0.5;
const ACCEL_NOISE: f64 = 0.02;
const HALL_NOISE: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("unknown scenario `{0}` (expected step_press, swing or pinch)")]
    UnknownScenario(String),
    #[error("duration must be positive and finite, got {0}")]
    BadDuration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    StepPress,
    Swing,
    Pinch,
}

impl FromStr for Scenario {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step_press" => Ok(Scenario::StepPress),
            "swing" => Ok(Scenario::Swing),
            "pinch" => Ok(Scenario::Pinch),
            other => Err(SynthError::UnknownScenario(other.to_owned())),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::StepPress => "step_press",
            Scenario::Swing => "swing",
            Scenario::Pinch => "pinch",
        })
    }
}

/// Number of samples generated for `duration_s` at the configured tick rate.
pub fn sample_count(duration_s: f64, cfg: &PipelineConfig) -> u64 {
    (duration_s * f64::from(cfg.tick_rate_hz)).round() as u64
}

/// First tick of the `step_press` ramp: 0.5 s in, or a quarter of a shorter run.
pub fn step_onset_tick(duration_s: f64, cfg: &PipelineConfig) -> u64 {
    let half_second = (f64::from(cfg.tick_rate_hz) * 0.5).round() as u64;
    half_second.min(sample_count(duration_s, cfg) / 4)
}

struct Noise(ChaCha8Rng);

impl Noise {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Noise(rng)
    }

    fn uniform(&mut self, amplitude: f64) -> f64 {
        (2.0 * self.0.random::<f64>() - 1.0) * amplitude
    }
}

/// Fingertip reading for a finger bent to `deg` about its x axis, turning at `rate` deg/s.
fn bent_fingertip(deg: f64, rate: f64, noise: &mut Noise) -> ImuReading {
    let r = deg.to_radians();
    ImuReading {
        gyro: [
            rate + noise.uniform(GYRO_NOISE),
            noise.uniform(GYRO_NOISE),
            noise.uniform(GYRO_NOISE),
        ],
        accel: [
            noise.uniform(ACCEL_NOISE),
            -STANDARD_GRAVITY * r.sin() + noise.uniform(ACCEL_NOISE),
            -STANDARD_GRAVITY * r.cos() + noise.uniform(ACCEL_NOISE),
        ],
    }
}

/// Per-tick finger kinematics: bend angle (deg) and rate (deg/s), thumb..little.
type Hand = [(f64, f64); 5];

fn imu_frame(t_us: u64, hand: &Hand, noise: &mut Noise) -> ImuFrame {
    let mut sensors = [ImuReading::at_rest(); 6];
    for finger in Finger::ALL {
        let (deg, rate) = hand[finger.index()];
        sensors[finger.index()] = bent_fingertip(deg, rate, noise);
    }
    sensors[5] = bent_fingertip(0.0, 0.0, noise);
    ImuFrame { t_us, sensors }
}

fn arm_pose(t_us: u64, xyz: [f64; 3], hand: &Hand) -> PoseSample {
    let mut pose = [0.0; POSE_DIM];
    pose[..3].copy_from_slice(&xyz);
    pose[3] = PI;
    // hand joints: little, ring, middle, index, thumb bend, thumb rotation (degrees)
    pose[6] = hand[4].0;
    pose[7] = hand[3].0;
    pose[8] = hand[2].0;
    pose[9] = hand[1].0;
    pose[10] = hand[0].0;
    pose[11] = 30.0;
    PoseSample { t_us, pose }
}

fn ordered<T: TraceSample>(samples: Vec<T>) -> TraceSource<T> {
    TraceSource::new(samples).expect("generated timestamps increase")
}

/// Generates every device trace for `scenario`.
pub fn gen_synthetic(
    scenario: Scenario,
    duration_s: f64,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<TraceSet, SynthError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SynthError::BadDuration(duration_s));
    }
    let n = sample_count(duration_s, cfg);
    let period = period_us(cfg.tick_rate_hz);

    let mut ft_noise = Noise::new(seed, 0);
    let mut imu_noise = Noise::new(seed, 1);
    let mut hall_noise = Noise::new(seed, 2);
    let mut force_noise = Noise::new(seed, 3);

    let mut ft = Vec::with_capacity(n as usize);
    let mut imu = Vec::with_capacity(n as usize);
    let mut hall = Vec::with_capacity(n as usize);
    let mut force = Vec::with_capacity(n as usize);
    let mut pose = Vec::with_capacity(n as usize);

    let onset = step_onset_tick(duration_s, cfg);
    let ramp_s = 0.8 * duration_s;
    let hall_top = (cfg.pinch.h_high + 200.0).min(cfg.pinch.hall_adc_max);

    for k in 0..n {
        let t_us = k * period;
        let t = t_us as f64 * 1e-6;

        let (base, hand, h, tips, xyz): ([f64; 6], Hand, f64, [f64; 5], [f64; 3]) = match scenario {
            Scenario::StepPress => {
                let fz = if k < onset {
                    0.0
                } else {
                    PRESS_FORCE * ((k - onset + 1) as f64 / PRESS_RAMP_TICKS as f64).min(1.0)
                };
                let hand = [
                    (10.0, 0.0),
                    (20.0, 0.0),
                    (45.0, 0.0),
                    (45.0, 0.0),
                    (45.0, 0.0),
                ];
                let tips = [0.0, 0.5 * fz, 0.0, 0.0, 0.0];
                (
                    [0.0, 0.0, fz, 0.0, 0.0, 0.0],
                    hand,
                    400.0,
                    tips,
                    [0.4, 0.0, 0.3 - 0.005 * fz],
                )
            }
            Scenario::Swing => {
                let phase = TAU * SWING_HZ * t;
                let fy = 3.0 * phase.sin();
                let fx = 1.5 * phase.cos();
                let hand = [
                    (30.0, 0.0),
                    (40.0, 0.0),
                    (40.0, 0.0),
                    (40.0, 0.0),
                    (40.0, 0.0),
                ];
                let tips = [1.0, 1.0, 1.0, 0.5, 0.0].map(|g| g * (1.0 + 0.2 * phase.sin()));
                (
                    [fx, fy, 0.0, 0.08 * fy, -0.08 * fx, 0.0],
                    hand,
                    600.0,
                    tips,
                    [0.4, 0.05 * phase.sin(), 0.3],
                )
            }
            Scenario::Pinch => {
                let progress = (t / ramp_s).min(1.0);
                let moving = t < ramp_s;
                let thumb_rate = if moving { 40.0 / ramp_s } else { 0.0 };
                let index_rate = if moving { 50.0 / ramp_s } else { 0.0 };
                let hand = [
                    (40.0 * progress, thumb_rate),
                    (50.0 * progress, index_rate),
                    (15.0, 0.0),
                    (15.0, 0.0),
                    (15.0, 0.0),
                ];
                let contact = if progress >= 1.0 { 1.5 } else { 0.0 };
                (
                    [0.0; 6],
                    hand,
                    hall_top * progress,
                    [contact, contact, 0.0, 0.0, 0.0],
                    [0.4, 0.0, 0.3],
                )
            }
        };

        let mut c = base;
        for (i, v) in c.iter_mut().enumerate() {
            *v += ft_noise.uniform(if i < 3 { FORCE_NOISE } else { TORQUE_NOISE });
        }
        ft.push(Wrench::from_components(t_us, c));
        imu.push(imu_frame(t_us, &hand, &mut imu_noise));
        hall.push(HallSample {
            t_us,
            h: (h + hall_noise.uniform(HALL_NOISE)).clamp(0.0, cfg.pinch.hall_adc_max),
        });
        let tip_forces = tips.map(|f| f + force_noise.uniform(FORCE_NOISE));
        force.push(FingertipForces::new(t_us, tip_forces));
        pose.push(arm_pose(t_us, xyz, &hand));
    }

    Ok(TraceSet {
        ft: Some(ordered(ft)),
        imu: Some(ordered(imu)),
        hall: Some(ordered(hall)),
        force: Some(ordered(force)),
        pose: Some(ordered(pose)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    #[test]
    fn unknown_scenario_rejected() {
        assert_eq!(
            "tornado".parse::<Scenario>(),
            Err(SynthError::UnknownScenario("tornado".into()))
        );
        for s in ["step_press", "swing", "pinch"] {
            assert_eq!(s.parse::<Scenario>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn bad_duration_rejected() {
        assert!(gen_synthetic(Scenario::Swing, 0.0, 1, &cfg()).is_err());
        assert!(gen_synthetic(Scenario::Swing, f64::NAN, 1, &cfg()).is_err());
    }

    #[test]
    fn step_press_is_deterministic() {
        let a = gen_synthetic(Scenario::StepPress, 2.0, 7, &cfg()).unwrap();
        let b = gen_synthetic(Scenario::StepPress, 2.0, 7, &cfg()).unwrap();
        assert_eq!(
            a.ft.as_ref().unwrap().to_text(),
            b.ft.as_ref().unwrap().to_text()
        );
        assert_eq!(
            a.imu.as_ref().unwrap().to_text(),
            b.imu.as_ref().unwrap().to_text()
        );
        assert_eq!(a.digests(), b.digests());
        let c = gen_synthetic(Scenario::StepPress, 2.0, 8, &cfg()).unwrap();
        assert_ne!(a.digests(), c.digests());
    }

    #[test]
    fn step_press_shape() {
        let c = cfg();
        let set = gen_synthetic(Scenario::StepPress, 2.0, 7, &c).unwrap();
        let ft = set.ft.unwrap();
        assert_eq!(ft.len(), 200);
        let onset = step_onset_tick(2.0, &c) as usize;
        assert_eq!(onset, 50);
        assert!(ft.samples()[..onset]
            .iter()
            .all(|w| w.fz.abs() <= FORCE_NOISE));
        let held = &ft.samples()[onset + PRESS_RAMP_TICKS as usize..];
        assert!(held
            .iter()
            .all(|w| (w.fz - PRESS_FORCE).abs() <= FORCE_NOISE));
    }

    #[test]
    fn pinch_ends_in_contact_range() {
        let c = cfg();
        let set = gen_synthetic(Scenario::Pinch, 2.0, 1, &c).unwrap();
        let hall = set.hall.unwrap();
        assert!(hall.samples().last().unwrap().h >= c.pinch.h_high);
        assert!(hall.samples()[0].h < c.pinch.h_low);
    }

    #[test]
    fn swing_period_is_one_second() {
        // Closed form fy = 3 sin(2π t): upward zero crossings every 100 ticks.
        let c = cfg();
        let set = gen_synthetic(Scenario::Swing, 5.0, 3, &c).unwrap();
        let fy: Vec<f64> = set.ft.unwrap().samples().iter().map(|w| w.fy).collect();
        let ups: Vec<usize> = (1..fy.len())
            .filter(|&k| fy[k - 1] < 0.0 && fy[k] >= 0.0)
            .collect();
        assert!(ups.len() >= 3, "{ups:?}");
        for pair in ups.windows(2) {
            let period_ticks = (pair[1] - pair[0]) as i64;
            assert!((period_ticks - 100).abs() <= 1, "{ups:?}");
        }
    }

    #[test]
    fn every_device_present_with_one_sample_per_tick() {
        let set = gen_synthetic(Scenario::Swing, 1.0, 1, &cfg()).unwrap();
        assert_eq!(set.ft.as_ref().unwrap().len(), 100);
        assert_eq!(set.imu.as_ref().unwrap().len(), 100);
        assert_eq!(set.hall.as_ref().unwrap().len(), 100);
        assert_eq!(set.force.as_ref().unwrap().len(), 100);
        assert_eq!(set.pose.as_ref().unwrap().len(), 100);
        assert_eq!(set.pose.unwrap().samples()[99].t_us, 990_000);
    }
}
