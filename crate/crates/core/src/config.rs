//! Pipeline configuration: schema, loading, validation and live patching.
//!
//! The on-disk format is TOML; see `config/default.toml` for the bundled
//! defaults and the meaning of every key.

use crate::model::{Finger, FINGER_COUNT, SERVO_COUNT};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// The configuration shipped with the crate.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("config invariant violated: {0}")]
    Invalid(&'static str),
    #[error("unknown config field `{0}`")]
    UnknownField(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub tick_rate_hz: u32,
    pub servo: ServoConfig,
    pub wrench: WrenchConfig,
    pub fusion: FusionConfig,
    pub pinch: PinchConfig,
    pub haptics: HapticsConfig,
    #[serde(default)]
    pub stream: StreamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoConfig {
    pub theta_init: [f64; SERVO_COUNT],
    pub angle_min: f64,
    pub angle_max: f64,
}

/// Sensitivities of the four base components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kappa {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub tz: f64,
}

impl Kappa {
    /// In base-component order `(fx, fy, fz, tz)`.
    pub fn as_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.fz, self.tz]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchConfig {
    pub kappa: Kappa,
    /// `sign_matrix[servo][component]`, components ordered `(fx, fy, fz, tz)`.
    pub sign_matrix: [[i8; 4]; SERVO_COUNT],
    pub kappa_r: f64,
    /// `sigma[servo][ratio]`, ratios ordered `(tx/fy, ty/fx)`.
    pub sigma: [[i8; 2]; SERVO_COUNT],
    pub delta: f64,
    pub c_min: f64,
    pub weight_epsilon: f64,
    pub window: WindowConfig,
}

/// Adaptive time-window filter on the raw wrench stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub short: usize,
    pub long: usize,
    pub innovation_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub alpha_base: f64,
    pub alpha_floor: f64,
    pub accel_trust_band: f64,
    pub ma_window: usize,
    pub bend_min: f64,
    pub bend_max: f64,
    pub damping: f64,
    pub flexion_axis: [Axis; FINGER_COUNT],
}

impl FusionConfig {
    pub fn axis(&self, finger: Finger) -> Axis {
        self.flexion_axis[finger.index()]
    }

    pub fn clamp_bend(&self, deg: f64) -> f64 {
        deg.clamp(self.bend_min, self.bend_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactAngles {
    pub thumb: f64,
    pub index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinchConfig {
    pub h_low: f64,
    pub h_high: f64,
    pub hall_adc_max: f64,
    pub hall_lp_cutoff: f64,
    pub contact_angles: ContactAngles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HapticsConfig {
    pub gain: f64,
    pub force_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub telemetry_decimation: u32,
    pub queue_depth: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            telemetry_decimation: 1,
            queue_depth: 256,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG_TOML).expect("bundled config is valid")
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    PipelineConfig::from_toml_str(&text)
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(toml_error_line(text, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn tick_dt(&self) -> f64 {
        crate::model::period_us(self.tick_rate_hz) as f64 * 1e-6
    }

    /// Checks every invariant, reporting the first one violated.
    pub fn validate(&self) -> Result<(), ConfigError> {
        use ConfigError::Invalid;
        let check = |ok: bool, what: &'static str| if ok { Ok(()) } else { Err(Invalid(what)) };

        check(self.tick_rate_hz > 0, "tick_rate_hz > 0")?;
        check(self.all_finite(), "all numeric values finite")?;

        let s = &self.servo;
        check(s.angle_min < s.angle_max, "angle_min < angle_max")?;
        check(
            s.theta_init
                .iter()
                .all(|a| (s.angle_min..=s.angle_max).contains(a)),
            "theta_init within [angle_min, angle_max]",
        )?;

        let w = &self.wrench;
        check(
            w.sign_matrix.iter().flatten().all(|v| (-1..=1).contains(v)),
            "sign_matrix entries in {-1, 0, +1}",
        )?;
        check(
            w.sigma.iter().flatten().all(|v| *v == 1 || *v == -1),
            "sigma entries in {-1, +1}",
        )?;
        check(w.c_min > 0.0, "c_min > 0")?;
        check(w.weight_epsilon > 0.0, "weight_epsilon > 0")?;
        check(w.window.short >= 1, "window.short >= 1")?;
        check(
            w.window.short <= w.window.long,
            "window.short <= window.long",
        )?;
        check(
            w.window.innovation_threshold > 0.0,
            "window.innovation_threshold > 0",
        )?;

        let f = &self.fusion;
        check(f.ma_window >= 1, "ma_window >= 1")?;
        check(
            0.0 <= f.alpha_floor && f.alpha_floor <= f.alpha_base && f.alpha_base <= 1.0,
            "0 <= alpha_floor <= alpha_base <= 1",
        )?;
        check(f.accel_trust_band > 0.0, "accel_trust_band > 0")?;
        check(f.bend_min < f.bend_max, "bend_min < bend_max")?;
        check(0.0 < f.damping && f.damping <= 1.0, "0 < damping <= 1")?;

        let p = &self.pinch;
        check(p.h_low < p.h_high, "h_low < h_high")?;
        check(p.h_low >= 0.0, "h_low >= 0")?;
        check(p.h_high <= p.hall_adc_max, "h_high <= hall_adc_max")?;
        check(
            0.0 < p.hall_lp_cutoff && p.hall_lp_cutoff <= 1.0,
            "0 < hall_lp_cutoff <= 1",
        )?;
        check(
            [p.contact_angles.thumb, p.contact_angles.index]
                .iter()
                .all(|a| (f.bend_min..=f.bend_max).contains(a)),
            "contact_angles within [bend_min, bend_max]",
        )?;

        check(self.haptics.force_max > 0.0, "haptics.force_max > 0")?;
        check(self.haptics.gain >= 0.0, "haptics.gain >= 0")?;

        check(
            self.stream.telemetry_decimation >= 1,
            "stream.telemetry_decimation >= 1",
        )?;
        check(self.stream.queue_depth >= 1, "stream.queue_depth >= 1")?;
        Ok(())
    }

    fn all_finite(&self) -> bool {
        let w = &self.wrench;
        let f = &self.fusion;
        let p = &self.pinch;
        self.servo
            .theta_init
            .iter()
            .chain(&w.kappa.as_array())
            .chain(&[
                self.servo.angle_min,
                self.servo.angle_max,
                w.kappa_r,
                w.delta,
                w.c_min,
                w.weight_epsilon,
                w.window.innovation_threshold,
                f.alpha_base,
                f.alpha_floor,
                f.accel_trust_band,
                f.bend_min,
                f.bend_max,
                f.damping,
                p.h_low,
                p.h_high,
                p.hall_adc_max,
                p.hall_lp_cutoff,
                p.contact_angles.thumb,
                p.contact_angles.index,
                self.haptics.gain,
                self.haptics.force_max,
            ])
            .all(|v| v.is_finite())
    }

    /// Returns a new validated config with `patch` merged in.
    ///
    /// `patch` is a JSON object mirroring the config's nested layout. Every key
    /// must name an existing field; `self` is never modified.
    pub fn patched(&self, patch: &Value) -> Result<PipelineConfig, ConfigError> {
        let mut merged = serde_json::to_value(self).expect("config serializes to JSON");
        merge_strict(&mut merged, patch, "")?;
        let cfg: PipelineConfig =
            serde_json::from_value(merged).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge_strict(target: &mut Value, patch: &Value, path: &str) -> Result<(), ConfigError> {
    let Value::Object(fields) = patch else {
        return Err(ConfigError::Parse(format!(
            "patch for `{}` must be an object",
            if path.is_empty() { "<root>" } else { path }
        )));
    };
    for (key, value) in fields {
        let child_path = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        let slot = target
            .get_mut(key)
            .ok_or_else(|| ConfigError::UnknownField(child_path.clone()))?;
        if slot.is_object() {
            merge_strict(slot, value, &child_path)?;
        } else {
            *slot = value.clone();
        }
    }
    Ok(())
}

/// `line:col: message` without the multi-line source excerpt.
fn toml_error_line(text: &str, e: &toml::de::Error) -> String {
    let message = e.message().trim();
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("{line}:{col}: {message}")
        }
        None => message.to_owned(),
    }
}
