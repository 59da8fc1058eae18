//! Fingertip force → ERM duty-cycle mapping.

use crate::config::HapticsConfig;
use crate::model::{FingertipForces, HapticCommand};

/// `duty = clamp(gain · f / force_max, 0, 1)` per fingertip.
pub fn map_haptics(f: &FingertipForces, cfg: &HapticsConfig) -> HapticCommand {
    HapticCommand {
        t_us: f.t_us,
        duty: f
            .force
            .map(|x| (cfg.gain * x / cfg.force_max).clamp(0.0, 1.0)),
    }
}
