//! Command log v1: every command the pipeline emitted, one JSON object per line.
//!
//! ```text
//! #wrenchlink-commands v1
//! {"type":"header","ticks":N,"tick_rate_hz":100,"config_hash":"…","config":{…},"traces":[{"kind":"ft","path":"…","sha256":"…"}, …]}
//! {"type":"control","tick":k,"control":{"type":"inject_wrench",…}}   // only when a live control was applied
//! {"type":"servo","tick":0,"t_us":0,"angles":[…4],"clamped":[…4]}
//! {"type":"hand","tick":0,"t_us":0,"bend":[…5],"pinch_state":"FREE","pinch_blend":0.0}
//! {"type":"haptic","tick":0,"t_us":0,"duty":[…5]}
//! ```
//!
//! Control records precede the commands of the tick they first affected.
//! The header carries everything needed to re-run the log: the full config,
//! the trace paths and their digests.

use crate::config::PipelineConfig;
use crate::model::{PinchState, FINGER_COUNT, SERVO_COUNT};
use crate::pipeline::TickReport;
use crate::session::Control;
use crate::sim_bus::DeviceKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const COMMAND_LOG_HEADER: &str = "#wrenchlink-commands v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRef {
    pub kind: DeviceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub ticks: u64,
    pub tick_rate_hz: u32,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub traces: Vec<TraceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogRecord {
    Header(Box<LogHeader>),
    Control {
        tick: u64,
        control: Control,
    },
    Servo {
        tick: u64,
        t_us: u64,
        angles: [f64; SERVO_COUNT],
        clamped: [bool; SERVO_COUNT],
    },
    Hand {
        tick: u64,
        t_us: u64,
        bend: [f64; FINGER_COUNT],
        pinch_state: PinchState,
        pinch_blend: f64,
    },
    Haptic {
        tick: u64,
        t_us: u64,
        duty: [f64; FINGER_COUNT],
    },
}

impl LogRecord {
    pub fn tick(&self) -> Option<u64> {
        match self {
            LogRecord::Header(_) => None,
            LogRecord::Control { tick, .. }
            | LogRecord::Servo { tick, .. }
            | LogRecord::Hand { tick, .. }
            | LogRecord::Haptic { tick, .. } => Some(*tick),
        }
    }

    fn slot(&self) -> usize {
        match self {
            LogRecord::Header(_) => 0,
            LogRecord::Control { .. } => 1,
            LogRecord::Servo { .. } => 2,
            LogRecord::Hand { .. } => 3,
            LogRecord::Haptic { .. } => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot access command log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line 1: expected version header `{COMMAND_LOG_HEADER}`")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// In-memory command log, filled tick by tick.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl CommandLog {
    pub fn new(config: &PipelineConfig, traces: Vec<TraceRef>) -> Self {
        CommandLog {
            header: LogHeader {
                ticks: 0,
                tick_rate_hz: config.tick_rate_hz,
                config_hash: config.hash(),
                config: config.clone(),
                traces,
            },
            records: Vec::new(),
        }
    }

    pub fn push_control(&mut self, tick: u64, control: Control) {
        self.records.push(LogRecord::Control { tick, control });
    }

    pub fn push_tick(&mut self, r: &TickReport) {
        self.records.push(LogRecord::Servo {
            tick: r.tick,
            t_us: r.t_us,
            angles: r.servo.angles,
            clamped: r.servo.clamped,
        });
        self.records.push(LogRecord::Hand {
            tick: r.tick,
            t_us: r.t_us,
            bend: r.fingers.bend,
            pinch_state: r.fingers.pinch_state,
            pinch_blend: r.fingers.pinch_blend,
        });
        self.records.push(LogRecord::Haptic {
            tick: r.tick,
            t_us: r.t_us,
            duty: r.haptic.duty,
        });
        self.header.ticks = r.tick + 1;
    }

    /// Servo commands in tick order.
    pub fn servo_angles(&self) -> impl Iterator<Item = (u64, [f64; SERVO_COUNT])> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Servo { tick, angles, .. } => Some((*tick, *angles)),
            _ => None,
        })
    }

    pub fn controls(&self) -> impl Iterator<Item = (u64, &Control)> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Control { tick, control } => Some((*tick, control)),
            _ => None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(160 * (self.records.len() + 2));
        out.push_str(COMMAND_LOG_HEADER);
        out.push('\n');
        out.push_str(&encode(&LogRecord::Header(Box::new(self.header.clone()))));
        out.push('\n');
        for r in &self.records {
            out.push_str(&encode(r));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == COMMAND_LOG_HEADER => {}
            _ => return Err(LogError::MissingHeader),
        }
        let mut header = None;
        let mut records = Vec::new();
        let mut last_tick: [Option<u64>; 5] = [None; 5];
        for (line, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(l).map_err(|e| LogError::Parse {
                line,
                message: e.to_string(),
            })?;
            match (rec, header.is_some()) {
                (LogRecord::Header(h), false) => header = Some(*h),
                (LogRecord::Header(_), true) => {
                    return Err(LogError::Parse {
                        line,
                        message: "duplicate header record".into(),
                    })
                }
                (_, false) => {
                    return Err(LogError::Parse {
                        line,
                        message: "header record must come first".into(),
                    })
                }
                (rec, true) => {
                    let slot = rec.slot();
                    let tick = rec.tick().expect("non-header records carry a tick");
                    // several controls may land on one tick; commands may not repeat
                    let ordered = match last_tick[slot] {
                        None => true,
                        Some(prev) if slot == 1 => tick >= prev,
                        Some(prev) => tick > prev,
                    };
                    if !ordered {
                        return Err(LogError::Parse {
                            line,
                            message: format!("tick {tick} out of order"),
                        });
                    }
                    last_tick[slot] = Some(tick);
                    records.push(rec);
                }
            }
        }
        let header = header.ok_or(LogError::Parse {
            line: 2,
            message: "missing header record".into(),
        })?;
        Ok(CommandLog { header, records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| LogError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

fn encode(r: &LogRecord) -> String {
    serde_json::to_string(r).expect("log record serializes")
}

/// First line at which two command-log texts differ.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDifference {
    pub line: usize,
    /// Tick of the differing record, when the line is a tick record.
    pub tick: Option<u64>,
}

pub fn first_difference(expected: &str, actual: &str) -> Option<LogDifference> {
    let mut a = expected.lines();
    let mut b = actual.lines();
    let mut line = 0;
    loop {
        line += 1;
        match (a.next(), b.next()) {
            (None, None) => return None,
            (x, y) if x == y => continue,
            (x, y) => {
                let tick = [x, y].into_iter().flatten().find_map(|l| {
                    serde_json::from_str::<LogRecord>(l)
                        .ok()
                        .and_then(|r| r.tick())
                });
                return Some(LogDifference { line, tick });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Pipeline, TickInputs};

    fn sample_log(ticks: u64) -> CommandLog {
        let cfg = PipelineConfig::default();
        let mut log = CommandLog::new(&cfg, vec![]);
        let mut p = Pipeline::new(cfg);
        for _ in 0..ticks {
            log.push_tick(&p.step(&TickInputs::idle(0)));
        }
        log
    }

    #[test]
    fn text_round_trip() {
        let log = sample_log(5);
        assert_eq!(log.header.ticks, 5);
        let text = log.to_text();
        assert!(text.starts_with("#wrenchlink-commands v1\n{\"type\":\"header\""));
        assert_eq!(text.lines().count(), 2 + 15);
        assert_eq!(CommandLog::parse(&text).unwrap(), log);
    }

    #[test]
    fn out_of_order_ticks_rejected() {
        let mut log = sample_log(2);
        log.records.swap(0, 3);
        let err = CommandLog::parse(&log.to_text()).unwrap_err();
        assert!(err.to_string().contains("out of order"), "{err}");
    }

    #[test]
    fn difference_names_tick() {
        let log = sample_log(4);
        let text = log.to_text();
        let edited = text.replacen(
            "\"tick\":2,\"t_us\":20000,\"angles\":[180.0",
            "\"tick\":2,\"t_us\":20000,\"angles\":[181.0",
            1,
        );
        assert_ne!(text, edited);
        let d = first_difference(&text, &edited).unwrap();
        assert_eq!(d.tick, Some(2));
        assert_eq!(first_difference(&text, &text), None);
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert_eq!(first_difference(&text, &truncated).unwrap().line, 6);
    }
}
