//! Episode v1: per-tick observation/action rows for imitation-learning datasets.
//!
//! ```text
//! #wrenchlink-episode v1
//! {"type":"header","tick_rate_hz":100,"config_hash":"…","traces":[{"kind":"ft","sha256":"…"},…],"observation":{"wrench":6,"pose":12},"action":12}
//! {"type":"step","t":0,"t_us":0,"observation":{"wrench":[…6],"pose":[…12]},"action":[…12]}
//! ```
//!
//! `observation.wrench` is the filtered wrench of the tick, `(fx, fy, fz, tx, ty, tz)`.
//! `observation.pose` is the agent pose sample held at the tick (6D arm, 6D hand).
//! `action` is the commanded pose: the arm part of the pose sample followed by
//! the retargeted hand `(little, ring, middle, index, thumb, thumb rotation)`,
//! where thumb rotation passes through from the pose sample.

use crate::command_log::TraceRef;
use crate::model::{Finger, POSE_DIM};
use crate::pipeline::TickReport;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EPISODE_HEADER: &str = "#wrenchlink-episode v1";
pub const WRENCH_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub wrench: usize,
    pub pose: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub tick_rate_hz: u32,
    pub config_hash: String,
    pub traces: Vec<TraceRef>,
    pub observation: Layout,
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub wrench: [f64; WRENCH_DIM],
    pub pose: [f64; POSE_DIM],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub t: u64,
    pub t_us: u64,
    pub observation: Observation,
    pub action: [f64; POSE_DIM],
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Header(EpisodeHeader),
    Step(EpisodeRecord),
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("cannot access episode {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line 1: expected version header `{EPISODE_HEADER}`")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub records: Vec<EpisodeRecord>,
}

/// Commanded pose for one tick: arm from the pose sample, hand from retargeting.
pub fn commanded_pose(pose: &[f64; POSE_DIM], report: &TickReport) -> [f64; POSE_DIM] {
    let bend = report.fingers.bend;
    let mut action = *pose;
    action[6] = bend[Finger::Little.index()];
    action[7] = bend[Finger::Ring.index()];
    action[8] = bend[Finger::Middle.index()];
    action[9] = bend[Finger::Index.index()];
    action[10] = bend[Finger::Thumb.index()];
    action
}

impl Episode {
    pub fn new(tick_rate_hz: u32, config_hash: String, traces: Vec<TraceRef>) -> Self {
        Episode {
            header: EpisodeHeader {
                tick_rate_hz,
                config_hash,
                traces,
                observation: Layout {
                    wrench: WRENCH_DIM,
                    pose: POSE_DIM,
                },
                action: POSE_DIM,
            },
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, report: &TickReport, pose: &[f64; POSE_DIM]) {
        self.records.push(EpisodeRecord {
            t: self.records.len() as u64,
            t_us: report.t_us,
            observation: Observation {
                wrench: report.wrench.components(),
                pose: *pose,
            },
            action: commanded_pose(pose, report),
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(400 * (self.records.len() + 2));
        out.push_str(EPISODE_HEADER);
        out.push('\n');
        out.push_str(
            &serde_json::to_string(&Line::Header(self.header.clone())).expect("header serializes"),
        );
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(&Line::Step(*r)).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses an episode, checking vector lengths and contiguous step indices.
    pub fn parse(text: &str) -> Result<Self, EpisodeError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == EPISODE_HEADER => {}
            _ => return Err(EpisodeError::MissingHeader),
        }
        let parse_err = |line, message: String| EpisodeError::Parse { line, message };
        let header = match lines.next() {
            Some((line, l)) => match serde_json::from_str::<Line>(l) {
                Ok(Line::Header(h)) => h,
                Ok(Line::Step(_)) => return Err(parse_err(line, "expected header record".into())),
                Err(e) => return Err(parse_err(line, e.to_string())),
            },
            None => return Err(parse_err(2, "missing header record".into())),
        };
        let mut records = Vec::new();
        for (line, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(l) {
                Ok(Line::Step(r)) => {
                    if r.t != records.len() as u64 {
                        return Err(parse_err(
                            line,
                            format!("step index {} where {} expected", r.t, records.len()),
                        ));
                    }
                    records.push(r);
                }
                Ok(Line::Header(_)) => {
                    return Err(parse_err(line, "duplicate header record".into()))
                }
                Err(e) => return Err(parse_err(line, e.to_string())),
            }
        }
        Ok(Episode { header, records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EpisodeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EpisodeError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EpisodeError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| EpisodeError::Io {
            path: path.to_owned(),
            source,
        })
    }
}
