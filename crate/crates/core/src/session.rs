//! A running pipeline: trace sources sampled on the simulated clock, live
//! controls applied at tick boundaries, and optional command/episode recording.

use crate::command_log::{first_difference, CommandLog, LogDifference, LogError, TraceRef};
use crate::config::{ConfigError, PipelineConfig};
use crate::episode::Episode;
use crate::model::{HallSample, Wrench, POSE_DIM};
use crate::pipeline::{Pipeline, TickInputs, TickReport};
use crate::sim_bus::{load_trace, DeviceKind, TraceError, TraceSet};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Wrench components for an injection; omitted components are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrenchOverride {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl WrenchOverride {
    pub fn to_wrench(self, t_us: u64) -> Wrench {
        Wrench {
            t_us,
            fx: self.fx,
            fy: self.fy,
            fz: self.fz,
            tx: self.tx,
            ty: self.ty,
            tz: self.tz,
        }
    }
}

/// A live change to the running pipeline, applied before the next tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Control {
    /// Nested partial config; every key must already exist.
    ConfigPatch { patch: Value },
    /// Replace the force-torque source (`None` restores the trace).
    InjectWrench { wrench: Option<WrenchOverride> },
    /// Replace the Hall source (`None` restores the trace).
    InjectHall { h: Option<f64> },
}

impl Control {
    pub fn name(&self) -> &'static str {
        match self {
            Control::ConfigPatch { .. } => "config_patch",
            Control::InjectWrench { .. } => "inject_wrench",
            Control::InjectHall { .. } => "inject_hall",
        }
    }
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("trace schema mismatch: {0}")]
    Schema(String),
    #[error("{kind} trace {path}: {source}")]
    Trace {
        kind: DeviceKind,
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("recorded control at tick {tick} no longer applies: {source}")]
    Replay {
        tick: u64,
        #[source]
        source: ControlError,
    },
    #[error("episode recording needs a pose trace")]
    NoPoseSource,
}

/// Optional path per device, recorded in log headers so runs can be repeated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TracePaths {
    pub ft: Option<PathBuf>,
    pub imu: Option<PathBuf>,
    pub hall: Option<PathBuf>,
    pub force: Option<PathBuf>,
    pub pose: Option<PathBuf>,
}

impl TracePaths {
    pub fn get(&self, kind: DeviceKind) -> Option<&PathBuf> {
        match kind {
            DeviceKind::Ft => self.ft.as_ref(),
            DeviceKind::Imu => self.imu.as_ref(),
            DeviceKind::Hall => self.hall.as_ref(),
            DeviceKind::FingertipForce => self.force.as_ref(),
            DeviceKind::Pose => self.pose.as_ref(),
        }
    }

    pub fn set(&mut self, kind: DeviceKind, path: PathBuf) {
        let slot = match kind {
            DeviceKind::Ft => &mut self.ft,
            DeviceKind::Imu => &mut self.imu,
            DeviceKind::Hall => &mut self.hall,
            DeviceKind::FingertipForce => &mut self.force,
            DeviceKind::Pose => &mut self.pose,
        };
        *slot = Some(path);
    }

    /// Loads every listed trace.
    pub fn load(&self) -> Result<TraceSet, SessionError> {
        fn one<T: crate::sim_bus::TraceSample>(
            kind: DeviceKind,
            path: Option<&PathBuf>,
        ) -> Result<Option<crate::sim_bus::TraceSource<T>>, SessionError> {
            path.map(|p| {
                load_trace::<T>(p).map_err(|source| SessionError::Trace {
                    kind,
                    path: p.clone(),
                    source,
                })
            })
            .transpose()
        }
        Ok(TraceSet {
            ft: one(DeviceKind::Ft, self.ft.as_ref())?,
            imu: one(DeviceKind::Imu, self.imu.as_ref())?,
            hall: one(DeviceKind::Hall, self.hall.as_ref())?,
            force: one(DeviceKind::FingertipForce, self.force.as_ref())?,
            pose: one(DeviceKind::Pose, self.pose.as_ref())?,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub record_commands: bool,
    pub record_episode: bool,
    pub paths: TracePaths,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub commands: Option<CommandLog>,
    pub episode: Option<Episode>,
    pub reports: Vec<TickReport>,
}

#[derive(Debug)]
pub struct Session {
    pipeline: Pipeline,
    traces: TraceSet,
    wrench_override: Option<WrenchOverride>,
    hall_override: Option<f64>,
    commands: Option<CommandLog>,
    episode: Option<Episode>,
}

fn trace_refs(traces: &TraceSet, paths: &TracePaths) -> Vec<TraceRef> {
    traces
        .digests()
        .into_iter()
        .map(|(kind, sha256)| TraceRef {
            kind,
            path: paths.get(kind).cloned(),
            sha256,
        })
        .collect()
}

impl Session {
    pub fn new(
        cfg: PipelineConfig,
        traces: TraceSet,
        opts: SessionOptions,
    ) -> Result<Self, SessionError> {
        cfg.validate()?;
        check_traces(&traces, &cfg)?;
        if opts.record_episode && traces.pose.is_none() {
            return Err(SessionError::NoPoseSource);
        }
        let refs = trace_refs(&traces, &opts.paths);
        let commands = opts
            .record_commands
            .then(|| CommandLog::new(&cfg, refs.clone()));
        let episode = opts.record_episode.then(|| {
            let unpathed = refs
                .iter()
                .map(|r| TraceRef {
                    path: None,
                    ..r.clone()
                })
                .collect();
            Episode::new(cfg.tick_rate_hz, cfg.hash(), unpathed)
        });
        Ok(Session {
            pipeline: Pipeline::new(cfg),
            traces,
            wrench_override: None,
            hall_override: None,
            commands,
            episode,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        self.pipeline.config()
    }

    /// Index of the next tick; controls applied now take effect there.
    pub fn tick_index(&self) -> u64 {
        self.pipeline.tick_index()
    }

    pub fn now_us(&self) -> u64 {
        self.pipeline.now_us()
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    /// Applies a control at the current tick boundary. Returns the tick at
    /// which it takes effect. A rejected control changes nothing.
    pub fn apply(&mut self, control: Control) -> Result<u64, ControlError> {
        match &control {
            Control::ConfigPatch { patch } => {
                let cfg = self.pipeline.config().patched(patch)?;
                self.pipeline.set_config(cfg)?;
            }
            Control::InjectWrench { wrench } => {
                if let Some(w) = wrench {
                    if !w.to_wrench(0).is_finite() {
                        return Err(ControlError::Invalid(
                            "injected wrench must be finite".into(),
                        ));
                    }
                }
                self.wrench_override = *wrench;
            }
            Control::InjectHall { h } => {
                if let Some(h) = h {
                    let max = self.pipeline.config().pinch.hall_adc_max;
                    if !(h.is_finite() && (0.0..=max).contains(h)) {
                        return Err(ControlError::Invalid(format!(
                            "injected Hall reading must lie in [0, {max}]"
                        )));
                    }
                }
                self.hall_override = *h;
            }
        }
        let tick = self.tick_index();
        if let Some(log) = &mut self.commands {
            log.push_control(tick, control);
        }
        Ok(tick)
    }

    /// Samples every source at the current tick time (zero-order hold).
    pub fn sample(&self) -> TickInputs {
        let t = self.now_us();
        let mut inputs = TickInputs::idle(t);
        if let Some(w) = self.wrench_override {
            inputs.wrench = w.to_wrench(t);
        } else if let Some(w) = self.traces.ft.as_ref().and_then(|s| s.sample_at(t)) {
            inputs.wrench = *w;
        }
        if let Some(f) = self.traces.imu.as_ref().and_then(|s| s.sample_at(t)) {
            inputs.imu = *f;
        }
        if let Some(h) = self.hall_override {
            inputs.hall = HallSample { t_us: t, h };
        } else if let Some(h) = self.traces.hall.as_ref().and_then(|s| s.sample_at(t)) {
            inputs.hall = *h;
        }
        if let Some(f) = self.traces.force.as_ref().and_then(|s| s.sample_at(t)) {
            inputs.forces = *f;
        }
        inputs
    }

    fn pose_now(&self) -> [f64; POSE_DIM] {
        self.traces
            .pose
            .as_ref()
            .and_then(|s| s.sample_at(self.now_us()))
            .map_or([0.0; POSE_DIM], |p| p.pose)
    }

    pub fn tick(&mut self) -> TickReport {
        let start = Instant::now();
        let inputs = self.sample();
        let pose = self.episode.is_some().then(|| self.pose_now());
        let sample_us = start.elapsed().as_secs_f64() * 1e6;

        let mut report = self.pipeline.step(&inputs);
        report.stage_us.sample = sample_us;
        report.stage_us.total += sample_us;

        if let Some(log) = &mut self.commands {
            log.push_tick(&report);
        }
        if let (Some(ep), Some(pose)) = (&mut self.episode, pose) {
            ep.push(&report, &pose);
        }
        report
    }

    pub fn finish(self, reports: Vec<TickReport>) -> RunOutputs {
        RunOutputs {
            commands: self.commands,
            episode: self.episode,
            reports,
        }
    }
}

fn check_traces(traces: &TraceSet, cfg: &PipelineConfig) -> Result<(), SessionError> {
    if let Some(hall) = &traces.hall {
        let max = cfg.pinch.hall_adc_max;
        if let Some(bad) = hall.samples().iter().find(|s| s.h > max) {
            return Err(SessionError::Schema(format!(
                "Hall sample at t_us={} reads {} above hall_adc_max {max}",
                bad.t_us, bad.h
            )));
        }
    }
    Ok(())
}

/// Runs `ticks` ticks, applying each scheduled control right before its tick.
/// `schedule` must be sorted by tick.
pub fn run_with_controls(
    cfg: PipelineConfig,
    traces: TraceSet,
    ticks: u64,
    opts: SessionOptions,
    schedule: &[(u64, Control)],
) -> Result<RunOutputs, SessionError> {
    let mut session = Session::new(cfg, traces, opts)?;
    let mut reports = Vec::with_capacity(ticks as usize);
    let mut pending = schedule.iter().peekable();
    for _ in 0..ticks {
        while let Some((tick, control)) = pending.next_if(|(t, _)| *t <= session.tick_index()) {
            session
                .apply(control.clone())
                .map_err(|source| SessionError::Replay {
                    tick: *tick,
                    source,
                })?;
        }
        reports.push(session.tick());
    }
    Ok(session.finish(reports))
}

/// Runs the pipeline over `traces` for exactly `ticks` ticks.
pub fn run_pipeline(
    cfg: PipelineConfig,
    traces: TraceSet,
    ticks: u64,
    opts: SessionOptions,
) -> Result<RunOutputs, SessionError> {
    run_with_controls(cfg, traces, ticks, opts, &[])
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerifyOutcome {
    Identical,
    /// A recorded input trace no longer matches its digest.
    InputChanged {
        kind: DeviceKind,
        path: Option<PathBuf>,
    },
    Differs(LogDifference),
}

/// Re-runs a command log's inputs and compares the regenerated log byte for byte.
///
/// Relative trace paths resolve against `base_dir`.
pub fn verify_log_text(text: &str, base_dir: &Path) -> Result<VerifyOutcome, SessionError> {
    let log = CommandLog::parse(text)?;
    let mut paths = TracePaths::default();
    for r in &log.header.traces {
        match &r.path {
            Some(p) => paths.set(r.kind, base_dir.join(p)),
            None => {
                return Ok(VerifyOutcome::InputChanged {
                    kind: r.kind,
                    path: None,
                })
            }
        }
    }
    let traces = paths.load()?;
    let digests = traces.digests();
    for r in &log.header.traces {
        let current = digests.iter().find(|(k, _)| *k == r.kind).map(|(_, d)| d);
        if current != Some(&r.sha256) {
            return Ok(VerifyOutcome::InputChanged {
                kind: r.kind,
                path: r.path.clone(),
            });
        }
    }
    let schedule: Vec<(u64, Control)> = log.controls().map(|(t, c)| (t, c.clone())).collect();
    let mut header_paths = TracePaths::default();
    for r in &log.header.traces {
        if let Some(p) = &r.path {
            header_paths.set(r.kind, p.clone());
        }
    }
    let out = run_with_controls(
        log.header.config.clone(),
        traces,
        log.header.ticks,
        SessionOptions {
            record_commands: true,
            record_episode: false,
            paths: header_paths,
        },
        &schedule,
    )?;
    let regenerated = out.commands.expect("recording was requested").to_text();
    Ok(match first_difference(&regenerated, text) {
        None => VerifyOutcome::Identical,
        Some(d) => VerifyOutcome::Differs(d),
    })
}

pub fn verify_log(path: impl AsRef<Path>) -> Result<VerifyOutcome, SessionError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    verify_log_text(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PinchState, PoseSample};
    use crate::sim_bus::TraceSource;
    use crate::wrench_map::encode_wrench;
    use serde_json::json;

    fn recorded() -> SessionOptions {
        SessionOptions {
            record_commands: true,
            ..Default::default()
        }
    }

    #[test]
    fn empty_traces_run_idle() {
        let cfg = PipelineConfig::default();
        let traces = TraceSet {
            ft: Some(TraceSource::default()),
            ..Default::default()
        };
        let out = run_pipeline(cfg.clone(), traces, 100, recorded()).unwrap();
        let log = out.commands.unwrap();
        assert_eq!(log.servo_angles().count(), 100);
        assert!(log.servo_angles().all(|(_, a)| a == cfg.servo.theta_init));
    }

    #[test]
    fn injected_wrench_overrides_until_cleared() {
        let cfg = PipelineConfig::default();
        let fy2 = Control::InjectWrench {
            wrench: Some(WrenchOverride {
                fy: 2.0,
                ..Default::default()
            }),
        };
        let clear = Control::InjectWrench { wrench: None };
        let out = run_with_controls(
            cfg.clone(),
            TraceSet::default(),
            80,
            recorded(),
            &[(10, fy2), (40, clear)],
        )
        .unwrap();
        let want = encode_wrench(
            &Wrench {
                fy: 2.0,
                ..Default::default()
            },
            &cfg,
        )
        .angles;
        for (tick, angles) in out.commands.as_ref().unwrap().servo_angles() {
            match tick {
                0..=9 => assert_eq!(angles, cfg.servo.theta_init, "tick {tick}"),
                30..=39 => assert_eq!(angles, want, "tick {tick}"),
                60.. => assert_eq!(angles, cfg.servo.theta_init, "tick {tick}"),
                _ => {}
            }
        }
        assert_eq!(out.commands.unwrap().controls().count(), 2);
    }

    #[test]
    fn injected_hall_drives_pinch() {
        let mut s = Session::new(
            PipelineConfig::default(),
            TraceSet::default(),
            SessionOptions::default(),
        )
        .unwrap();
        assert_eq!(s.apply(Control::InjectHall { h: Some(4000.0) }).unwrap(), 0);
        let mut state = PinchState::Free;
        for _ in 0..10 {
            state = s.tick().fingers.pinch_state;
        }
        assert_eq!(state, PinchState::Contact);
        assert!(s.apply(Control::InjectHall { h: Some(5000.0) }).is_err());
        assert!(s.apply(Control::InjectHall { h: Some(f64::NAN) }).is_err());
    }

    #[test]
    fn rejected_patch_changes_nothing() {
        let mut s =
            Session::new(PipelineConfig::default(), TraceSet::default(), recorded()).unwrap();
        let before = s.config().clone();
        assert!(s
            .apply(Control::ConfigPatch {
                patch: json!({"pinch": {"h_low": 5000.0}})
            })
            .is_err());
        assert!(s
            .apply(Control::ConfigPatch {
                patch: json!({"wrench": {"nope": 1}})
            })
            .is_err());
        assert!(s
            .apply(Control::ConfigPatch {
                patch: json!({"tick_rate_hz": 50})
            })
            .is_err());
        assert_eq!(s.config(), &before);
        assert_eq!(s.commands.as_ref().unwrap().controls().count(), 0);
    }

    #[test]
    fn episode_needs_pose() {
        let opts = SessionOptions {
            record_episode: true,
            ..Default::default()
        };
        assert!(matches!(
            Session::new(PipelineConfig::default(), TraceSet::default(), opts),
            Err(SessionError::NoPoseSource)
        ));
    }

    #[test]
    fn episode_has_one_record_per_tick() {
        let traces = TraceSet {
            pose: Some(
                TraceSource::new(vec![PoseSample {
                    t_us: 0,
                    pose: [1.0; 12],
                }])
                .unwrap(),
            ),
            ..Default::default()
        };
        let opts = SessionOptions {
            record_episode: true,
            ..Default::default()
        };
        let out = run_pipeline(PipelineConfig::default(), traces, 37, opts).unwrap();
        let ep = out.episode.unwrap();
        assert_eq!(ep.len(), 37);
        assert_eq!(ep.records[36].t, 36);
        assert_eq!(ep.records[0].observation.pose, [1.0; 12]);
    }

    #[test]
    fn hall_trace_above_adc_range_is_schema_error() {
        let traces = TraceSet {
            hall: Some(TraceSource::new(vec![HallSample { t_us: 0, h: 9000.0 }]).unwrap()),
            ..Default::default()
        };
        assert!(matches!(
            Session::new(PipelineConfig::default(), traces, SessionOptions::default()),
            Err(SessionError::Schema(_))
        ));
    }

    #[test]
    fn control_round_trips_as_json() {
        let c = Control::InjectWrench {
            wrench: Some(WrenchOverride {
                fy: 2.0,
                ..Default::default()
            }),
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Control>(&text).unwrap(), c);
        let partial: Control =
            serde_json::from_str(r#"{"type":"inject_wrench","wrench":{"fy":2}}"#).unwrap();
        assert_eq!(partial, c);
    }
}
