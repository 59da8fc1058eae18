//! Trace files and zero-order-hold replay.
//!
//! Every trace starts with the version line `#wrenchlink-trace v1`.
//! Force-torque traces are CSV with the header `t_us,fx,fy,fz,tx,ty,tz`.
//! All other devices use one JSON object per line with a `kind` field:
//!
//! ```text
//! {"kind":"imu","t_us":0,"sensors":[{"gyro":[gx,gy,gz],"accel":[ax,ay,az]}, ... six entries]}
//! {"kind":"hall","t_us":0,"h":1234.0}
//! {"kind":"force","t_us":0,"force":[f_thumb,f_index,f_middle,f_ring,f_little]}
//! {"kind":"pose","t_us":0,"pose":[arm x,y,z,rx,ry,rz, hand j1..j6]}
//! ```
//!
//! Timestamps must be strictly increasing within a file.

use crate::model::{
    FingertipForces, HallSample, ImuFrame, ImuReading, PoseSample, Wrench, FINGER_COUNT, IMU_COUNT,
    POSE_DIM,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TRACE_HEADER: &str = "#wrenchlink-trace v1";
pub const FT_CSV_HEADER: &str = "t_us,fx,fy,fz,tx,ty,tz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Ft,
    Imu,
    Hall,
    #[serde(rename = "force")]
    FingertipForce,
    Pose,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 5] = [
        DeviceKind::Ft,
        DeviceKind::Imu,
        DeviceKind::Hall,
        DeviceKind::FingertipForce,
        DeviceKind::Pose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::Ft => "ft",
            DeviceKind::Imu => "imu",
            DeviceKind::Hall => "hall",
            DeviceKind::FingertipForce => "force",
            DeviceKind::Pose => "pose",
        }
    }

    /// Conventional file name used by `gen`.
    pub fn file_name(self) -> &'static str {
        match self {
            DeviceKind::Ft => "ft.csv",
            DeviceKind::Imu => "imu.ndjson",
            DeviceKind::Hall => "hall.ndjson",
            DeviceKind::FingertipForce => "force.ndjson",
            DeviceKind::Pose => "pose.ndjson",
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line 1: expected version header `{TRACE_HEADER}`")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected a {expected} record, found {found}")]
    KindMismatch {
        line: usize,
        expected: DeviceKind,
        found: String,
    },
    #[error("line {line}: timestamp {t_us} does not increase past {prev}")]
    Order { line: usize, t_us: u64, prev: u64 },
}

/// A sample type that can live in a trace file.
pub trait TraceSample: Clone + fmt::Debug {
    const KIND: DeviceKind;

    fn t_us(&self) -> u64;

    fn encode(&self) -> String;

    /// Parses one data line; the error message gets the line number attached by the caller.
    fn decode(line: &str) -> Result<Self, DecodeError>;
}

#[derive(Debug)]
pub enum DecodeError {
    Malformed(String),
    WrongKind(String),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Imu { t_us: u64, sensors: Vec<ImuReading> },
    Hall { t_us: u64, h: f64 },
    Force { t_us: u64, force: Vec<f64> },
    Pose { t_us: u64, pose: Vec<f64> },
}

impl Record {
    fn kind_name(&self) -> &'static str {
        match self {
            Record::Imu { .. } => "imu",
            Record::Hall { .. } => "hall",
            Record::Force { .. } => "force",
            Record::Pose { .. } => "pose",
        }
    }

    fn parse(line: &str) -> Result<Record, DecodeError> {
        serde_json::from_str(line).map_err(|e| DecodeError::Malformed(e.to_string()))
    }

    fn encode(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }
}

fn finite(values: &[f64], what: &str) -> Result<(), DecodeError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DecodeError::Malformed(format!("non-finite {what} value")))
    }
}

fn exact_len<const N: usize>(v: Vec<f64>, what: &str) -> Result<[f64; N], DecodeError> {
    let len = v.len();
    v.try_into().map_err(|_| {
        DecodeError::Malformed(format!("{what} vector has length {len}, expected {N}"))
    })
}

impl TraceSample for Wrench {
    const KIND: DeviceKind = DeviceKind::Ft;

    fn t_us(&self) -> u64 {
        self.t_us
    }

    fn encode(&self) -> String {
        let mut s = self.t_us.to_string();
        for v in self.components() {
            write!(s, ",{v}").unwrap();
        }
        s
    }

    fn decode(line: &str) -> Result<Self, DecodeError> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(DecodeError::Malformed(format!(
                "expected 7 columns, found {}",
                fields.len()
            )));
        }
        let t_us = fields[0]
            .parse::<u64>()
            .map_err(|e| DecodeError::Malformed(format!("bad t_us `{}`: {e}", fields[0])))?;
        let mut c = [0.0; 6];
        for (slot, text) in c.iter_mut().zip(&fields[1..]) {
            *slot = text
                .parse::<f64>()
                .map_err(|e| DecodeError::Malformed(format!("bad number `{text}`: {e}")))?;
        }
        finite(&c, "wrench")?;
        Ok(Wrench::from_components(t_us, c))
    }
}

impl TraceSample for ImuFrame {
    const KIND: DeviceKind = DeviceKind::Imu;

    fn t_us(&self) -> u64 {
        self.t_us
    }

    fn encode(&self) -> String {
        Record::Imu {
            t_us: self.t_us,
            sensors: self.sensors.to_vec(),
        }
        .encode()
    }

    fn decode(line: &str) -> Result<Self, DecodeError> {
        match Record::parse(line)? {
            Record::Imu { t_us, sensors } => {
                let n = sensors.len();
                let sensors: [ImuReading; IMU_COUNT] = sensors.try_into().map_err(|_| {
                    DecodeError::Malformed(format!("expected {IMU_COUNT} IMU entries, found {n}"))
                })?;
                let frame = ImuFrame { t_us, sensors };
                if !frame.is_finite() {
                    return Err(DecodeError::Malformed("non-finite IMU value".into()));
                }
                Ok(frame)
            }
            other => Err(DecodeError::WrongKind(other.kind_name().into())),
        }
    }
}

impl TraceSample for HallSample {
    const KIND: DeviceKind = DeviceKind::Hall;

    fn t_us(&self) -> u64 {
        self.t_us
    }

    fn encode(&self) -> String {
        Record::Hall {
            t_us: self.t_us,
            h: self.h,
        }
        .encode()
    }

    fn decode(line: &str) -> Result<Self, DecodeError> {
        match Record::parse(line)? {
            Record::Hall { t_us, h } => {
                finite(&[h], "hall")?;
                if h < 0.0 {
                    return Err(DecodeError::Malformed(format!("negative Hall reading {h}")));
                }
                Ok(HallSample { t_us, h })
            }
            other => Err(DecodeError::WrongKind(other.kind_name().into())),
        }
    }
}

impl TraceSample for FingertipForces {
    const KIND: DeviceKind = DeviceKind::FingertipForce;

    fn t_us(&self) -> u64 {
        self.t_us
    }

    fn encode(&self) -> String {
        Record::Force {
            t_us: self.t_us,
            force: self.force.to_vec(),
        }
        .encode()
    }

    fn decode(line: &str) -> Result<Self, DecodeError> {
        match Record::parse(line)? {
            Record::Force { t_us, force } => {
                let force: [f64; FINGER_COUNT] = exact_len(force, "force")?;
                finite(&force, "force")?;
                Ok(FingertipForces::new(t_us, force))
            }
            other => Err(DecodeError::WrongKind(other.kind_name().into())),
        }
    }
}

impl TraceSample for PoseSample {
    const KIND: DeviceKind = DeviceKind::Pose;

    fn t_us(&self) -> u64 {
        self.t_us
    }

    fn encode(&self) -> String {
        Record::Pose {
            t_us: self.t_us,
            pose: self.pose.to_vec(),
        }
        .encode()
    }

    fn decode(line: &str) -> Result<Self, DecodeError> {
        match Record::parse(line)? {
            Record::Pose { t_us, pose } => {
                let pose: [f64; POSE_DIM] = exact_len(pose, "pose")?;
                finite(&pose, "pose")?;
                Ok(PoseSample { t_us, pose })
            }
            other => Err(DecodeError::WrongKind(other.kind_name().into())),
        }
    }
}

/// An immutable, time-ordered recording of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSource<T> {
    samples: Vec<T>,
}

impl<T> Default for TraceSource<T> {
    fn default() -> Self {
        TraceSource {
            samples: Vec::new(),
        }
    }
}

impl<T: TraceSample> TraceSource<T> {
    /// Builds a trace, checking that timestamps strictly increase.
    pub fn new(samples: Vec<T>) -> Result<Self, TraceError> {
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t_us() <= pair[0].t_us() {
                // row i + 1 of the data, i.e. file line i + 2 after the headers
                return Err(TraceError::Order {
                    line: i + 1 + header_lines(T::KIND),
                    t_us: pair[1].t_us(),
                    prev: pair[0].t_us(),
                });
            }
        }
        Ok(TraceSource { samples })
    }

    pub fn kind(&self) -> DeviceKind {
        T::KIND
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Latest sample with `t_us <= t`, or `None` before the first sample.
    pub fn sample_at(&self, t: u64) -> Option<&T> {
        let idx = self.samples.partition_point(|s| s.t_us() <= t);
        idx.checked_sub(1).map(|i| &self.samples[i])
    }

    pub fn cursor(&self) -> TraceCursor<'_, T> {
        TraceCursor {
            trace: self,
            next: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, first)) if first.trim_end() == TRACE_HEADER => {}
            _ => return Err(TraceError::MissingHeader),
        }
        if T::KIND == DeviceKind::Ft {
            match lines.next() {
                Some((_, h)) if h.trim() == FT_CSV_HEADER => {}
                Some((line, h)) => {
                    return Err(TraceError::Parse {
                        line,
                        message: format!("expected column header `{FT_CSV_HEADER}`, found `{h}`"),
                    })
                }
                None => {
                    return Err(TraceError::Parse {
                        line: 2,
                        message: format!("missing column header `{FT_CSV_HEADER}`"),
                    })
                }
            }
        }
        let mut samples: Vec<T> = Vec::new();
        for (line, text) in lines {
            let text = text.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let sample = T::decode(text).map_err(|e| match e {
                DecodeError::Malformed(message) => TraceError::Parse { line, message },
                DecodeError::WrongKind(found) => TraceError::KindMismatch {
                    line,
                    expected: T::KIND,
                    found,
                },
            })?;
            if let Some(prev) = samples.last() {
                if sample.t_us() <= prev.t_us() {
                    return Err(TraceError::Order {
                        line,
                        t_us: sample.t_us(),
                        prev: prev.t_us(),
                    });
                }
            }
            samples.push(sample);
        }
        Ok(TraceSource { samples })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 * (self.samples.len() + 2));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        if T::KIND == DeviceKind::Ft {
            out.push_str(FT_CSV_HEADER);
            out.push('\n');
        }
        for s in &self.samples {
            out.push_str(&s.encode());
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical text form; identifies the trace in logs.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| TraceError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

fn header_lines(kind: DeviceKind) -> usize {
    if kind == DeviceKind::Ft {
        2
    } else {
        1
    }
}

/// Reads and checks a trace file of sample type `T`.
pub fn load_trace<T: TraceSample>(path: impl AsRef<Path>) -> Result<TraceSource<T>, TraceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_owned(),
        source,
    })?;
    TraceSource::parse(&text)
}

/// Sequential zero-order-hold reader for monotonically increasing query times.
#[derive(Debug, Clone)]
pub struct TraceCursor<'a, T> {
    trace: &'a TraceSource<T>,
    next: usize,
}

impl<'a, T: TraceSample> TraceCursor<'a, T> {
    /// Same answer as [`TraceSource::sample_at`], amortized O(1) when queries
    /// move forward. Queries that move backward fall back to a search.
    pub fn advance_to(&mut self, t: u64) -> Option<&'a T> {
        let samples = &self.trace.samples;
        if self.next > 0 && samples[self.next - 1].t_us() > t {
            self.next = samples.partition_point(|s| s.t_us() <= t);
        }
        while self.next < samples.len() && samples[self.next].t_us() <= t {
            self.next += 1;
        }
        self.next.checked_sub(1).map(|i| &samples[i])
    }
}

/// The set of device traces driving one run. Absent devices read as idle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSet {
    pub ft: Option<TraceSource<Wrench>>,
    pub imu: Option<TraceSource<ImuFrame>>,
    pub hall: Option<TraceSource<HallSample>>,
    pub force: Option<TraceSource<FingertipForces>>,
    pub pose: Option<TraceSource<PoseSample>>,
}

impl TraceSet {
    /// Digest of each present trace, keyed by device name.
    pub fn digests(&self) -> Vec<(DeviceKind, String)> {
        let mut out = Vec::new();
        if let Some(t) = &self.ft {
            out.push((DeviceKind::Ft, t.digest()));
        }
        if let Some(t) = &self.imu {
            out.push((DeviceKind::Imu, t.digest()));
        }
        if let Some(t) = &self.hall {
            out.push((DeviceKind::Hall, t.digest()));
        }
        if let Some(t) = &self.force {
            out.push((DeviceKind::FingertipForce, t.digest()));
        }
        if let Some(t) = &self.pose {
            out.push((DeviceKind::Pose, t.digest()));
        }
        out
    }

    /// Writes every present trace into `dir` under its conventional name.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, TraceError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| TraceError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let mut written = Vec::new();
        let mut put = |kind: DeviceKind, text: Option<String>| -> Result<(), TraceError> {
            if let Some(text) = text {
                let path = dir.join(kind.file_name());
                std::fs::write(&path, text).map_err(|source| TraceError::Io {
                    path: path.clone(),
                    source,
                })?;
                written.push(path);
            }
            Ok(())
        };
        put(DeviceKind::Ft, self.ft.as_ref().map(TraceSource::to_text))?;
        put(DeviceKind::Imu, self.imu.as_ref().map(TraceSource::to_text))?;
        put(
            DeviceKind::Hall,
            self.hall.as_ref().map(TraceSource::to_text),
        )?;
        put(
            DeviceKind::FingertipForce,
            self.force.as_ref().map(TraceSource::to_text),
        )?;
        put(
            DeviceKind::Pose,
            self.pose.as_ref().map(TraceSource::to_text),
        )?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ft_text(rows: &[&str]) -> String {
        let mut s = format!("{TRACE_HEADER}\n{FT_CSV_HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn ft_csv_three_rows() {
        let text = ft_text(&[
            "0,0,0,0,0,0,0",
            "10000,1,2,3,0.1,0.2,0.3",
            "20000,-1,-2,-3,0,0,0",
        ]);
        let tr = TraceSource::<Wrench>::parse(&text).unwrap();
        assert_eq!(tr.len(), 3);
        assert_eq!(tr.kind(), DeviceKind::Ft);
        assert_eq!(tr.samples()[1].fz, 3.0);
        assert_eq!(tr.samples()[1].ty, 0.2);
    }

    #[test]
    fn decreasing_timestamps_name_the_row() {
        let text = ft_text(&["0,0,0,0,0,0,0", "20000,0,0,0,0,0,0", "10000,0,0,0,0,0,0"]);
        let err = TraceSource::<Wrench>::parse(&text).unwrap_err();
        assert!(
            matches!(
                err,
                TraceError::Order {
                    line: 5,
                    t_us: 10000,
                    prev: 20000
                }
            ),
            "{err}"
        );
        assert!(err.to_string().starts_with("line 5:"));
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let text = ft_text(&["0,0,0,0,0,0,0", "0,1,0,0,0,0,0"]);
        assert!(matches!(
            TraceSource::<Wrench>::parse(&text).unwrap_err(),
            TraceError::Order { .. }
        ));
    }

    #[test]
    fn empty_data_section_is_valid() {
        let tr = TraceSource::<Wrench>::parse(&ft_text(&[])).unwrap();
        assert!(tr.is_empty());
        assert_eq!(tr.sample_at(1_000_000), None);
        let tr = TraceSource::<HallSample>::parse(&format!("{TRACE_HEADER}\n")).unwrap();
        assert!(tr.is_empty());
    }

    #[test]
    fn missing_header_rejected() {
        let err = TraceSource::<Wrench>::parse("t_us,fx,fy,fz,tx,ty,tz\n").unwrap_err();
        assert!(matches!(err, TraceError::MissingHeader));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = TraceSource::<Wrench>::parse(&ft_text(&["0,0,0,0,0,0,0", "1,2,3"])).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 4, .. }), "{err}");
        let err = TraceSource::<Wrench>::parse(&ft_text(&["0,NaN,0,0,0,0,0"])).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn wrong_kind_is_schema_mismatch() {
        let text = format!("{TRACE_HEADER}\n{{\"kind\":\"hall\",\"t_us\":0,\"h\":10.0}}\n");
        let err = TraceSource::<FingertipForces>::parse(&text).unwrap_err();
        assert!(
            matches!(err, TraceError::KindMismatch { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn pose_length_checked() {
        let text = format!("{TRACE_HEADER}\n{{\"kind\":\"pose\",\"t_us\":0,\"pose\":[1,2,3]}}\n");
        let err = TraceSource::<PoseSample>::parse(&text).unwrap_err();
        assert!(err.to_string().contains("length 3, expected 12"), "{err}");
    }

    #[test]
    fn negative_hall_rejected_and_forces_clamped() {
        let text = format!("{TRACE_HEADER}\n{{\"kind\":\"hall\",\"t_us\":0,\"h\":-1.0}}\n");
        assert!(TraceSource::<HallSample>::parse(&text).is_err());
        let text =
            format!("{TRACE_HEADER}\n{{\"kind\":\"force\",\"t_us\":0,\"force\":[-1,1,0,0,0]}}\n");
        let tr = TraceSource::<FingertipForces>::parse(&text).unwrap();
        assert_eq!(tr.samples()[0].force, [0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn imu_round_trip() {
        let mut frame = ImuFrame::at_rest(10);
        frame.sensors[2].gyro = [1.5, -2.25, 0.125];
        let tr = TraceSource::new(vec![ImuFrame::at_rest(0), frame]).unwrap();
        let back = TraceSource::<ImuFrame>::parse(&tr.to_text()).unwrap();
        assert_eq!(tr, back);
    }

    #[test]
    fn zero_order_hold() {
        let tr = TraceSource::new(vec![
            HallSample { t_us: 100, h: 1.0 },
            HallSample { t_us: 200, h: 2.0 },
        ])
        .unwrap();
        assert_eq!(tr.sample_at(99), None);
        assert_eq!(tr.sample_at(100).unwrap().h, 1.0);
        assert_eq!(tr.sample_at(150).unwrap().h, 1.0);
        assert_eq!(tr.sample_at(200).unwrap().h, 2.0);
        assert_eq!(tr.sample_at(u64::MAX).unwrap().h, 2.0);
    }

    proptest! {
        #[test]
        fn ft_text_round_trips(rows in proptest::collection::vec(proptest::array::uniform6(-1e3f64..1e3), 0..20)) {
            let samples: Vec<Wrench> = rows.iter().enumerate()
                .map(|(i, c)| Wrench::from_components(i as u64 * 10_000, *c)).collect();
            let tr = TraceSource::new(samples).unwrap();
            prop_assert_eq!(TraceSource::<Wrench>::parse(&tr.to_text()).unwrap(), tr);
        }

        #[test]
        fn cursor_matches_random_access(
            gaps in proptest::collection::vec(1u64..50, 0..40),
            queries in proptest::collection::vec(0u64..2_000, 0..60),
        ) {
            let mut t = 0;
            let samples: Vec<HallSample> = gaps.iter().map(|g| { t += g; HallSample { t_us: t, h: t as f64 } }).collect();
            let tr = TraceSource::new(samples).unwrap();
            // sorted queries exercise the forward path, the raw order the fallback
            let mut sorted = queries.clone();
            sorted.sort_unstable();
            for qs in [sorted, queries] {
                let mut cur = tr.cursor();
                for q in qs {
                    prop_assert_eq!(cur.advance_to(q), tr.sample_at(q));
                }
            }
        }
    }
}
