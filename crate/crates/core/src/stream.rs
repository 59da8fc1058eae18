//! Telemetry stream: newline-delimited JSON over TCP.
//!
//! The tick loop is the only owner of pipeline state. Each client gets a
//! reader thread that forwards parsed requests into one shared inbound queue,
//! and a writer thread fed by a bounded outbound queue. The loop drains the
//! inbound queue once per tick and never waits on a client: when a client's
//! queue is full its telemetry is dropped.
//!
//! Server → client: `hello`, `tick`, `ack`, `error`.
//! Client → server: `hello`, `config_patch`, `inject_wrench`, `inject_hall`.

use crate::config::PipelineConfig;
use crate::model::{PinchState, Wrench, FINGER_COUNT, SERVO_COUNT};
use crate::pipeline::{StageTimes, TickReport};
use crate::session::{Control, RunOutputs, Session, WrenchOverride};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub const PROTOCOL: &str = "wrenchlink-stream";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenchFields {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl From<Wrench> for WrenchFields {
    fn from(w: Wrench) -> Self {
        WrenchFields {
            fx: w.fx,
            fy: w.fy,
            fz: w.fz,
            tx: w.tx,
            ty: w.ty,
            tz: w.tz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoTelemetry {
    pub angles: [f64; SERVO_COUNT],
    pub clamped: [bool; SERVO_COUNT],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerTelemetry {
    pub bend: [f64; FINGER_COUNT],
    pub pinch_state: PinchState,
    pub pinch_blend: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticTelemetry {
    pub duty: [f64; FINGER_COUNT],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTelemetry {
    pub sample: f64,
    pub wrench: f64,
    pub fusion: f64,
    pub haptics: f64,
    pub total: f64,
}

impl From<StageTimes> for StageTelemetry {
    fn from(s: StageTimes) -> Self {
        StageTelemetry {
            sample: s.sample,
            wrench: s.wrench,
            fusion: s.fusion,
            haptics: s.haptics,
            total: s.total,
        }
    }
}

/// Messages sent by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: String,
        version: u32,
        tick_rate_hz: u32,
        /// Next tick to run.
        tick: u64,
        config: PipelineConfig,
    },
    Tick {
        tick: u64,
        t_us: u64,
        wrench: WrenchFields,
        servo: ServoTelemetry,
        fingers: FingerTelemetry,
        haptic: HapticTelemetry,
        stage_us: StageTelemetry,
    },
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Value>,
        request: String,
        /// Tick at which the request took effect.
        tick: u64,
        /// Active config after a `config_patch`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<PipelineConfig>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Value>,
        message: String,
    },
}

impl ServerMessage {
    pub fn tick(r: &TickReport) -> Self {
        ServerMessage::Tick {
            tick: r.tick,
            t_us: r.t_us,
            wrench: r.wrench.into(),
            servo: ServoTelemetry {
                angles: r.servo.angles,
                clamped: r.servo.clamped,
            },
            fingers: FingerTelemetry {
                bend: r.fingers.bend,
                pinch_state: r.fingers.pinch_state,
                pinch_blend: r.fingers.pinch_blend,
            },
            haptic: HapticTelemetry {
                duty: r.haptic.duty,
            },
            stage_us: r.stage_us.into(),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server message serializes");
        s.push('\n');
        s
    }
}

/// Messages accepted from clients. `id` is echoed back in the reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        id: Option<Value>,
        version: u32,
    },
    ConfigPatch {
        #[serde(default)]
        id: Option<Value>,
        patch: Value,
    },
    InjectWrench {
        #[serde(default)]
        id: Option<Value>,
        #[serde(default)]
        wrench: Option<WrenchOverride>,
        #[serde(default)]
        clear: bool,
    },
    InjectHall {
        #[serde(default)]
        id: Option<Value>,
        #[serde(default)]
        h: Option<f64>,
        #[serde(default)]
        clear: bool,
    },
}

impl ClientMessage {
    pub fn id(&self) -> Option<&Value> {
        match self {
            ClientMessage::Hello { id, .. }
            | ClientMessage::ConfigPatch { id, .. }
            | ClientMessage::InjectWrench { id, .. }
            | ClientMessage::InjectHall { id, .. } => id.as_ref(),
        }
    }

    /// The pipeline control this request asks for, if any.
    pub fn to_control(&self) -> Result<Option<Control>, String> {
        fn either<T>(value: Option<T>, clear: bool, what: &str) -> Result<Option<T>, String> {
            match (value, clear) {
                (Some(v), false) => Ok(Some(v)),
                (None, true) => Ok(None),
                _ => Err(format!("give exactly one of `{what}` or `clear: true`")),
            }
        }
        Ok(match self {
            ClientMessage::Hello { .. } => None,
            ClientMessage::ConfigPatch { patch, .. } => Some(Control::ConfigPatch {
                patch: patch.clone(),
            }),
            ClientMessage::InjectWrench { wrench, clear, .. } => Some(Control::InjectWrench {
                wrench: either(*wrench, *clear, "wrench")?,
            }),
            ClientMessage::InjectHall { h, clear, .. } => Some(Control::InjectHall {
                h: either(*h, *clear, "h")?,
            }),
        })
    }
}

/// Best-effort `id` extraction from a line that failed to parse.
fn salvage_id(line: &str) -> Option<Value> {
    serde_json::from_str::<Value>(line).ok()?.get("id").cloned()
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Stop after this many ticks; run until `stop` otherwise.
    pub ticks: Option<u64>,
    /// Wall-clock pacing between ticks; zero runs as fast as possible.
    pub tick_interval: Duration,
    pub stop: Arc<AtomicBool>,
}

impl ServeOptions {
    pub fn real_time(cfg: &PipelineConfig) -> Self {
        ServeOptions {
            ticks: None,
            tick_interval: Duration::from_micros(crate::model::period_us(cfg.tick_rate_hz)),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

type ClientId = u64;

enum Inbound {
    Connected(ClientId, SyncSender<String>),
    Line(ClientId, String),
    Closed(ClientId),
}

struct Client {
    id: ClientId,
    out: SyncSender<String>,
}

fn spawn_client(
    id: ClientId,
    stream: TcpStream,
    inbound: Sender<Inbound>,
    queue_depth: usize,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let (tx, rx) = mpsc::sync_channel::<String>(queue_depth);
    let mut writer = stream.try_clone()?;
    thread::spawn(move || {
        for line in rx {
            if writer.write_all(line.as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
    });
    if inbound.send(Inbound::Connected(id, tx)).is_err() {
        return Ok(());
    }
    thread::spawn(move || {
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            if inbound.send(Inbound::Line(id, line)).is_err() {
                return;
            }
        }
        let _ = inbound.send(Inbound::Closed(id));
    });
    Ok(())
}

fn spawn_acceptor(
    listener: TcpListener,
    inbound: Sender<Inbound>,
    queue_depth: usize,
    stop: Arc<AtomicBool>,
) -> io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        let mut next_id: ClientId = 0;
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    next_id += 1;
                    let _ = spawn_client(next_id, stream, inbound.clone(), queue_depth);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(2))
                }
                Err(_) => thread::sleep(Duration::from_millis(10)),
            }
        }
    }))
}

/// Drops the message if the client is behind; forgets clients that hung up.
fn offer(clients: &mut Vec<Client>, to: Option<ClientId>, line: &str) {
    clients.retain(|c| {
        if to.is_some_and(|id| id != c.id) {
            return true;
        }
        !matches!(
            c.out.try_send(line.to_owned()),
            Err(TrySendError::Disconnected(_))
        )
    });
}

fn handle_line(session: &mut Session, line: &str) -> ServerMessage {
    let msg: ClientMessage = match serde_json::from_str(line) {
        Ok(m) => m,
        Err(e) => {
            return ServerMessage::Error {
                id: salvage_id(line),
                message: format!("malformed message: {e}"),
            }
        }
    };
    let id = msg.id().cloned();
    if let ClientMessage::Hello { version, .. } = msg {
        return if version == PROTOCOL_VERSION {
            ServerMessage::Ack {
                id,
                request: "hello".into(),
                tick: session.tick_index(),
                config: None,
            }
        } else {
            ServerMessage::Error {
                id,
                message: format!(
                    "unsupported protocol version {version}; server speaks {PROTOCOL_VERSION}"
                ),
            }
        };
    }
    let control = match msg.to_control() {
        Ok(Some(c)) => c,
        Ok(None) => unreachable!("only hello carries no control"),
        Err(message) => return ServerMessage::Error { id, message },
    };
    let request = control.name().to_owned();
    let is_patch = matches!(control, Control::ConfigPatch { .. });
    match session.apply(control) {
        Ok(tick) => ServerMessage::Ack {
            id,
            request,
            tick,
            config: is_patch.then(|| session.config().clone()),
        },
        Err(e) => ServerMessage::Error {
            id,
            message: format!("{request} rejected: {e}"),
        },
    }
}

fn hello(session: &Session) -> ServerMessage {
    ServerMessage::Hello {
        protocol: PROTOCOL.into(),
        version: PROTOCOL_VERSION,
        tick_rate_hz: session.config().tick_rate_hz,
        tick: session.tick_index(),
        config: session.config().clone(),
    }
}

/// Runs `session` on its tick loop while serving the stream on `listener`.
///
/// Returns the session outputs once `opts.ticks` ticks have run or `opts.stop`
/// is set. `reports` in the result is left empty.
pub fn serve(
    listener: TcpListener,
    mut session: Session,
    opts: ServeOptions,
) -> io::Result<RunOutputs> {
    let stream_cfg = session.config().stream.clone();
    let (tx, rx): (Sender<Inbound>, Receiver<Inbound>) = mpsc::channel();
    let accept_stop = Arc::new(AtomicBool::new(false));
    let acceptor = spawn_acceptor(listener, tx, stream_cfg.queue_depth, accept_stop.clone())?;

    let mut clients: Vec<Client> = Vec::new();
    let mut deadline = Instant::now();
    let decimation = u64::from(stream_cfg.telemetry_decimation.max(1));

    while !opts.stop.load(Ordering::Relaxed) && opts.ticks.is_none_or(|n| session.tick_index() < n)
    {
        while let Ok(event) = rx.try_recv() {
            match event {
                Inbound::Connected(id, out) => {
                    clients.push(Client { id, out });
                    offer(&mut clients, Some(id), &hello(&session).to_line());
                }
                Inbound::Line(id, line) => {
                    let reply = handle_line(&mut session, &line);
                    offer(&mut clients, Some(id), &reply.to_line());
                }
                Inbound::Closed(id) => clients.retain(|c| c.id != id),
            }
        }

        let report = session.tick();
        if report.tick.is_multiple_of(decimation) && !clients.is_empty() {
            offer(&mut clients, None, &ServerMessage::tick(&report).to_line());
        }

        if !opts.tick_interval.is_zero() {
            deadline += opts.tick_interval;
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            } else {
                deadline = now;
            }
        }
    }

    accept_stop.store(true, Ordering::Relaxed);
    drop(clients);
    let _ = acceptor.join();
    Ok(session.finish(Vec::new()))
}
