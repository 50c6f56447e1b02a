//! Lighting-server side: LED registry, packet ingestion, per-phone sessions
//! and liveness probing.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Luminaire, Point3, RoomConfig};
use crate::solver::{estimate_position, AnchorMeasurement, PositionEstimate, SolverError};
use crate::tracker::{predict, update, KalmanConfig, KalmanState, TrackerError};

/// Version written at the head of every session snapshot.
pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_HISTORY_CAPACITY: usize = 256;
/// Estimates further than this fraction of a room dimension outside the room
/// are refused.
pub const ROOM_MARGIN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServerError {
    #[error("LED at ({x_cm}, {y_cm}) is already registered")]
    DuplicateLed { x_cm: u16, y_cm: u16 },
    #[error("LED {led_id}: anchor {anchor:?} is not on the {ceiling_cm} cm ceiling at whole-cm u16 coordinates")]
    BadAnchor {
        led_id: u32,
        anchor: Point3,
        ceiling_cm: f64,
    },
    #[error("no LED registered at ({x_cm}, {y_cm})")]
    UnknownLedId { x_cm: u16, y_cm: u16 },
    #[error("packet carries no records")]
    EmptyPacket,
    #[error("record {index} has a non-positive or non-finite distance {value}")]
    BadDistance { index: usize, value: f64 },
    #[error("only {have} records resolved to registered LEDs; need 3")]
    InsufficientAnchors { have: usize },
    #[error("timestamp {got} ms is not after the session's last timestamp {last} ms")]
    StaleTimestamp { got: u64, last: u64 },
    #[error("estimate {0:?} lies outside the room bounds")]
    OutOfBounds(Point3),
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported snapshot version {0}")]
    SnapshotVersion(u32),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisteredLed {
    pub led_id: u32,
    pub anchor: Point3,
}

/// LED anchors keyed by the ceiling coordinates they broadcast.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LedRegistry {
    ceiling_cm: f64,
    leds: BTreeMap<(u16, u16), RegisteredLed>,
}

impl LedRegistry {
    pub fn new(ceiling_cm: f64) -> Self {
        Self {
            ceiling_cm,
            leds: BTreeMap::new(),
        }
    }

    pub fn from_luminaires(ceiling_cm: f64, luminaires: &[Luminaire]) -> Result<Self, ServerError> {
        let mut reg = Self::new(ceiling_cm);
        for lum in luminaires {
            reg.insert(lum.led_id, lum.anchor)?;
        }
        Ok(reg)
    }

    /// Wire key for an anchor: its (x, y) in whole centimetres.
    pub fn key_for(anchor: &Point3) -> Option<(u16, u16)> {
        let ok = |v: f64| v.fract() == 0.0 && (0.0..=u16::MAX as f64).contains(&v);
        (ok(anchor.x) && ok(anchor.y)).then(|| (anchor.x as u16, anchor.y as u16))
    }

    pub fn insert(&mut self, led_id: u32, anchor: Point3) -> Result<(), ServerError> {
        let bad = || ServerError::BadAnchor {
            led_id,
            anchor,
            ceiling_cm: self.ceiling_cm,
        };
        if anchor.z != self.ceiling_cm {
            return Err(bad());
        }
        let key = Self::key_for(&anchor).ok_or_else(bad)?;
        if self.leds.contains_key(&key) {
            return Err(ServerError::DuplicateLed {
                x_cm: key.0,
                y_cm: key.1,
            });
        }
        self.leds.insert(key, RegisteredLed { led_id, anchor });
        Ok(())
    }

    pub fn lookup(&self, x_cm: u16, y_cm: u16) -> Option<&RegisteredLed> {
        self.leds.get(&(x_cm, y_cm))
    }

    pub fn len(&self) -> usize {
        self.leds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leds.is_empty()
    }

    pub fn ceiling_cm(&self) -> f64 {
        self.ceiling_cm
    }
}

/// One (LED coordinates, range) slot pair.
///
/// The range travels as floating-point millimetres so that noise-free runs
/// are exact end to end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub x_cm: u16,
    pub y_cm: u16,
    pub distance_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionPacket {
    pub session_id: String,
    pub timestamp_ms: u64,
    pub records: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// White-acceleration intensity, cm²/s⁴.
    pub process_noise_q: f64,
    pub measurement_sigma_cm: f64,
    /// Interval assumed for the one-step-ahead prediction and for the first
    /// step of a session. Simulation runs derive it from the sampling rate.
    pub nominal_dt_s: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            process_noise_q: 1.0,
            measurement_sigma_cm: 5.0,
            nominal_dt_s: 1.0,
        }
    }
}

impl TrackerParams {
    pub fn config(&self, dt_s: f64) -> Result<KalmanConfig, TrackerError> {
        KalmanConfig::constant_velocity(dt_s, self.process_noise_q, self.measurement_sigma_cm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub room: RoomConfig,
    pub tracker: TrackerParams,
    pub probe_interval_ms: u64,
    pub probe_limit: u32,
    pub history_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            room: RoomConfig::default(),
            tracker: TrackerParams::default(),
            probe_interval_ms: 2_000,
            probe_limit: 3,
            history_capacity: DEFAULT_HISTORY_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "missed")]
pub enum ProbeStatus {
    Active,
    Probing(u32),
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub timestamp_ms: u64,
    pub estimate: PositionEstimate,
    pub filtered: Point3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub tracker_state: Option<KalmanState>,
    pub last_seen_ms: u64,
    pub missed_probes: u32,
    pub status: ProbeStatus,
    pub history: VecDeque<HistoryEntry>,
}

impl Session {
    fn new(session_id: &str) -> Self {
        Self {
            session_id: session_id.to_owned(),
            tracker_state: None,
            last_seen_ms: 0,
            missed_probes: 0,
            status: ProbeStatus::Active,
            history: VecDeque::new(),
        }
    }

    pub fn last_filtered(&self) -> Option<Point3> {
        self.history.back().map(|h| h.filtered)
    }
}

/// What one accepted packet produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub estimate: PositionEstimate,
    /// Kalman-smoothed horizontal position; z comes from the raw estimate.
    pub filtered: Point3,
    /// Where the filter expects the phone one nominal step later.
    pub prediction: Point3,
    /// Records whose coordinates were not in the registry.
    pub dropped: Vec<(u16, u16)>,
}

pub struct LightingServer {
    registry: LedRegistry,
    config: ServerConfig,
    sessions: BTreeMap<String, Session>,
    closed_positions: BTreeMap<String, Point3>,
}

impl LightingServer {
    pub fn new(registry: LedRegistry, config: ServerConfig) -> Self {
        Self {
            registry,
            config,
            sessions: BTreeMap::new(),
            closed_positions: BTreeMap::new(),
        }
    }

    pub fn registry(&self) -> &LedRegistry {
        &self.registry
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    /// Last position stored when a session was closed by probing.
    pub fn closed_position(&self, id: &str) -> Option<Point3> {
        self.closed_positions.get(id).copied()
    }

    /// Solves, filters and records one packet. A rejected packet leaves the
    /// session exactly as it was.
    pub fn ingest(&mut self, packet: &DetectionPacket) -> Result<IngestOutcome, ServerError> {
        let existing = self.sessions.get(&packet.session_id);
        if let Some(s) = existing {
            if s.status == ProbeStatus::Closed {
                return Err(ServerError::SessionClosed(packet.session_id.clone()));
            }
            if !s.history.is_empty() && packet.timestamp_ms <= s.last_seen_ms {
                return Err(ServerError::StaleTimestamp {
                    got: packet.timestamp_ms,
                    last: s.last_seen_ms,
                });
            }
        }
        if packet.records.is_empty() {
            return Err(ServerError::EmptyPacket);
        }

        let mut measurements = Vec::with_capacity(packet.records.len());
        let mut dropped = Vec::new();
        for (index, r) in packet.records.iter().enumerate() {
            if !(r.distance_mm.is_finite() && r.distance_mm > 0.0) {
                return Err(ServerError::BadDistance {
                    index,
                    value: r.distance_mm,
                });
            }
            match self.registry.lookup(r.x_cm, r.y_cm) {
                Some(led) => measurements.push(AnchorMeasurement::new(led.anchor, r.distance_mm / 10.0)),
                None => dropped.push((r.x_cm, r.y_cm)),
            }
        }
        if measurements.len() < 3 {
            return Err(ServerError::InsufficientAnchors {
                have: measurements.len(),
            });
        }

        let params = self.config.tracker;
        let mut session = existing
            .cloned()
            .unwrap_or_else(|| Session::new(&packet.session_id));
        let dt_s = match session.tracker_state {
            Some(_) => (packet.timestamp_ms - session.last_seen_ms) as f64 / 1000.0,
            None => params.nominal_dt_s,
        };
        let step = params.config(dt_s)?;
        let predicted = session.tracker_state.as_ref().map(|s| predict(s, &step));
        let prior = predicted.as_ref().map(|p| {
            let z = session.last_filtered().map_or(0.0, |f| f.z);
            Point3::new(p.x_vec[0], p.x_vec[1], z)
        });

        let estimate = estimate_position(&measurements, &self.config.room, prior.as_ref())?;
        if !self.config.room.contains_with_margin(&estimate.position, ROOM_MARGIN) {
            return Err(ServerError::OutOfBounds(estimate.position));
        }
        let fix = [estimate.position.x, estimate.position.y];
        let state = match predicted {
            Some(p) => update(&p, fix, &step)?,
            None => KalmanState::cold_start(fix, &step),
        };
        let ahead = predict(&state, &params.config(params.nominal_dt_s)?);
        let z = estimate.position.z;
        let filtered = Point3::new(state.x_vec[0], state.x_vec[1], z);
        let prediction = Point3::new(ahead.x_vec[0], ahead.x_vec[1], z);

        session.tracker_state = Some(state);
        session.last_seen_ms = packet.timestamp_ms;
        session.missed_probes = 0;
        session.status = ProbeStatus::Active;
        session.history.push_back(HistoryEntry {
            timestamp_ms: packet.timestamp_ms,
            estimate: estimate.clone(),
            filtered,
        });
        while session.history.len() > self.config.history_capacity {
            session.history.pop_front();
        }
        self.sessions.insert(packet.session_id.clone(), session);

        Ok(IngestOutcome {
            estimate,
            filtered,
            prediction,
            dropped,
        })
    }

    /// Liveness check at logical time `now_ms`. Each full probe interval of
    /// silence counts as one unanswered probe; reaching the limit closes the
    /// session and stores its last position.
    pub fn probe_tick(&mut self, session_id: &str, now_ms: u64) -> Result<ProbeStatus, ServerError> {
        let session = self
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| ServerError::UnknownSession(session_id.to_owned()))?;
        if session.status == ProbeStatus::Closed {
            return Ok(ProbeStatus::Closed);
        }
        let interval = self.config.probe_interval_ms.max(1);
        let missed = (now_ms.saturating_sub(session.last_seen_ms) / interval).min(self.config.probe_limit as u64) as u32;
        session.missed_probes = missed;
        session.status = if missed >= self.config.probe_limit {
            if let Some(p) = session.last_filtered() {
                self.closed_positions.insert(session_id.to_owned(), p);
            }
            ProbeStatus::Closed
        } else if missed > 0 {
            ProbeStatus::Probing(missed)
        } else {
            ProbeStatus::Active
        };
        Ok(session.status)
    }

    pub fn snapshot(&self, session_id: &str) -> Result<SessionSnapshot, ServerError> {
        let s = self
            .sessions
            .get(session_id)
            .ok_or_else(|| ServerError::UnknownSession(session_id.to_owned()))?;
        Ok(SessionSnapshot::from_session(s))
    }

    /// Feeds every packet in order, collecting each outcome.
    pub fn replay<'a, I>(&mut self, packets: I) -> Vec<Result<IngestOutcome, ServerError>>
    where
        I: IntoIterator<Item = &'a DetectionPacket>,
    {
        packets.into_iter().map(|p| self.ingest(p)).collect()
    }
}

/// Serialisable session record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSnapshot {
    pub version: u32,
    pub session_id: String,
    pub status: ProbeStatus,
    pub last_seen_ms: u64,
    pub missed_probes: u32,
    pub tracker_state: Option<KalmanState>,
    pub history: Vec<HistoryEntry>,
}

impl SessionSnapshot {
    pub fn from_session(s: &Session) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            session_id: s.session_id.clone(),
            status: s.status,
            last_seen_ms: s.last_seen_ms,
            missed_probes: s.missed_probes,
            tracker_state: s.tracker_state.clone(),
            history: s.history.iter().cloned().collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ServerError> {
        #[derive(Deserialize)]
        struct Head {
            version: u32,
        }
        let parse_err = |e: serde_json::Error| ServerError::Parse {
            line: e.line(),
            message: e.to_string(),
        };
        let head: Head = serde_json::from_str::<serde_json::Value>(text)
            .and_then(serde_json::from_value)
            .map_err(parse_err)?;
        if head.version != SNAPSHOT_VERSION {
            return Err(ServerError::SnapshotVersion(head.version));
        }
        serde_json::from_str(text).map_err(parse_err)
    }
}

/// Reads a packet log: one JSON packet per line, blank lines ignored.
pub fn read_packet_log<R: BufRead>(reader: R) -> Result<Vec<DetectionPacket>, ServerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ServerError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let packet = serde_json::from_str(&line).map_err(|e| ServerError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(packet);
    }
    Ok(out)
}

pub fn write_packet_log<W: Write>(mut writer: W, packets: &[DetectionPacket]) -> Result<(), ServerError> {
    for p in packets {
        let line = serde_json::to_string(p).expect("packet serialises");
        writeln!(writer, "{line}").map_err(|e| ServerError::Io(e.to_string()))?;
    }
    Ok(())
}
