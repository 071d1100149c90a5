//! Live sessions driven by pointer samples: calibration, cell-level
//! debouncing, dwell timing, and the wire messages exchanged with a client.
//!
//! This module holds no transport. A server feeds it decoded
//! [`ClientMessage`]s and ships back the [`ServerEnvelope`]s it returns.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Mode, Palette, RewardScheme};
use crate::calibration::{calibrate, Calibration, PointerSample, DEFAULT_Z_SPAN};
use crate::grid::{Cell, GridDims, PanelPaint};
use crate::session::{
    ProposedPaint, Session, SessionConfig, SessionError, DEFAULT_DWELL_MS, DEFAULT_EPSILON,
    DEFAULT_ITERATIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibrating,
    Drawing,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    MalformedConfig,
    NoSession,
    PhaseMismatch,
    CalibrationFailed,
    BadSample,
    NotComplete,
}

#[derive(Debug, Error)]
#[error("{code:?}: {text}")]
pub struct ServiceError {
    pub code: ErrorCode,
    pub text: String,
}

impl ServiceError {
    pub fn new(code: ErrorCode, text: impl Into<String>) -> Self {
        Self {
            code,
            text: text.into(),
        }
    }
}

/// Session settings a client may send. Missing fields take service
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionRequest {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub iterations: Option<u32>,
    pub dims: Option<GridDims>,
    pub dwell_ms: Option<u64>,
    pub epsilon: Option<f64>,
    pub reward_scheme: Option<RewardScheme>,
    /// Stored calibration; when present the session skips calibration.
    pub calibration: Option<Calibration>,
    pub z_span: Option<f64>,
    pub behind_positive: Option<bool>,
    /// Ignore the service's stored calibration and run the corner flow.
    pub recalibrate: Option<bool>,
}

/// Service-wide defaults, set from the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceDefaults {
    pub dwell_ms: u64,
    pub epsilon: f64,
    pub iterations: u32,
    /// Calibration loaded from disk, shared by every session of this setup.
    pub calibration: Option<Calibration>,
}

impl Default for ServiceDefaults {
    fn default() -> Self {
        Self {
            dwell_ms: DEFAULT_DWELL_MS,
            epsilon: DEFAULT_EPSILON,
            iterations: DEFAULT_ITERATIONS,
            calibration: None,
        }
    }
}

impl SessionRequest {
    pub fn resolve(&self, defaults: &ServiceDefaults) -> Result<SessionConfig, ServiceError> {
        let config = SessionConfig {
            mode: self.mode.unwrap_or(Mode::Adaptive),
            seed: self.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0),
            iterations: self.iterations.unwrap_or(defaults.iterations),
            dims: self.dims.unwrap_or_default(),
            dwell_ms: self.dwell_ms.unwrap_or(defaults.dwell_ms),
            epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            reward_scheme: self.reward_scheme.unwrap_or_default(),
            palette: Palette::default(),
        };
        config
            .validate()
            .map_err(|e| ServiceError::new(ErrorCode::MalformedConfig, e.to_string()))?;
        if let Some(span) = self.z_span {
            if !(span.is_finite() && span > 0.0) {
                return Err(ServiceError::new(ErrorCode::MalformedConfig, "z_span must be positive"));
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    StartSession { config: SessionRequest },
    CalibrationPoint { sample: PointerSample, corner: Cell },
    PointerMove { sample: PointerSample },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// A fresh ring after a move (or the first pointer sample).
    Proposals {
        step: u32,
        center: Cell,
        paints: Vec<ProposedPaint>,
    },
    Inked { cell: Cell, paint: PanelPaint },
    /// A fresh ring after the pointer dwelled in place.
    Reroll {
        step: u32,
        center: Cell,
        paints: Vec<ProposedPaint>,
    },
    SessionStats {
        step: u32,
        mode: Mode,
        phase: Phase,
        calibration_points: usize,
    },
    Error { code: ErrorCode, text: String },
}

/// A server message with its routing header. `seq` is gapless per session
/// starting at 0. Errors raised before a session exists carry no id and
/// `seq` 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    pub session_id: Option<String>,
    pub seq: u64,
    #[serde(flatten)]
    pub message: ServerMessage,
}

impl ServerEnvelope {
    pub fn orphan_error(code: ErrorCode, text: impl Into<String>) -> Self {
        Self {
            session_id: None,
            seq: 0,
            message: ServerMessage::Error {
                code,
                text: text.into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub config: SessionConfig,
    pub phase: Phase,
}

/// One live session. All mutation goes through [`LiveSession::handle`] in
/// arrival order; dwell timing reads sample timestamps only.
#[derive(Debug, Clone)]
pub struct LiveSession {
    handle: SessionHandle,
    session: Session,
    calibration: Option<Calibration>,
    corners: Vec<(PointerSample, Cell)>,
    z_span: f64,
    behind_positive: bool,
    seq: u64,
    last_sample_ms: Option<u64>,
}

impl LiveSession {
    pub fn start(
        id: String,
        request: &SessionRequest,
        defaults: &ServiceDefaults,
    ) -> Result<(Self, Vec<ServerEnvelope>), ServiceError> {
        let config = request.resolve(defaults)?;
        let session = Session::new(config.clone())
            .map_err(|e| ServiceError::new(ErrorCode::MalformedConfig, e.to_string()))?;
        let calibration = match (request.calibration, request.recalibrate) {
            (Some(cal), _) => Some(cal),
            (None, Some(true)) => None,
            (None, _) => defaults.calibration,
        };
        let phase = if calibration.is_some() {
            Phase::Drawing
        } else {
            Phase::Calibrating
        };
        let mut live = Self {
            handle: SessionHandle { id, config, phase },
            session,
            calibration,
            corners: Vec::with_capacity(3),
            z_span: request.z_span.unwrap_or(DEFAULT_Z_SPAN),
            behind_positive: request.behind_positive.unwrap_or(true),
            seq: 0,
            last_sample_ms: None,
        };
        let stats = live.stats();
        let out = vec![live.envelope(stats)];
        Ok((live, out))
    }

    pub fn handle_ref(&self) -> &SessionHandle {
        &self.handle
    }

    pub fn id(&self) -> &str {
        &self.handle.id
    }

    pub fn phase(&self) -> Phase {
        self.handle.phase
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    /// Next sequence number to be assigned.
    pub fn next_seq(&self) -> u64 {
        self.seq
    }

    fn envelope(&mut self, message: ServerMessage) -> ServerEnvelope {
        let env = ServerEnvelope {
            session_id: Some(self.handle.id.clone()),
            seq: self.seq,
            message,
        };
        self.seq += 1;
        env
    }

    fn stats(&self) -> ServerMessage {
        ServerMessage::SessionStats {
            step: self.session.steps_done(),
            mode: self.handle.config.mode,
            phase: self.handle.phase,
            calibration_points: self.corners.len(),
        }
    }

    /// Applies one client message. Failures come back as an `Error` message
    /// in the returned list; the session state is left as it was.
    pub fn handle(&mut self, message: ClientMessage) -> Vec<ServerEnvelope> {
        let result = match message {
            ClientMessage::StartSession { .. } => Err(ServiceError::new(
                ErrorCode::BadMessage,
                "session already started on this connection",
            )),
            ClientMessage::CalibrationPoint { sample, corner } => self.calibration_point(sample, corner),
            ClientMessage::PointerMove { sample } => self.ingest_pointer(sample),
        };
        match result {
            Ok(messages) => messages.into_iter().map(|m| self.envelope(m)).collect(),
            Err(e) => vec![self.envelope(ServerMessage::Error {
                code: e.code,
                text: e.text,
            })],
        }
    }

    /// Emits an error on this session's sequence, e.g. for an undecodable
    /// frame.
    pub fn handle_error(&mut self, code: ErrorCode, text: impl Into<String>) -> ServerEnvelope {
        self.envelope(ServerMessage::Error {
            code,
            text: text.into(),
        })
    }

    fn calibration_point(&mut self, sample: PointerSample, corner: Cell) -> Result<Vec<ServerMessage>, ServiceError> {
        if self.handle.phase != Phase::Calibrating {
            return Err(ServiceError::new(ErrorCode::PhaseMismatch, "not calibrating"));
        }
        if !self.handle.config.dims.contains(corner) {
            return Err(ServiceError::new(ErrorCode::BadSample, format!("corner {corner} off the grid")));
        }
        self.corners.push((sample, corner));
        if self.corners.len() == 3 {
            let pairs: [(PointerSample, Cell); 3] =
                std::mem::take(&mut self.corners).try_into().expect("three corners");
            let cal = calibrate(&pairs, self.z_span, self.behind_positive)
                .map_err(|e| ServiceError::new(ErrorCode::CalibrationFailed, e.to_string()))?;
            self.calibration = Some(cal);
            self.handle.phase = Phase::Drawing;
        }
        Ok(vec![self.stats()])
    }

    /// Maps a sample to a cell. A new cell runs a movement step; the same
    /// cell held for the dwell threshold runs a re-roll step; anything else
    /// only advances the dwell clock.
    pub fn ingest_pointer(&mut self, sample: PointerSample) -> Result<Vec<ServerMessage>, ServiceError> {
        if self.handle.phase != Phase::Drawing {
            return Err(ServiceError::new(
                ErrorCode::PhaseMismatch,
                format!("pointer input during {:?}", self.handle.phase),
            ));
        }
        if let Some(prev) = self.last_sample_ms {
            if sample.t_ms < prev {
                return Err(ServiceError::new(ErrorCode::BadSample, "sample timestamp went backwards"));
            }
        }
        let cal = self.calibration.expect("drawing phase has a calibration");
        let dims = self.handle.config.dims;
        let cell = cal.to_cell(&sample, dims);
        let opacity = cal.z_to_opacity(sample.z);
        self.last_sample_ms = Some(sample.t_ms);

        let reroll = match (self.session.center(), self.session.events().last()) {
            (Some(center), Some(last)) if center == cell => {
                if sample.t_ms - last.t_ms < self.handle.config.dwell_ms {
                    return Ok(Vec::new());
                }
                true
            }
            _ => false,
        };
        let event = self
            .session
            .step(cell, opacity, sample.t_ms)
            .map_err(|e| match e {
                SessionError::Complete(_) => ServiceError::new(ErrorCode::PhaseMismatch, e.to_string()),
                other => ServiceError::new(ErrorCode::BadSample, other.to_string()),
            })?;

        let mut out = Vec::with_capacity(3);
        if let Some(ink) = event.inked {
            out.push(ServerMessage::Inked {
                cell: ink.cell,
                paint: ink.paint,
            });
        }
        let (step, center, paints) = (event.step, event.center, event.proposals.clone());
        out.push(if reroll {
            ServerMessage::Reroll { step, center, paints }
        } else {
            ServerMessage::Proposals { step, center, paints }
        });
        if self.session.is_complete() {
            self.handle.phase = Phase::Complete;
            out.push(self.stats());
        }
        Ok(out)
    }

    /// The JSONL event log and the CSV grid dump of a finished session.
    pub fn export(&self) -> Result<(String, String), ServiceError> {
        if self.handle.phase != Phase::Complete {
            return Err(ServiceError::new(ErrorCode::NotComplete, "session still running"));
        }
        Ok((self.session.log().to_jsonl(), self.session.export_csv()))
    }
}

/// Thread-safe map of live sessions. Each session sits behind its own lock
/// so different sessions proceed independently.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    defaults: ServiceDefaults,
    sessions: Mutex<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

impl SessionRegistry {
    pub fn new(defaults: ServiceDefaults) -> Self {
        Self {
            defaults,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn defaults(&self) -> &ServiceDefaults {
        &self.defaults
    }

    fn map(&self) -> MutexGuard<'_, HashMap<String, Arc<Mutex<LiveSession>>>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn start_session(
        &self,
        request: &SessionRequest,
    ) -> Result<(Arc<Mutex<LiveSession>>, Vec<ServerEnvelope>), ServiceError> {
        let id = uuid::Uuid::new_v4().to_string();
        let (live, out) = LiveSession::start(id.clone(), request, &self.defaults)?;
        let live = Arc::new(Mutex::new(live));
        self.map().insert(id, Arc::clone(&live));
        Ok((live, out))
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<LiveSession>>> {
        self.map().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.map().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map().is_empty()
    }

    pub fn export(&self, id: &str) -> Result<(String, String), ServiceError> {
        let live = self
            .get(id)
            .ok_or_else(|| ServiceError::new(ErrorCode::NoSession, format!("no session {id}")))?;
        let guard = live.lock().unwrap_or_else(|p| p.into_inner());
        guard.export()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::cell_center;

    fn identity_cal() -> Calibration {
        Calibration {
            affine: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            z_ref: 0.0,
            z_span: 200.0,
            behind_positive: true,
        }
    }

    fn at(cell: Cell, t_ms: u64) -> PointerSample {
        let (x, y) = cell_center(cell);
        PointerSample::new(x, y, 100.0, t_ms)
    }

    fn drawing(iterations: u32) -> LiveSession {
        let req = SessionRequest {
            seed: Some(5),
            iterations: Some(iterations),
            calibration: Some(identity_cal()),
            ..SessionRequest::default()
        };
        LiveSession::start("s".into(), &req, &ServiceDefaults::default()).unwrap().0
    }

    #[test]
    fn start_phases() {
        let defaults = ServiceDefaults::default();
        let (live, out) = LiveSession::start("a".into(), &SessionRequest::default(), &defaults).unwrap();
        assert_eq!(live.phase(), Phase::Calibrating);
        assert_eq!(out[0].seq, 0);
        assert_eq!(drawing(10).phase(), Phase::Drawing);
        let bad = SessionRequest {
            iterations: Some(0),
            ..SessionRequest::default()
        };
        let err = LiveSession::start("b".into(), &bad, &defaults).unwrap_err();
        assert_eq!(err.code, ErrorCode::MalformedConfig);
    }

    #[test]
    fn stored_calibration_skips_corner_flow() {
        let defaults = ServiceDefaults {
            calibration: Some(identity_cal()),
            ..ServiceDefaults::default()
        };
        let (live, _) = LiveSession::start("e".into(), &SessionRequest::default(), &defaults).unwrap();
        assert_eq!(live.phase(), Phase::Drawing);
        let again = SessionRequest {
            recalibrate: Some(true),
            ..SessionRequest::default()
        };
        let (live, _) = LiveSession::start("f".into(), &again, &defaults).unwrap();
        assert_eq!(live.phase(), Phase::Calibrating);
    }

    #[test]
    fn calibration_flow() {
        let defaults = ServiceDefaults::default();
        let (mut live, _) = LiveSession::start("c".into(), &SessionRequest::default(), &defaults).unwrap();
        let out = live.handle(ClientMessage::PointerMove {
            sample: at(Cell::new(1, 1), 0),
        });
        assert!(matches!(
            out[0].message,
            ServerMessage::Error {
                code: ErrorCode::PhaseMismatch,
                ..
            }
        ));
        for (i, corner) in [Cell::new(0, 0), Cell::new(23, 0), Cell::new(0, 13)].into_iter().enumerate() {
            let sample = PointerSample::new(corner.col as f64 * 10.0, corner.row as f64 * 10.0, 50.0, i as u64);
            live.handle(ClientMessage::CalibrationPoint { sample, corner });
        }
        assert_eq!(live.phase(), Phase::Drawing);
        let cal = live.calibration().unwrap();
        assert_eq!(cal.to_cell(&PointerSample::new(230.0, 0.0, 0.0, 0), GridDims::default()), Cell::new(23, 0));
    }

    #[test]
    fn degenerate_calibration_restarts_collection() {
        let defaults = ServiceDefaults::default();
        let (mut live, _) = LiveSession::start("d".into(), &SessionRequest::default(), &defaults).unwrap();
        let mut last = Vec::new();
        for (i, corner) in [Cell::new(0, 0), Cell::new(23, 0), Cell::new(0, 13)].into_iter().enumerate() {
            let sample = PointerSample::new(i as f64, i as f64, 0.0, 0);
            last = live.handle(ClientMessage::CalibrationPoint { sample, corner });
        }
        assert!(matches!(
            last[0].message,
            ServerMessage::Error {
                code: ErrorCode::CalibrationFailed,
                ..
            }
        ));
        assert_eq!(live.phase(), Phase::Calibrating);
        assert!(live.corners.is_empty());
    }

    #[test]
    fn move_then_dwell() {
        let mut live = drawing(10);
        let out = live.handle(ClientMessage::PointerMove {
            sample: at(Cell::new(5, 5), 0),
        });
        assert!(matches!(out[0].message, ServerMessage::Proposals { step: 0, .. }));

        let out = live.handle(ClientMessage::PointerMove {
            sample: at(Cell::new(5, 4), 300),
        });
        assert!(matches!(out[0].message, ServerMessage::Inked { .. }));
        assert!(matches!(out[1].message, ServerMessage::Proposals { step: 1, .. }));

        // same cell, dwell not yet elapsed
        assert!(live
            .handle(ClientMessage::PointerMove {
                sample: at(Cell::new(5, 4), 2000)
            })
            .is_empty());
        let out = live.handle(ClientMessage::PointerMove {
            sample: at(Cell::new(5, 4), 2300),
        });
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0].message, ServerMessage::Reroll { step: 2, .. }));
    }

    #[test]
    fn completion_and_export() {
        let mut live = drawing(3);
        assert_eq!(live.export().unwrap_err().code, ErrorCode::NotComplete);
        let mut last = Vec::new();
        for (i, col) in [5, 6, 7].into_iter().enumerate() {
            last = live.handle(ClientMessage::PointerMove {
                sample: at(Cell::new(col, 5), i as u64 * 100),
            });
        }
        assert!(matches!(
            last.last().unwrap().message,
            ServerMessage::SessionStats {
                step: 3,
                phase: Phase::Complete,
                ..
            }
        ));
        let (log, grid) = live.export().unwrap();
        assert_eq!(log.lines().count(), 1 + 3 + 1);
        assert_eq!(grid.lines().count(), 14);
        let out = live.handle(ClientMessage::PointerMove {
            sample: at(Cell::new(8, 5), 1000),
        });
        assert!(matches!(out[0].message, ServerMessage::Error { .. }));
    }

    #[test]
    fn backwards_time_is_rejected_without_side_effects() {
        let mut live = drawing(10);
        live.handle(ClientMessage::PointerMove {
            sample: at(Cell::new(5, 5), 500),
        });
        let before = live.session().steps_done();
        let out = live.handle(ClientMessage::PointerMove {
            sample: at(Cell::new(6, 5), 100),
        });
        assert!(matches!(
            out[0].message,
            ServerMessage::Error {
                code: ErrorCode::BadSample,
                ..
            }
        ));
        assert_eq!(live.session().steps_done(), before);
    }

    #[test]
    fn wire_format_is_tagged_json() {
        let msg: ClientMessage = serde_json::from_str(
            r#"{"type":"pointer_move","sample":{"x":1.5,"y":2.5,"z":0.0,"t_ms":17}}"#,
        )
        .unwrap();
        assert_eq!(
            msg,
            ClientMessage::PointerMove {
                sample: PointerSample::new(1.5, 2.5, 0.0, 17)
            }
        );
        let start: ClientMessage =
            serde_json::from_str(r#"{"type":"start_session","config":{"mode":"random","seed":3}}"#).unwrap();
        assert!(matches!(start, ClientMessage::StartSession { .. }));
        assert!(serde_json::from_str::<ClientMessage>(
            r#"{"type":"start_session","config":{"colour":"red"}}"#
        )
        .is_err());

        let env = ServerEnvelope::orphan_error(ErrorCode::NoSession, "x");
        let text = serde_json::to_string(&env).unwrap();
        assert_eq!(
            text,
            r#"{"session_id":null,"seq":0,"type":"error","code":"no_session","text":"x"}"#
        );
        assert!(!text.contains('\n'));
    }

    #[test]
    fn registry_isolates_sessions() {
        let reg = SessionRegistry::new(ServiceDefaults::default());
        let (a, _) = reg.start_session(&SessionRequest::default()).unwrap();
        let (b, _) = reg.start_session(&SessionRequest::default()).unwrap();
        assert_eq!(reg.len(), 2);
        let ida = a.lock().unwrap().id().to_string();
        assert_ne!(ida, b.lock().unwrap().id());
        assert_eq!(reg.export(&ida).unwrap_err().code, ErrorCode::NotComplete);
        assert_eq!(reg.export("nope").unwrap_err().code, ErrorCode::NoSession);
    }
}
