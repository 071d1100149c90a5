//! The drawing session loop, its JSON-lines event log, and replay.
//!
//! Each step classifies the pointer move, rewards the previous round, inks
//! the cell moved onto, and proposes a new ring. The log header holds the
//! full [`SessionConfig`]; each event records the step's inputs along with
//! everything it produced, so replay can both rebuild and verify a session.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    classify_movement, AgentError, ColoristAgent, Direction, Mode, Movement, Palette,
    RewardApplied, RewardScheme,
};
use crate::grid::{Cell, GridCanvas, GridDims, GridError, InkOutcome, Offset, Opacity, PanelPaint};

pub const LOG_FORMAT: &str = "colorist-session/1";
pub const DEFAULT_ITERATIONS: u32 = 500;
pub const DEFAULT_DWELL_MS: u64 = 2000;
pub const DEFAULT_EPSILON: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session complete after {0} steps")]
    Complete(u32),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("timestamp {t_ms} precedes previous step at {prev_ms}")]
    TimeReversed { t_ms: u64, prev_ms: u64 },
    #[error("stay at {t_ms} ms before the {dwell_ms} ms dwell elapsed")]
    DwellNotElapsed { t_ms: u64, dwell_ms: u64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log integrity: {0}")]
    Integrity(String),
    #[error("malformed log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    pub seed: u64,
    pub iterations: u32,
    pub dims: GridDims,
    pub dwell_ms: u64,
    pub epsilon: f64,
    pub reward_scheme: RewardScheme,
    pub palette: Palette,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Adaptive,
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            dims: GridDims::default(),
            dwell_ms: DEFAULT_DWELL_MS,
            epsilon: DEFAULT_EPSILON,
            reward_scheme: RewardScheme::Cone,
            palette: Palette::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.iterations == 0 {
            return Err(SessionError::Config("iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(SessionError::Config(format!(
                "epsilon {} is not a probability",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A proposal as shown on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedPaint {
    pub offset: Offset,
    pub cell: Cell,
    pub arm: u8,
    pub opacity: Opacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InkRecord {
    pub cell: Cell,
    pub paint: PanelPaint,
}

/// Arm chosen by a bandit whose cell was off the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenArm {
    pub offset: Offset,
    pub arm: u8,
}

/// One step of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub step: u32,
    /// Pointer timestamp that triggered the step.
    pub t_ms: u64,
    pub center: Cell,
    pub opacity: Opacity,
    /// `None` on the first step.
    pub movement: Option<Movement>,
    pub rewards: Vec<RewardApplied>,
    pub inked: Option<InkRecord>,
    pub proposals: Vec<ProposedPaint>,
    pub hidden: Vec<HiddenArm>,
    pub center_arm: Option<u8>,
}

impl SessionEvent {
    pub fn is_reroll(&self) -> bool {
        matches!(
            self.movement,
            Some(Movement {
                direction: Direction::Stay,
                ..
            })
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header { format: String, config: SessionConfig },
    Event(SessionEvent),
    Snapshot { bandits: Vec<String> },
}

/// A parsed session log.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub config: SessionConfig,
    pub events: Vec<SessionEvent>,
    /// Final bandit snapshot, when the log was written by a finished session.
    pub snapshot: Option<Vec<String>>,
}

impl SessionLog {
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![LogLine::Header {
            format: LOG_FORMAT.to_string(),
            config: self.config.clone(),
        }];
        lines.extend(self.events.iter().cloned().map(LogLine::Event));
        if let Some(bandits) = &self.snapshot {
            lines.push(LogLine::Snapshot {
                bandits: bandits.clone(),
            });
        }
        let mut out = String::new();
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("log lines always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ReplayError> {
        let mut config = None;
        let mut events = Vec::new();
        let mut snapshot = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: LogLine =
                serde_json::from_str(raw).map_err(|source| ReplayError::Parse { line: i + 1, source })?;
            match line {
                LogLine::Header { format, config: c } => {
                    if i != 0 {
                        return Err(ReplayError::Integrity("header must be the first line".into()));
                    }
                    if format != LOG_FORMAT {
                        return Err(ReplayError::Integrity(format!("unknown log format {format:?}")));
                    }
                    config = Some(c);
                }
                LogLine::Event(e) => {
                    if config.is_none() {
                        return Err(ReplayError::Integrity("event before header".into()));
                    }
                    if snapshot.is_some() {
                        return Err(ReplayError::Integrity("event after snapshot".into()));
                    }
                    events.push(e);
                }
                LogLine::Snapshot { bandits } => {
                    if snapshot.replace(bandits).is_some() {
                        return Err(ReplayError::Integrity("duplicate snapshot".into()));
                    }
                }
            }
        }
        let config = config.ok_or_else(|| ReplayError::Integrity("missing header".into()))?;
        Ok(Self {
            config,
            events,
            snapshot,
        })
    }
}

/// A drawing session: canvas, agent, and the step log.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    canvas: GridCanvas,
    agent: ColoristAgent,
    center: Option<Cell>,
    events: Vec<SessionEvent>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let agent = ColoristAgent::new(config.mode, config.reward_scheme, config.epsilon, config.seed)?;
        Ok(Self {
            canvas: GridCanvas::new(config.dims),
            agent,
            center: None,
            events: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn canvas(&self) -> &GridCanvas {
        &self.canvas
    }

    pub fn agent(&self) -> &ColoristAgent {
        &self.agent
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn center(&self) -> Option<Cell> {
        self.center
    }

    pub fn steps_done(&self) -> u32 {
        self.events.len() as u32
    }

    pub fn is_complete(&self) -> bool {
        self.steps_done() >= self.config.iterations
    }

    /// Runs one iteration for the pointer now at `cell`. Pointing at the
    /// current center is a dwell re-roll and requires `dwell_ms` to have
    /// passed since the previous step.
    pub fn step(&mut self, cell: Cell, opacity: Opacity, t_ms: u64) -> Result<&SessionEvent, SessionError> {
        if self.is_complete() {
            return Err(SessionError::Complete(self.steps_done()));
        }
        self.config.dims.check(cell)?;
        if let Some(prev) = self.events.last() {
            if t_ms < prev.t_ms {
                return Err(SessionError::TimeReversed {
                    t_ms,
                    prev_ms: prev.t_ms,
                });
            }
            if self.center == Some(cell) && t_ms - prev.t_ms < self.config.dwell_ms {
                return Err(SessionError::DwellNotElapsed {
                    t_ms,
                    dwell_ms: self.config.dwell_ms,
                });
            }
        }

        let movement = self.center.map(|old| classify_movement(old, cell));
        let rewards = match &movement {
            Some(m) => self.agent.assign_rewards(m)?,
            None => Vec::new(),
        };
        let inked = match movement {
            Some(m) if m.direction != Direction::Stay => match self.canvas.ink_panel(cell) {
                InkOutcome::Inked(paint) => Some(InkRecord { cell, paint }),
                InkOutcome::NoProposal => None,
            },
            _ => None,
        };

        self.center = Some(cell);
        let shown = self.agent.propose(cell, self.config.dims)?;
        let paints: BTreeMap<Offset, PanelPaint> = shown
            .iter()
            .map(|(o, arm)| (*o, PanelPaint::new(*arm, opacity)))
            .collect();
        let placed = self.canvas.set_proposals(cell, &paints)?;
        let proposals = placed
            .into_iter()
            .map(|(c, paint)| ProposedPaint {
                offset: Offset::new(
                    (c.col as i64 - cell.col as i64) as i8,
                    (c.row as i64 - cell.row as i64) as i8,
                ),
                cell: c,
                arm: paint.arm,
                opacity,
            })
            .collect();
        let round = self.agent.last_round().expect("propose just ran");
        let hidden = round
            .moore
            .iter()
            .filter(|(o, _)| !shown.contains_key(o))
            .map(|(o, a)| HiddenArm { offset: *o, arm: *a })
            .collect();

        self.events.push(SessionEvent {
            step: self.steps_done(),
            t_ms,
            center: cell,
            opacity,
            movement,
            rewards,
            inked,
            proposals,
            hidden,
            center_arm: round.center,
        });
        Ok(self.events.last().expect("just pushed"))
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            config: self.config.clone(),
            events: self.events.clone(),
            snapshot: self.is_complete().then(|| self.agent.snapshot()),
        }
    }

    pub fn export_csv(&self) -> String {
        self.canvas.export_csv()
    }
}

/// Re-executes `events` under `config`, checking every regenerated event
/// against the recorded one.
pub fn replay(config: &SessionConfig, events: &[SessionEvent]) -> Result<Session, ReplayError> {
    let mut session = Session::new(config.clone())?;
    for (i, recorded) in events.iter().enumerate() {
        if recorded.step as usize != i {
            return Err(ReplayError::Integrity(format!(
                "event {i} carries step index {}",
                recorded.step
            )));
        }
        let produced = session.step(recorded.center, recorded.opacity, recorded.t_ms)?;
        if produced != recorded {
            return Err(ReplayError::Integrity(format!("step {i} diverges from the log")));
        }
    }
    Ok(session)
}

/// Replays a parsed log, requiring its header to match `config` and its
/// trailing bandit snapshot, if any, to match the replayed agent.
pub fn replay_log(config: &SessionConfig, log: &SessionLog) -> Result<Session, ReplayError> {
    if &log.config != config {
        return Err(ReplayError::Integrity("log header does not match config".into()));
    }
    let session = replay(config, &log.events)?;
    if let Some(expected) = &log.snapshot {
        if &session.agent().snapshot() != expected {
            return Err(ReplayError::Integrity("final bandit snapshot differs".into()));
        }
    }
    Ok(session)
}
