//! Adaptive drawing canvas.
//!
//! A pointer moves over a grid of panels. Around it, nine ε-greedy bandits
//! propose colors for the Moore neighborhood; stepping onto a proposal inks
//! it, and the direction of each step rewards the bandits that proposed
//! colors on that side. Over a session the ring drifts toward the colors the
//! user keeps following.
//!
//! - [`grid`]: canvas state and neighborhood geometry
//! - [`learners`]: the bandit and the Q-learning update
//! - [`agent`]: the nine-bandit colorist and its reward rule
//! - [`session`]: the step loop, JSONL event log, and replay
//! - [`calibration`]: sensor-to-grid mapping and depth-to-opacity bands
//! - [`sim`]: simulated users and adaptation metrics
//! - [`service`]: live sessions and the client/server message protocol

pub mod agent;
pub mod calibration;
pub mod grid;
pub mod learners;
pub mod service;
pub mod session;
pub mod sim;

pub use agent::{classify_movement, ColoristAgent, Direction, Mode, Movement, Palette, RewardScheme};
pub use calibration::{calibrate, Calibration, PointerSample};
pub use grid::{moore_neighborhood, Cell, GridCanvas, GridDims, Offset, Opacity, PanelPaint};
pub use learners::{Bandit, QLearner};
pub use session::{replay, replay_log, Session, SessionConfig, SessionEvent, SessionLog};
