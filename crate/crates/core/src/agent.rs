//! The colorist agent: one ε-greedy bandit per neighborhood position, each
//! choosing one of ten palette colors, rewarded from the direction the user
//! moves next.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridDims, GridError, Offset, MOORE_OFFSETS};
use crate::learners::{index_below, Bandit, LearnerError};

/// Arms per bandit.
pub const PALETTE_SIZE: usize = 10;
/// Reward for the bandit straight ahead of a move.
pub const CARDINAL_REWARD: f64 = 1.0;
/// Reward for a diagonal bandit.
pub const DIAGONAL_REWARD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("rewards already assigned for this round; propose first")]
    NoPendingRound,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("invalid palette: {0}")]
    Palette(String),
    #[error("bandit snapshot does not match agent layout: {0}")]
    Snapshot(String),
}

/// Ten hues running from blue (arm 0) to red (arm 9) at full saturation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPalette")]
pub struct Palette {
    hues: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPalette {
    hues: Vec<f64>,
}

impl TryFrom<RawPalette> for Palette {
    type Error = AgentError;

    fn try_from(raw: RawPalette) -> Result<Self, Self::Error> {
        Palette::from_hues(raw.hues)
    }
}

impl Default for Palette {
    fn default() -> Self {
        let last = (PALETTE_SIZE - 1) as f64;
        let hues = (0..PALETTE_SIZE)
            .map(|i| 240.0 - 240.0 * i as f64 / last)
            .collect();
        Self { hues }
    }
}

impl Palette {
    /// Hues in degrees; must be ten values strictly decreasing within
    /// `[0, 360)` so the palette runs blue-to-red without wrapping.
    pub fn from_hues(hues: Vec<f64>) -> Result<Self, AgentError> {
        if hues.len() != PALETTE_SIZE {
            return Err(AgentError::Palette(format!(
                "expected {PALETTE_SIZE} hues, got {}",
                hues.len()
            )));
        }
        if hues.iter().any(|h| !(0.0..360.0).contains(h)) {
            return Err(AgentError::Palette("hue outside [0, 360)".into()));
        }
        if hues.windows(2).any(|w| w[1] >= w[0]) {
            return Err(AgentError::Palette("hues must strictly decrease".into()));
        }
        Ok(Self { hues })
    }

    pub fn len(&self) -> usize {
        self.hues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hues.is_empty()
    }

    pub fn hue(&self, arm: usize) -> f64 {
        self.hues[arm]
    }

    pub fn hues(&self) -> &[f64] {
        &self.hues
    }

    /// Linear RGB in `[0, 1]` for `arm` (HSV with S = V = 1).
    pub fn rgb(&self, arm: usize) -> [f64; 3] {
        let h = self.hues[arm] / 60.0;
        let x = 1.0 - (h % 2.0 - 1.0).abs();
        match h as u32 {
            0 => [1.0, x, 0.0],
            1 => [x, 1.0, 0.0],
            2 => [0.0, 1.0, x],
            3 => [0.0, x, 1.0],
            4 => [x, 0.0, 1.0],
            _ => [1.0, 0.0, x],
        }
    }

    pub fn hex(&self, arm: usize) -> String {
        let [r, g, b] = self.rgb(arm).map(|c| (c * 255.0).round() as u8);
        format!("#{r:02x}{g:02x}{b:02x}")
    }

    /// Rec. 709 relative luminance.
    pub fn luminance(&self, arm: usize) -> f64 {
        let [r, g, b] = self.rgb(arm);
        0.2126 * r + 0.7152 * g + 0.0722 * b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Adaptive,
    Random,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "random" => Ok(Mode::Random),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Which bandits a move rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardScheme {
    /// The bandit in the movement direction gets 1.0, the two diagonals
    /// flanking it get 0.5 each.
    #[default]
    Cone,
    /// Only the bandit whose cell was moved onto: 1.0 if orthogonal,
    /// 0.5 if diagonal.
    MovedOnto,
}

impl std::str::FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cone" => Ok(RewardScheme::Cone),
            "moved-onto" => Ok(RewardScheme::MovedOnto),
            other => Err(format!("unknown reward scheme {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
    Stay,
}

impl Direction {
    /// Unit offset of a cardinal direction; `None` for `Stay`.
    pub fn unit(&self) -> Option<Offset> {
        match self {
            Direction::Left => Some(Offset::LEFT),
            Direction::Right => Some(Offset::RIGHT),
            Direction::Up => Some(Offset::UP),
            Direction::Down => Some(Offset::DOWN),
            Direction::Stay => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Movement {
    pub direction: Direction,
    /// Raw `(dc, dr)` grid delta between the two pointer cells.
    pub raw_offset: (i64, i64),
}

impl Movement {
    /// The Moore offset on the path toward the new cell.
    pub fn step_offset(&self) -> Option<Offset> {
        let (dc, dr) = self.raw_offset;
        let step = Offset::new(dc.signum() as i8, dr.signum() as i8);
        (step != Offset::CENTER).then_some(step)
    }
}

/// Quantizes a pointer move to a direction by its dominant axis. Equal
/// non-zero components resolve to the horizontal direction.
pub fn classify_movement(old: Cell, new: Cell) -> Movement {
    let dc = new.col as i64 - old.col as i64;
    let dr = new.row as i64 - old.row as i64;
    let direction = if dc == 0 && dr == 0 {
        Direction::Stay
    } else if dc.abs() >= dr.abs() {
        if dc > 0 {
            Direction::Right
        } else {
            Direction::Left
        }
    } else if dr > 0 {
        Direction::Down
    } else {
        Direction::Up
    };
    Movement {
        direction,
        raw_offset: (dc, dr),
    }
}

/// Offsets rewarded for `movement` with their reward values.
pub fn reward_targets(scheme: RewardScheme, movement: &Movement) -> Vec<(Offset, f64)> {
    let Some(unit) = movement.direction.unit() else {
        return Vec::new();
    };
    match scheme {
        RewardScheme::Cone => {
            let (a, b) = if unit.dc != 0 {
                (Offset::new(unit.dc, -1), Offset::new(unit.dc, 1))
            } else {
                (Offset::new(-1, unit.dr), Offset::new(1, unit.dr))
            };
            vec![
                (unit, CARDINAL_REWARD),
                (a, DIAGONAL_REWARD),
                (b, DIAGONAL_REWARD),
            ]
        }
        RewardScheme::MovedOnto => movement
            .step_offset()
            .map(|o| {
                let reward = if o.is_von_neumann() {
                    CARDINAL_REWARD
                } else {
                    DIAGONAL_REWARD
                };
                vec![(o, reward)]
            })
            .unwrap_or_default(),
    }
}

/// One bandit update applied after a move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardApplied {
    pub offset: Offset,
    pub arm: u8,
    pub reward: f64,
}

/// Every arm chosen in one proposal round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Round {
    /// Moore selections, including offsets that fall off the grid.
    pub moore: BTreeMap<Offset, u8>,
    /// Choice of the center bandit (adaptive mode only).
    pub center: Option<u8>,
}

/// Bandit slot order: the eight Moore offsets, then the center.
fn slots() -> impl Iterator<Item = Offset> {
    MOORE_OFFSETS.into_iter().chain(std::iter::once(Offset::CENTER))
}

/// Nine 10-armed bandits keyed by neighborhood offset.
///
/// In adaptive mode all nine bandits select every round, including those
/// whose cell is off the grid; only in-bounds choices are shown. In random
/// mode a separate stream supplies uniform colors and no bandit is touched.
#[derive(Debug, Clone)]
pub struct ColoristAgent {
    bandits: BTreeMap<Offset, Bandit>,
    mode: Mode,
    scheme: RewardScheme,
    random_rng: ChaCha8Rng,
    pending: Option<Round>,
    last_round: Option<Round>,
    rounds: u64,
}

impl ColoristAgent {
    /// Bandit `i` (in Moore order, center last) draws from stream `i + 1`
    /// of the session seed; random mode uses stream 0.
    pub fn new(mode: Mode, scheme: RewardScheme, epsilon: f64, seed: u64) -> Result<Self, AgentError> {
        let bandits = slots()
            .enumerate()
            .map(|(i, offset)| {
                Bandit::new(PALETTE_SIZE, epsilon, seed, i as u64 + 1).map(|b| (offset, b))
            })
            .collect::<Result<_, _>>()?;
        let mut random_rng = ChaCha8Rng::seed_from_u64(seed);
        random_rng.set_stream(0);
        Ok(Self {
            bandits,
            mode,
            scheme,
            random_rng,
            pending: None,
            last_round: None,
            rounds: 0,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn reward_scheme(&self) -> RewardScheme {
        self.scheme
    }

    pub fn bandit(&self, offset: Offset) -> Option<&Bandit> {
        self.bandits.get(&offset)
    }

    pub fn bandits(&self) -> impl Iterator<Item = (Offset, &Bandit)> {
        self.bandits.iter().map(|(o, b)| (*o, b))
    }

    pub fn bandit_count(&self) -> usize {
        self.bandits.len()
    }

    /// Proposal rounds completed.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn last_round(&self) -> Option<&Round> {
        self.last_round.as_ref()
    }

    pub fn has_pending_round(&self) -> bool {
        self.pending.is_some()
    }

    /// Chooses a color for every in-bounds Moore cell around `center`.
    pub fn propose(&mut self, center: Cell, dims: GridDims) -> Result<BTreeMap<Offset, u8>, AgentError> {
        dims.check(center)?;
        let mut round = Round::default();
        match self.mode {
            Mode::Adaptive => {
                for (offset, bandit) in self.bandits.iter_mut() {
                    let arm = bandit.select() as u8;
                    if *offset == Offset::CENTER {
                        round.center = Some(arm);
                    } else {
                        round.moore.insert(*offset, arm);
                    }
                }
            }
            Mode::Random => {
                for offset in MOORE_OFFSETS {
                    if offset.apply(center, dims).is_some() {
                        let arm = index_below(self.random_rng.next_u64(), PALETTE_SIZE) as u8;
                        round.moore.insert(offset, arm);
                    }
                }
            }
        }
        let shown = round
            .moore
            .iter()
            .filter(|(o, _)| o.apply(center, dims).is_some())
            .map(|(o, a)| (*o, *a))
            .collect();
        self.pending = Some(round.clone());
        self.last_round = Some(round);
        self.rounds += 1;
        Ok(shown)
    }

    /// Rewards the bandits of the last round for `movement`. Bandits outside
    /// the reward set are not updated at all. Random mode never updates.
    pub fn assign_rewards(&mut self, movement: &Movement) -> Result<Vec<RewardApplied>, AgentError> {
        let round = self.pending.take().ok_or(AgentError::NoPendingRound)?;
        if self.mode == Mode::Random {
            return Ok(Vec::new());
        }
        let mut applied = Vec::with_capacity(3);
        for (offset, reward) in reward_targets(self.scheme, movement) {
            let Some(&arm) = round.moore.get(&offset) else {
                continue;
            };
            let bandit = self
                .bandits
                .get_mut(&offset)
                .expect("every Moore offset has a bandit");
            bandit.update(arm as usize, reward)?;
            applied.push(RewardApplied { offset, arm, reward });
        }
        Ok(applied)
    }

    /// One `offset=dc,dr <bandit record>` line per bandit, in slot order.
    pub fn snapshot(&self) -> Vec<String> {
        slots()
            .map(|o| format!("offset={o} {}", self.bandits[&o].snapshot()))
            .collect()
    }

    /// Overwrites bandit state from [`ColoristAgent::snapshot`] lines.
    pub fn restore_bandits(&mut self, lines: &[String]) -> Result<(), AgentError> {
        if lines.len() != self.bandits.len() {
            return Err(AgentError::Snapshot(format!(
                "expected {} bandits, got {}",
                self.bandits.len(),
                lines.len()
            )));
        }
        for (offset, line) in slots().zip(lines) {
            let expected = format!("offset={offset} ");
            let record = line
                .strip_prefix(&expected)
                .ok_or_else(|| AgentError::Snapshot(format!("expected {expected:?}")))?;
            self.bandits.insert(offset, Bandit::from_snapshot(record)?);
        }
        Ok(())
    }
}
