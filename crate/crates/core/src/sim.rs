//! Headless experiments: simulated users drive sessions, and the logs are
//! reduced to color-group adaptation metrics.

use std::fmt;
use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Mode, Palette, PALETTE_SIZE};
use crate::grid::{Cell, Opacity};
use crate::learners::index_below;
use crate::session::{ProposedPaint, Session, SessionConfig, SessionError, SessionEvent};

pub const DEFAULT_STAY_PROBABILITY: f64 = 0.05;
pub const DEFAULT_WINDOW: usize = 100;
/// Simulated time between a proposal and the user's next move.
pub const MOVE_INTERVAL_MS: u64 = 400;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("adaptation metric needs a non-empty log")]
    EmptyLog,
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("bad policy {0:?}: expected hue:<arm>[:<tolerance>], brightest, contrast or random")]
    Policy(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How a simulated user picks the next cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Moves to the proposal closest to `target`. When nothing lies within
    /// `tolerance` arms of it, waits for a re-roll instead.
    HuePreferrer { target: u8, tolerance: u8 },
    /// Moves to the most luminous proposal.
    BrightestSeeker,
    /// Moves to the proposal farthest from the ring's mean arm.
    ContrastSeeker,
    /// Moves to a uniformly random proposal.
    RandomWalker,
}

impl PolicyKind {
    pub const DEFAULT_HUE_TOLERANCE: u8 = 1;
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SimError::Policy(s.to_string());
        let mut parts = s.split(':');
        let kind = match parts.next() {
            Some("hue") => {
                let target: u8 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let tolerance = match parts.next() {
                    Some(t) => t.parse().map_err(|_| bad())?,
                    None => Self::DEFAULT_HUE_TOLERANCE,
                };
                if usize::from(target) >= PALETTE_SIZE {
                    return Err(bad());
                }
                PolicyKind::HuePreferrer { target, tolerance }
            }
            Some("brightest") => PolicyKind::BrightestSeeker,
            Some("contrast") => PolicyKind::ContrastSeeker,
            Some("random") => PolicyKind::RandomWalker,
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(kind)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::HuePreferrer { target, tolerance } => write!(f, "hue:{target}:{tolerance}"),
            PolicyKind::BrightestSeeker => f.write_str("brightest"),
            PolicyKind::ContrastSeeker => f.write_str("contrast"),
            PolicyKind::RandomWalker => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub stay_probability: f64,
    pub seed: u64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, seed: u64) -> Self {
        Self {
            kind,
            stay_probability: DEFAULT_STAY_PROBABILITY,
            seed,
        }
    }
}

/// A simulated user. Each decision consumes exactly two draws from its own
/// stream (stay coin, uniform pick), whichever branch is taken.
#[derive(Debug, Clone)]
pub struct SimUser {
    kind: PolicyKind,
    stay_probability: f64,
    palette: Palette,
    rng: ChaCha8Rng,
}

impl SimUser {
    pub fn new(spec: PolicySpec, palette: Palette) -> Self {
        Self {
            kind: spec.kind,
            stay_probability: spec.stay_probability,
            palette,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Picks the next pointer cell given the visible proposal ring.
    /// Returning `current` means the user holds still for a re-roll.
    pub fn next_cell(&mut self, proposals: &[ProposedPaint], current: Cell) -> Cell {
        let coin = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let pick = self.rng.next_u64();
        if proposals.is_empty() || coin < self.stay_probability {
            return current;
        }
        let chosen = match self.kind {
            PolicyKind::RandomWalker => Some(&proposals[index_below(pick, proposals.len())]),
            PolicyKind::HuePreferrer { target, tolerance } => {
                let distance = |p: &ProposedPaint| i32::from(p.arm).abs_diff(i32::from(target));
                best_by(proposals, |p| -(distance(p) as f64))
                    .filter(|p| distance(p) <= u32::from(tolerance))
            }
            PolicyKind::BrightestSeeker => {
                best_by(proposals, |p| self.palette.luminance(usize::from(p.arm)))
            }
            PolicyKind::ContrastSeeker => {
                let mean = proposals.iter().map(|p| f64::from(p.arm)).sum::<f64>()
                    / proposals.len() as f64;
                best_by(proposals, |p| (f64::from(p.arm) - mean).abs())
            }
        };
        chosen.map_or(current, |p| p.cell)
    }
}

/// Highest-scoring proposal. Ties prefer orthogonal neighbors, then the
/// earlier Moore offset.
fn best_by<F>(proposals: &[ProposedPaint], score: F) -> Option<&ProposedPaint>
where
    F: Fn(&ProposedPaint) -> f64,
{
    let rank = |p: &ProposedPaint| (!p.offset.is_von_neumann(), p.offset.moore_index());
    proposals.iter().fold(None, |best, p| match best {
        None => Some(p),
        Some(b) => {
            let (sp, sb) = (score(p), score(b));
            if sp > sb || (sp == sb && rank(p) < rank(b)) {
                Some(p)
            } else {
                Some(b)
            }
        }
    })
}

/// Runs one full session with a simulated user starting mid-grid.
pub fn run_session(config: SessionConfig, policy: PolicySpec, opacity: Opacity) -> Result<Session, SimError> {
    let mut user = SimUser::new(policy, config.palette.clone());
    let dims = config.dims;
    let dwell = config.dwell_ms;
    let mut session = Session::new(config)?;
    let mut cell = Cell::new(dims.width() / 2, dims.height() / 2);
    let mut t_ms = 0;
    session.step(cell, opacity, t_ms)?;
    while !session.is_complete() {
        let proposals = &session.events().last().expect("stepped at least once").proposals;
        let next = user.next_cell(proposals, cell);
        t_ms += if next == cell { dwell } else { MOVE_INTERVAL_MS };
        cell = next;
        session.step(cell, opacity, t_ms)?;
    }
    Ok(session)
}

/// Contiguous arm ranges treated as one color family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorGroups(Vec<Range<u8>>);

impl Default for ColorGroups {
    /// Blue `0..4`, middle `4..7`, red `7..10`.
    fn default() -> Self {
        Self(vec![0..4, 4..7, 7..10])
    }
}

impl ColorGroups {
    /// Groups must be non-empty, contiguous, and cover every arm exactly once.
    pub fn new(groups: Vec<Range<u8>>) -> Result<Self, SimError> {
        let mut next = 0u8;
        for g in &groups {
            if g.start != next || g.end <= g.start {
                return Err(SimError::Spec(format!("color groups not contiguous at {g:?}")));
            }
            next = g.end;
        }
        if usize::from(next) != PALETTE_SIZE {
            return Err(SimError::Spec("color groups must cover all arms".into()));
        }
        Ok(Self(groups))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn group_of(&self, arm: u8) -> usize {
        self.0
            .iter()
            .position(|g| g.contains(&arm))
            .expect("groups cover all arms")
    }

    pub fn group(&self, index: usize) -> Range<u8> {
        self.0[index].clone()
    }

    /// Expected modal-group share under uniform proposals, ignoring sampling
    /// noise: the largest group's fraction of the palette.
    pub fn uniform_baseline(&self) -> f64 {
        let largest = self.0.iter().map(|g| g.len()).max().unwrap_or(0);
        largest as f64 / PALETTE_SIZE as f64
    }
}

/// Share of a set of arms falling in its most frequent color group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: usize,
    pub share: f64,
    pub count: usize,
}

fn modal_share(groups: &ColorGroups, arms: impl Iterator<Item = u8>) -> GroupShare {
    let mut counts = vec![0usize; groups.len()];
    for arm in arms {
        counts[groups.group_of(arm)] += 1;
    }
    let total: usize = counts.iter().sum();
    let (group, &best) = counts
        .iter()
        .enumerate()
        .fold((0, &0), |acc, (i, c)| if *c > *acc.1 { (i, c) } else { acc });
    GroupShare {
        group,
        share: if total == 0 { 0.0 } else { best as f64 / total as f64 },
        count: total,
    }
}

/// Color-group concentration of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationMetric {
    pub steps: usize,
    /// All shown proposals.
    pub proposals: GroupShare,
    /// Proposals in the trailing window.
    pub window: GroupShare,
    /// Panels painted at the end of the session.
    pub inked: GroupShare,
    /// Final paint per arm; sums to the painted-panel count.
    pub inked_histogram: [usize; PALETTE_SIZE],
    /// Per step, the share of its proposals in the overall modal group.
    pub concentration: Vec<f64>,
}

pub fn adaptation_metric(
    events: &[SessionEvent],
    groups: &ColorGroups,
    window: usize,
) -> Result<AdaptationMetric, SimError> {
    if events.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let shown = |evs: &[SessionEvent]| {
        evs.iter()
            .flat_map(|e| e.proposals.iter().map(|p| p.arm))
            .collect::<Vec<_>>()
    };
    let proposals = modal_share(groups, shown(events).into_iter());
    let tail = &events[events.len().saturating_sub(window)..];
    let window = modal_share(groups, shown(tail).into_iter());

    let mut final_paint = std::collections::BTreeMap::new();
    for ink in events.iter().filter_map(|e| e.inked) {
        final_paint.insert(ink.cell, ink.paint.arm);
    }
    let mut inked_histogram = [0usize; PALETTE_SIZE];
    for arm in final_paint.values() {
        inked_histogram[usize::from(*arm)] += 1;
    }
    let inked = modal_share(groups, final_paint.values().copied());

    let concentration = events
        .iter()
        .map(|e| {
            if e.proposals.is_empty() {
                return 0.0;
            }
            let hits = e
                .proposals
                .iter()
                .filter(|p| groups.group_of(p.arm) == proposals.group)
                .count();
            hits as f64 / e.proposals.len() as f64
        })
        .collect();

    Ok(AdaptationMetric {
        steps: events.len(),
        proposals,
        window,
        inked,
        inked_histogram,
        concentration,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub groups: ColorGroups,
    pub window: usize,
    /// Also run every repetition in random mode with the same seeds.
    pub compare_random: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            groups: ColorGroups::default(),
            window: DEFAULT_WINDOW,
            compare_random: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Repetition `r` runs with session seed `config.seed + r`.
    pub config: SessionConfig,
    /// Repetition `r` runs with user seed `policy.seed + r`.
    pub policy: PolicySpec,
    pub repetitions: u32,
    pub opacity: Opacity,
    pub metrics: MetricsConfig,
}

impl ExperimentSpec {
    pub fn new(config: SessionConfig, policy: PolicySpec, repetitions: u32) -> Self {
        Self {
            config,
            policy,
            repetitions,
            opacity: Opacity::MAX,
            metrics: MetricsConfig::default(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.repetitions == 0 {
            return Err(SimError::Spec("repetitions must be at least 1".into()));
        }
        if self.metrics.window == 0 {
            return Err(SimError::Spec("window must be at least 1".into()));
        }
        self.config.validate()?;
        Ok(())
    }

    fn rep_inputs(&self, rep: u32, mode: Mode) -> (SessionConfig, PolicySpec) {
        let config = SessionConfig {
            mode,
            seed: self.config.seed.wrapping_add(u64::from(rep)),
            ..self.config.clone()
        };
        let policy = PolicySpec {
            seed: self.policy.seed.wrapping_add(u64::from(rep)),
            ..self.policy
        };
        (config, policy)
    }
}

/// One finished repetition.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub rep: u32,
    pub session: Session,
    pub metric: AdaptationMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub rep: u32,
    pub seed: u64,
    pub mode: Mode,
    pub metric: AdaptationMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub mode: Mode,
    pub policy: String,
    pub sessions: Vec<SessionSummary>,
    /// Mean trailing-window modal share across repetitions.
    pub mean_window_share: f64,
    pub mean_proposal_share: f64,
    pub uniform_baseline: f64,
    /// Mean trailing-window share of the random-mode runs, if run.
    pub random_window_share: Option<f64>,
    /// `mean_window_share − random_window_share`.
    pub random_delta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: AdaptationReport,
    pub runs: Vec<SessionRun>,
    pub baseline_runs: Vec<SessionRun>,
}

fn run_mode(spec: &ExperimentSpec, mode: Mode) -> Result<Vec<SessionRun>, SimError> {
    (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| {
            let (config, policy) = spec.rep_inputs(rep, mode);
            let session = run_session(config, policy, spec.opacity)?;
            let metric = adaptation_metric(session.events(), &spec.metrics.groups, spec.metrics.window)?;
            Ok(SessionRun { rep, session, metric })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every repetition, plus the random-mode control when requested and
/// the experiment itself is adaptive.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, SimError> {
    spec.validate()?;
    let mode = spec.config.mode;
    let runs = run_mode(spec, mode)?;
    let baseline_runs = if spec.metrics.compare_random && mode == Mode::Adaptive {
        run_mode(spec, Mode::Random)?
    } else {
        Vec::new()
    };

    let window_share = |runs: &[SessionRun]| mean(runs.iter().map(|r| r.metric.window.share));
    let mean_window_share = window_share(&runs);
    let random_window_share = match mode {
        Mode::Random => Some(mean_window_share),
        Mode::Adaptive if !baseline_runs.is_empty() => Some(window_share(&baseline_runs)),
        Mode::Adaptive => None,
    };
    let report = AdaptationReport {
        mode,
        policy: spec.policy.kind.to_string(),
        sessions: runs
            .iter()
            .map(|r| SessionSummary {
                rep: r.rep,
                seed: r.session.config().seed,
                mode,
                metric: r.metric.clone(),
            })
            .collect(),
        mean_window_share,
        mean_proposal_share: mean(runs.iter().map(|r| r.metric.proposals.share)),
        uniform_baseline: spec.metrics.groups.uniform_baseline(),
        random_window_share,
        random_delta: random_window_share.map(|r| mean_window_share - r),
    };
    Ok(ExperimentResult {
        report,
        runs,
        baseline_runs,
    })
}

/// CSV table with one row per session (adaptive and control runs).
pub fn metrics_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(
        "rep,seed,mode,steps,painted,proposal_group,proposal_share,window_group,window_share,inked_group,inked_share\n",
    );
    for run in result.runs.iter().chain(&result.baseline_runs) {
        let m = &run.metric;
        let mode = match run.session.config().mode {
            Mode::Adaptive => "adaptive",
            Mode::Random => "random",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{},{:.6},{},{:.6}\n",
            run.rep,
            run.session.config().seed,
            mode,
            m.steps,
            m.inked.count,
            m.proposals.group,
            m.proposals.share,
            m.window.group,
            m.window.share,
            m.inked.group,
            m.inked.share,
        ));
    }
    out
}

/// Writes `session_NNN.jsonl`, `grid_NNN.csv` (with a `random_` prefix for
/// control runs), `metrics.csv`, and `report.json` into `dir`.
pub fn write_experiment(result: &ExperimentResult, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    for (prefix, runs) in [("", &result.runs), ("random_", &result.baseline_runs)] {
        for run in runs {
            fs::write(
                dir.join(format!("{prefix}session_{:03}.jsonl", run.rep)),
                run.session.log().to_jsonl(),
            )?;
            fs::write(
                dir.join(format!("{prefix}grid_{:03}.csv", run.rep)),
                run.session.export_csv(),
            )?;
        }
    }
    fs::write(dir.join("metrics.csv"), metrics_csv(result))?;
    let report = serde_json::to_string_pretty(&result.report).map_err(io::Error::other)?;
    fs::write(dir.join("report.json"), report)?;
    Ok(())
}
