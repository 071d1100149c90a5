//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `ACCEPTANCE_DERIVE=1 cargo test -p colorist-core --release --test acceptance`
//! additionally reruns the simulation oracle behind the frozen adaptation
//! threshold and prints the percentile it was taken from.

use std::time::{Duration, Instant};

use colorist_core::agent::{ColoristAgent, Direction, Mode, RewardScheme};
use colorist_core::calibration::{calibrate, cell_center, PointerSample};
use colorist_core::grid::{Cell, GridDims, Opacity, MOORE_OFFSETS};
use colorist_core::learners::{Bandit, QLearner};
use colorist_core::session::{replay_log, Session, SessionConfig, SessionLog};
use colorist_core::sim::{
    run_experiment, run_session, ExperimentResult, ExperimentSpec, PolicyKind, PolicySpec,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

const TARGET_ARM: u8 = 7;
const REPETITIONS: u32 = 20;
const ITERATIONS: u32 = 500;
/// Minimum adaptive-over-random gain in trailing-window modal share.
const MIN_ADAPTATION_GAIN: f64 = 0.15;
/// 1st percentile of the gain over 100 independent 20-repetition oracle
/// runs (seed families 1_000_000 + 1000·f, f = 0..100); reproduce with
/// ACCEPTANCE_DERIVE=1.
const ORACLE_P1_GAIN: f64 = 0.1580;
/// Allowed distance of the random-mode modal share from the uniform baseline.
const RANDOM_SHARE_TOLERANCE: f64 = 0.03;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn check<F>(name: &'static str, budget_ms: u64, body: F) -> Outcome
where
    F: FnOnce() -> Result<String, String>,
{
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(body))
        .unwrap_or_else(|_| Err("panicked".to_string()));
    let elapsed = start.elapsed();
    let budget = Duration::from_millis(budget_ms);
    let (mut passed, mut detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if elapsed > budget {
        passed = false;
        detail = format!("{detail}; over time budget");
    }
    Outcome {
        name,
        passed,
        detail,
        elapsed,
        budget,
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn sample_average() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut worst: f64 = 0.0;
    for seq in 0..1000u64 {
        let len = (rng.next_u64() % 201) as usize;
        let mut bandit = Bandit::new(10, 0.2, seq, 0).map_err(|e| e.to_string())?;
        let mut history: Vec<Vec<f64>> = vec![Vec::new(); 10];
        for _ in 0..len {
            let arm = (rng.next_u64() % 10) as usize;
            let reward = if rng.next_u64() % 2 == 0 { 0.5 } else { 1.0 };
            bandit.update(arm, reward).map_err(|e| e.to_string())?;
            history[arm].push(reward);
        }
        for (arm, rewards) in history.iter().enumerate() {
            ensure(
                bandit.counts()[arm] == rewards.len() as u64,
                format!("count mismatch on sequence {seq}"),
            )?;
            if rewards.is_empty() {
                ensure(bandit.values()[arm] == 0.0, "unplayed arm moved")?;
                continue;
            }
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            let rel = ((bandit.values()[arm] - mean) / mean).abs();
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-12, format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn epsilon_rate() -> Result<String, String> {
    let mut bandit = Bandit::new(10, 0.2, 2024, 0).map_err(|e| e.to_string())?;
    bandit.update(4, 1.0).map_err(|e| e.to_string())?;
    let greedy = bandit.greedy_arm();
    ensure(greedy == 4, "argmax not unique at arm 4")?;
    let draws = 100_000;
    let off = (0..draws).filter(|_| bandit.select() != greedy).count();
    let fraction = off as f64 / draws as f64;
    ensure(
        (fraction - 0.18).abs() <= 0.01,
        format!("non-greedy fraction {fraction:.4}"),
    )?;
    Ok(format!("non-greedy fraction {fraction:.4} (expected 0.18 ± 0.01)"))
}

fn cell_strategy() -> impl Strategy<Value = (usize, usize)> + Clone {
    (0usize..24, 0usize..14)
}

fn reward_exactness() -> Result<String, String> {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let moves = prop::collection::vec((0u8..10, cell_strategy()), 1..60);
    let mut checked = 0usize;
    for scheme in [RewardScheme::Cone, RewardScheme::MovedOnto] {
        runner
            .run(&(any::<u64>(), moves.clone()), |(seed, moves)| {
                let mut session = Session::new(SessionConfig {
                    seed,
                    reward_scheme: scheme,
                    ..SessionConfig::default()
                })
                .unwrap();
                let mut cell = Cell::new(12, 7);
                let mut t = 0;
                session.step(cell, Opacity::MAX, t).unwrap();
                for (kind, jump) in moves {
                    // 0..8: one Moore step, 8: stay, 9: arbitrary jump
                    let next = match kind {
                        0..=7 => MOORE_OFFSETS[kind as usize]
                            .apply(cell, GridDims::default())
                            .unwrap_or(cell),
                        8 => cell,
                        _ => Cell::new(jump.0, jump.1),
                    };
                    t += 2000;
                    let event = session.step(next, Opacity::MAX, t).unwrap().clone();
                    let mut rewards: Vec<f64> = event.rewards.iter().map(|r| r.reward).collect();
                    rewards.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let stay = event.movement.unwrap().direction == Direction::Stay;
                    if stay {
                        prop_assert!(rewards.is_empty());
                    } else {
                        match scheme {
                            RewardScheme::Cone => prop_assert_eq!(rewards, vec![0.5, 0.5, 1.0]),
                            RewardScheme::MovedOnto => prop_assert_eq!(rewards.len(), 1),
                        }
                    }
                    cell = next;
                }
                Ok(())
            })
            .map_err(|e| format!("{scheme:?}: {e}"))?;
        checked += 64;
    }
    Ok(format!("{checked} random movement sequences across both schemes"))
}

fn adaptation_spec(seed: u64, mode: Mode) -> ExperimentSpec {
    let config = SessionConfig {
        mode,
        seed,
        iterations: ITERATIONS,
        ..SessionConfig::default()
    };
    let policy = PolicySpec::new(
        PolicyKind::HuePreferrer {
            target: TARGET_ARM,
            tolerance: PolicyKind::DEFAULT_HUE_TOLERANCE,
        },
        seed + 500,
    );
    ExperimentSpec::new(config, policy, REPETITIONS)
}

fn run_pair(seed: u64) -> Result<ExperimentResult, String> {
    run_experiment(&adaptation_spec(seed, Mode::Adaptive)).map_err(|e| e.to_string())
}

fn adaptation() -> Result<String, String> {
    let result = run_pair(0)?;
    let r = &result.report;
    let random = r.random_window_share.ok_or("no random control")?;
    let gain = r.mean_window_share - random;
    let bound = MIN_ADAPTATION_GAIN.max(ORACLE_P1_GAIN);
    ensure(
        gain >= bound,
        format!("adaptive {:.3} vs random {random:.3}: gain {gain:.3} < {bound:.3}", r.mean_window_share),
    )?;
    Ok(format!(
        "adaptive {:.3} vs random {random:.3}: gain {gain:.3} ≥ {bound:.3}",
        r.mean_window_share
    ))
}

fn random_null() -> Result<String, String> {
    let spec = adaptation_spec(0, Mode::Random);
    let result = run_experiment(&spec).map_err(|e| e.to_string())?;
    for run in &result.runs {
        let fresh = ColoristAgent::new(Mode::Random, RewardScheme::Cone, spec.config.epsilon, run.session.config().seed)
            .map_err(|e| e.to_string())?;
        ensure(
            run.session.agent().snapshot() == fresh.snapshot(),
            format!("bandits changed in random session {}", run.rep),
        )?;
    }
    let share = result.report.mean_window_share;
    let baseline = result.report.uniform_baseline;
    ensure(
        (share - baseline).abs() <= RANDOM_SHARE_TOLERANCE,
        format!("share {share:.4} vs baseline {baseline:.2}"),
    )?;
    Ok(format!(
        "{} sessions, bandits untouched; share {share:.4} vs baseline {baseline:.2}",
        result.runs.len()
    ))
}

fn calibration() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut unit = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    while accepted < 1000 {
        let pts: Vec<(f64, f64)> = (0..3).map(|_| (unit() * 600.0 - 300.0, unit() * 600.0 - 300.0)).collect();
        let area = 0.5
            * ((pts[1].0 - pts[0].0) * (pts[2].1 - pts[0].1) - (pts[2].0 - pts[0].0) * (pts[1].1 - pts[0].1));
        if area.abs() < 1.0 {
            continue;
        }
        let cells = [Cell::new(0, 0), Cell::new(23, 0), Cell::new(0, 13)];
        let pairs: [(PointerSample, Cell); 3] =
            std::array::from_fn(|i| (PointerSample::new(pts[i].0, pts[i].1, unit() * 50.0, 0), cells[i]));
        let cal = calibrate(&pairs, 200.0, true).map_err(|e| e.to_string())?;
        for (sample, cell) in &pairs {
            let (u, v) = cal.apply(sample.x, sample.y);
            let (cu, cv) = cell_center(*cell);
            worst = worst.max((u - cu).abs()).max((v - cv).abs());
        }
        let mid_t = unit();
        let collinear = [
            pairs[0],
            pairs[1],
            (
                PointerSample::new(
                    pts[0].0 + mid_t * (pts[1].0 - pts[0].0),
                    pts[0].1 + mid_t * (pts[1].1 - pts[0].1),
                    0.0,
                    0,
                ),
                cells[2],
            ),
        ];
        ensure(calibrate(&collinear, 200.0, true).is_err(), "collinear triple accepted")?;
        accepted += 1;
    }
    ensure(worst <= 1e-9, format!("correspondence error {worst:e}"))?;
    Ok(format!("1000 triangles, max error {worst:.2e}; collinear triples rejected"))
}

fn replay_determinism() -> Result<String, String> {
    let policies = [
        PolicyKind::HuePreferrer { target: 2, tolerance: 1 },
        PolicyKind::BrightestSeeker,
        PolicyKind::ContrastSeeker,
        PolicyKind::RandomWalker,
    ];
    (0..50u64).into_par_iter().try_for_each(|i| {
        let config = SessionConfig {
            seed: 9000 + i,
            mode: if i % 5 == 4 { Mode::Random } else { Mode::Adaptive },
            reward_scheme: if i % 2 == 0 { RewardScheme::Cone } else { RewardScheme::MovedOnto },
            ..SessionConfig::default()
        };
        let policy = PolicySpec::new(policies[(i % 4) as usize], 100 + i);
        let session = run_session(config, policy, Opacity::new(1 + (i % 4) as u8).unwrap())
            .map_err(|e| e.to_string())?;
        let log = SessionLog::parse(&session.log().to_jsonl()).map_err(|e| e.to_string())?;
        let replayed = replay_log(&log.config, &log).map_err(|e| format!("session {i}: {e}"))?;
        ensure(
            replayed.export_csv() == session.export_csv(),
            format!("grid differs in session {i}"),
        )?;
        ensure(
            replayed.agent().snapshot() == session.agent().snapshot(),
            format!("snapshot differs in session {i}"),
        )
    })?;
    Ok("50 sessions replayed byte-identically".into())
}

fn q_update_examples() -> Result<String, String> {
    let mut l: QLearner<u8, u8> = QLearner::new(0.5, 0.9).map_err(|e| e.to_string())?;
    let terminal = l.q_update(0, 0, 1.0, &1, &[]);
    ensure(terminal == 0.5, format!("terminal case gave {terminal}"))?;

    let mut l: QLearner<u8, u8> = QLearner::new(0.0, 0.9).map_err(|e| e.to_string())?;
    l.set_value(0, 0, 0.37);
    l.set_value(1, 2, 4.0);
    let frozen = l.q_update(0, 0, 10.0, &1, &[2]);
    ensure(frozen == 0.37, format!("alpha = 0 changed q to {frozen}"))?;

    let mut l: QLearner<u8, u8> = QLearner::new(0.1, 1.0).map_err(|e| e.to_string())?;
    l.set_value(0, 0, 0.2);
    l.set_value(1, 0, 0.5);
    l.set_value(1, 1, -0.3);
    let mixed = l.q_update(0, 0, 0.0, &1, &[0, 1]);
    ensure(mixed == 0.23, format!("mixed case gave {mixed}"))?;
    Ok("0.5, identity, 0.23".into())
}

/// Reruns the oracle behind `ORACLE_P1_GAIN`: 100 independent seed
/// families, linear-interpolated 1st percentile of the gain.
fn derive_threshold() {
    let mut gains: Vec<f64> = (0..100u64)
        .map(|f| {
            let r = run_pair(1_000_000 + 1000 * f).expect("oracle run").report;
            r.mean_window_share - r.random_window_share.expect("control")
        })
        .collect();
    gains.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = 0.01 * (gains.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let p1 = gains[lo] + (pos - lo as f64) * (gains[lo + 1] - gains[lo]);
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    println!(
        "oracle: min {:.4} p1 {p1:.4} mean {mean:.4} max {:.4}",
        gains[0],
        gains[gains.len() - 1]
    );
}

fn main() {
    if std::env::var_os("ACCEPTANCE_DERIVE").is_some() {
        derive_threshold();
    }
    let outcomes = [
        check("sample-average correctness", 1_000, sample_average),
        check("epsilon-greedy rate", 1_000, epsilon_rate),
        check("reward-scheme exactness", 1_000, reward_exactness),
        check("adaptation at full session scale", 30_000, adaptation),
        check("random-mode null result", 30_000, random_null),
        check("calibration", 1_000, calibration),
        check("replay determinism", 10_000, replay_determinism),
        check("q-update arithmetic", 1_000, q_update_examples),
    ];
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{} {:<34} {:>8.1?} / {:>5.0?}  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.elapsed,
            o.budget,
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
