//! Tabular learning primitives: the k-armed ε-greedy bandit with
//! sample-average value estimates, and the one-step Q-learning update.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("a bandit needs at least one arm")]
    NoArms,
    #[error("arm {arm} out of range for a {k}-armed bandit")]
    ArmOutOfRange { arm: usize, k: usize },
    #[error("epsilon {0} is not a probability")]
    InvalidEpsilon(f64),
    #[error("{name} = {value} is outside [0, 1]")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("malformed bandit snapshot: {0}")]
    Snapshot(String),
}

/// Converts the top 53 bits of a draw into a uniform float in `[0, 1)`.
fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Maps a draw onto `0..n` by multiply-shift. One draw, no rejection loop,
/// so the number of words consumed never depends on the value.
pub(crate) fn index_below(bits: u64, n: usize) -> usize {
    ((u128::from(bits) * n as u128) >> 64) as usize
}

/// A k-armed ε-greedy bandit.
///
/// Every [`Bandit::select`] consumes exactly two 64-bit words from the
/// bandit's own ChaCha8 stream: one for the explore/exploit coin and one
/// for the exploratory arm, whether or not the coin asks for it. This keeps
/// the stream position a pure function of the number of selections.
#[derive(Debug, Clone)]
pub struct Bandit {
    q: Vec<f64>,
    n: Vec<u64>,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl Bandit {
    pub fn new(k: usize, epsilon: f64, seed: u64, stream: u64) -> Result<Self, LearnerError> {
        if k == 0 {
            return Err(LearnerError::NoArms);
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(LearnerError::InvalidEpsilon(epsilon));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            q: vec![0.0; k],
            n: vec![0; k],
            epsilon,
            rng,
        })
    }

    pub fn k(&self) -> usize {
        self.q.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn counts(&self) -> &[u64] {
        &self.n
    }

    /// Highest-valued arm; ties go to the lowest index.
    pub fn greedy_arm(&self) -> usize {
        let mut best = 0;
        for (arm, &value) in self.q.iter().enumerate().skip(1) {
            if value > self.q[best] {
                best = arm;
            }
        }
        best
    }

    /// ε-greedy selection. The exploration branch is uniform over all k
    /// arms, so the greedy arm comes up with probability `1 − ε + ε/k`.
    pub fn select(&mut self) -> usize {
        let coin = unit_f64(self.rng.next_u64());
        let explore = index_below(self.rng.next_u64(), self.k());
        if coin < self.epsilon {
            explore
        } else {
            self.greedy_arm()
        }
    }

    /// Sample-average update: `n += 1`, then `q += (r − q) / n`.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<(), LearnerError> {
        let k = self.k();
        if arm >= k {
            return Err(LearnerError::ArmOutOfRange { arm, k });
        }
        self.n[arm] += 1;
        self.q[arm] += (reward - self.q[arm]) / self.n[arm] as f64;
        Ok(())
    }

    /// Single-line `key=value` record of the full learner state, including
    /// the RNG position. Restoring it with [`Bandit::from_snapshot`] gives a
    /// bandit that makes the same future selections.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let seed: String = self
            .rng
            .get_seed()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        write!(
            out,
            "k={} epsilon={} seed={} stream={} word_pos={} q={} n={}",
            self.k(),
            self.epsilon,
            seed,
            self.rng.get_stream(),
            self.rng.get_word_pos(),
            join(&self.q),
            join(&self.n),
        )
        .expect("writing to a String cannot fail");
        out
    }

    pub fn from_snapshot(record: &str) -> Result<Self, LearnerError> {
        let bad = |what: &str| LearnerError::Snapshot(what.to_string());
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for pair in record.split_whitespace() {
            let (key, value) = pair.split_once('=').ok_or_else(|| bad(pair))?;
            fields.insert(key, value);
        }
        let get = |key: &str| fields.get(key).copied().ok_or_else(|| bad(key));

        let k: usize = get("k")?.parse().map_err(|_| bad("k"))?;
        let epsilon: f64 = get("epsilon")?.parse().map_err(|_| bad("epsilon"))?;
        let seed_hex = get("seed")?;
        if seed_hex.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let stream: u64 = get("stream")?.parse().map_err(|_| bad("stream"))?;
        let word_pos: u128 = get("word_pos")?.parse().map_err(|_| bad("word_pos"))?;
        let q: Vec<f64> = split(get("q")?).map_err(|_| bad("q"))?;
        let n: Vec<u64> = split(get("n")?).map_err(|_| bad("n"))?;
        if k == 0 {
            return Err(LearnerError::NoArms);
        }
        if q.len() != k || n.len() != k {
            return Err(bad("arm count mismatch"));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(LearnerError::InvalidEpsilon(epsilon));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { q, n, epsilon, rng })
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn split<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, T::Err> {
    s.split(',').map(str::parse).collect()
}

/// Tabular action values with the one-step Q-learning update. Pairs that
/// were never written read as zero.
#[derive(Debug, Clone)]
pub struct QLearner<S, A> {
    q: HashMap<(S, A), f64>,
    alpha: f64,
    gamma: f64,
}

impl<S, A> QLearner<S, A>
where
    S: Eq + Hash + Clone,
    A: Eq + Hash + Clone,
{
    /// `alpha` is the learning rate, `gamma` the discount on future value.
    pub fn new(alpha: f64, gamma: f64) -> Result<Self, LearnerError> {
        for (name, value) in [("alpha", alpha), ("gamma", gamma)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(LearnerError::InvalidRate { name, value });
            }
        }
        Ok(Self {
            q: HashMap::new(),
            alpha,
            gamma,
        })
    }

    pub fn value(&self, state: &S, action: &A) -> f64 {
        self.q
            .get(&(state.clone(), action.clone()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set_value(&mut self, state: S, action: A, value: f64) {
        self.q.insert((state, action), value);
    }

    /// `Q(s,a) += α [r + γ max_a' Q(s',a') − Q(s,a)]`. An empty
    /// `next_actions` marks `s'` terminal and contributes zero. Returns the
    /// new `Q(s,a)`.
    pub fn q_update(
        &mut self,
        state: S,
        action: A,
        reward: f64,
        next_state: &S,
        next_actions: &[A],
    ) -> f64 {
        let next_max = next_actions
            .iter()
            .map(|a| self.value(next_state, a))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0);
        let entry = self.q.entry((state, action)).or_insert(0.0);
        *entry += self.alpha * (reward + self.gamma * next_max - *entry);
        *entry
    }
}
