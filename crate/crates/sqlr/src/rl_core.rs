//! Tabular short-term-memory Q-learning engine shared by both agents.
//!
//! The value update is mean-like with a hard forgetting factor. With n counting
//! the current episode (n >= 1) and Δ = R' − Q:
//!
//! ```text
//! Q <- (1/n) * (Δ + (n-1)·Q)
//! ```
//!
//! Its fixed point under a stationary target R' is R'/2, not R'; the halving is
//! uniform across actions and preserves action ordering, so policies are
//! unaffected. The learning target R' = r + γ·max_a Q(S', a) folds the next
//! state's value into the stored one.
//!
//! Exploration uses a per-state schedule ε(i) = 1 − i/M (floored at ε_min, and
//! ε_min outright once i ≥ M) combined with weighted-fair guided exploration:
//! with probability 1−ε the argmax is exploited; otherwise an action is sampled
//! with probability proportional to Ψ_a·(1 − tanh(n_a/i)), where
//! Ψ_a = Q(s,a) + Σ_j |Q(s,j)| is a non-negative shift of the values and the
//! tanh weight steers the sampler toward less-visited actions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const QTABLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("no permissible action")]
    EmptyActionSet,
    #[error("q-table io: {0}")]
    Io(#[from] std::io::Error),
    #[error("q-table json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("q-table version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("q-table state-key encoding {found:?}, expected {expected:?}")]
    EncodingMismatch { found: String, expected: String },
}

/// Per-state exploration schedule: M statistically significant visits, floor ε_min.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ExplorationParams {
    pub m_visits: u64,
    pub eps_min: f64,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        ExplorationParams {
            m_visits: 100,
            eps_min: 0.01,
        }
    }
}

impl ExplorationParams {
    /// ε(i) = 1 − i/M while i < M, ε_min afterwards. The pre-M branch is floored
    /// at ε_min so the schedule stays non-increasing when 1/M < ε_min.
    pub fn epsilon(&self, i: u64) -> f64 {
        if i >= self.m_visits {
            self.eps_min
        } else {
            (1.0 - i as f64 / self.m_visits as f64).max(self.eps_min)
        }
    }

    /// A state is converged once its ε has reached the floor.
    pub fn converged(&self, i: u64) -> bool {
        i >= self.m_visits
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LearningParams {
    pub gamma: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams { gamma: 0.9 }
    }
}

/// Learning target: immediate reward plus the discounted best next-state value.
pub fn discounted_target(r: f64, gamma: f64, max_next_q: f64) -> f64 {
    r + gamma * max_next_q
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
struct Cell {
    q: f64,
    n: u64,
}

#[derive(Debug, Clone)]
struct StateEntry<A: Ord> {
    i: u64,
    actions: BTreeMap<A, Cell>,
}

impl<A: Ord> Default for StateEntry<A> {
    fn default() -> Self {
        StateEntry {
            i: 0,
            actions: BTreeMap::new(),
        }
    }
}

/// Q-value table keyed by (state, action), with per-pair and per-state visit counts.
#[derive(Debug, Clone)]
pub struct QTable<S: Ord + Clone, A: Ord + Clone> {
    states: BTreeMap<S, StateEntry<A>>,
}

impl<S: Ord + Clone, A: Ord + Clone> Default for QTable<S, A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Ord + Clone, A: Ord + Clone> QTable<S, A> {
    pub fn new() -> Self {
        QTable {
            states: BTreeMap::new(),
        }
    }

    pub fn q(&self, s: &S, a: &A) -> f64 {
        self.states
            .get(s)
            .and_then(|e| e.actions.get(a))
            .map(|c| c.q)
            .unwrap_or(0.0)
    }

    pub fn pair_visits(&self, s: &S, a: &A) -> u64 {
        self.states
            .get(s)
            .and_then(|e| e.actions.get(a))
            .map(|c| c.n)
            .unwrap_or(0)
    }

    pub fn state_visits(&self, s: &S) -> u64 {
        self.states.get(s).map(|e| e.i).unwrap_or(0)
    }

    /// Sets a value without recording a visit (used for diagonal initialization).
    pub fn set_q(&mut self, s: S, a: A, q: f64) {
        let entry = self.states.entry(s).or_default();
        entry.actions.entry(a).or_default().q = q;
    }

    /// Largest stored value over the given actions; absent pairs read as 0.
    pub fn max_q(&self, s: &S, actions: &[A]) -> f64 {
        actions
            .iter()
            .map(|a| self.q(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
            .max(if actions.is_empty() {
                0.0
            } else {
                f64::NEG_INFINITY
            })
    }

    /// Argmax over the given actions, ties broken by lowest action key.
    /// Absent pairs read as 0.
    pub fn argmax(&self, s: &S, actions: &[A]) -> Option<A> {
        let mut best: Option<(A, f64)> = None;
        for a in actions {
            let q = self.q(s, a);
            let better = match &best {
                None => true,
                Some((ba, bq)) => q > *bq || (q == *bq && a < ba),
            };
            if better {
                best = Some((a.clone(), q));
            }
        }
        best.map(|(a, _)| a)
    }

    /// Mean-style update toward R', counting the current episode: n = visits + 1,
    /// Δ = R' − Q, Q <- (Δ + (n−1)Q)/n. Increments both visit counters.
    /// Returns the new value.
    pub fn update_q(&mut self, s: &S, a: &A, r_prime: f64) -> f64 {
        let entry = self.states.entry(s.clone()).or_default();
        let cell = entry.actions.entry(a.clone()).or_default();
        let n = cell.n + 1;
        let delta = r_prime - cell.q;
        cell.q = (delta + (n - 1) as f64 * cell.q) / n as f64;
        cell.n = n;
        entry.i += 1;
        cell.q
    }

    /// Visited states (state_visits >= 1) and how many of them are converged.
    pub fn convergence_counts(&self, expl: &ExplorationParams) -> (usize, usize) {
        let visited = self.states.values().filter(|e| e.i > 0).count();
        let converged = self
            .states
            .values()
            .filter(|e| e.i > 0 && expl.converged(e.i))
            .count();
        (visited, converged)
    }

    /// Fraction of unique visited states whose ε has reached ε_min.
    pub fn convergence_fraction(&self, expl: &ExplorationParams) -> f64 {
        let (visited, converged) = self.convergence_counts(expl);
        if visited == 0 {
            0.0
        } else {
            converged as f64 / visited as f64
        }
    }

    pub fn states(&self) -> impl Iterator<Item = &S> {
        self.states.keys()
    }
}

/// Weighted-fair exploration distribution over L actions.
///
/// Ψ_a = q_a + Σ|q_j| shifts values to be non-negative; the probability is
/// proportional to Ψ_a·(1 − tanh(n_a/i)). All-zero Ψ (or i = 0) falls back to
/// the uniform distribution.
pub fn selection_distribution(q_values: &[f64], pair_visits: &[u64], i: u64) -> Vec<f64> {
    let l = q_values.len();
    assert_eq!(l, pair_visits.len());
    assert!(l >= 1, "selection over an empty action set");
    let uniform = vec![1.0 / l as f64; l];
    let sum_abs: f64 = q_values.iter().map(|q| q.abs()).sum();
    if i == 0 || sum_abs == 0.0 {
        return uniform;
    }
    let weights: Vec<f64> = q_values
        .iter()
        .zip(pair_visits)
        .map(|(&q, &n)| {
            let psi = q + sum_abs;
            debug_assert!(psi >= 0.0);
            psi * (1.0 - (n as f64 / i as f64).tanh())
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return uniform;
    }
    weights.into_iter().map(|w| w / total).collect()
}

impl<S: Ord + Clone, A: Ord + Clone> QTable<S, A> {
    /// ε-greedy choice over the permissible actions: exploit the argmax with
    /// probability 1−ε(i(s)), otherwise sample from the weighted-fair
    /// distribution. Draws exactly one or two uniforms from `rng`.
    pub fn choose_action<R: Rng>(
        &self,
        s: &S,
        actions: &[A],
        expl: &ExplorationParams,
        rng: &mut R,
    ) -> Result<A, RlError> {
        if actions.is_empty() {
            return Err(RlError::EmptyActionSet);
        }
        let i = self.state_visits(s);
        let eps = expl.epsilon(i);
        if rng.random::<f64>() >= eps {
            return Ok(self.argmax(s, actions).expect("non-empty actions"));
        }
        let qs: Vec<f64> = actions.iter().map(|a| self.q(s, a)).collect();
        let ns: Vec<u64> = actions.iter().map(|a| self.pair_visits(s, a)).collect();
        let probs = selection_distribution(&qs, &ns, i);
        let draw = rng.random::<f64>();
        let mut acc = 0.0;
        for (a, p) in actions.iter().zip(&probs) {
            acc += p;
            if draw < acc {
                return Ok(a.clone());
            }
        }
        Ok(actions.last().unwrap().clone())
    }
}

#[derive(Serialize, Deserialize)]
struct QTableFile<S, A> {
    version: u32,
    state_key: String,
    entries: Vec<(S, A, f64, u64)>,
    state_visits: Vec<(S, u64)>,
}

impl<S, A> QTable<S, A>
where
    S: Ord + Clone + Serialize + DeserializeOwned,
    A: Ord + Clone + Serialize + DeserializeOwned,
{
    /// Serializes as a versioned JSON document. `encoding` names the state-key
    /// layout and is checked on load.
    pub fn save(&self, encoding: &str, path: &Path) -> Result<(), RlError> {
        let file = QTableFile {
            version: QTABLE_FORMAT_VERSION,
            state_key: encoding.to_string(),
            entries: self
                .states
                .iter()
                .flat_map(|(s, e)| {
                    e.actions
                        .iter()
                        .map(move |(a, c)| (s.clone(), a.clone(), c.q, c.n))
                })
                .collect(),
            state_visits: self.states.iter().map(|(s, e)| (s.clone(), e.i)).collect(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &file)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Loads a table saved by [`QTable::save`]; version or encoding mismatch is an error.
    pub fn load(path: &Path, expected_encoding: &str) -> Result<Self, RlError> {
        let file: QTableFile<S, A> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.version != QTABLE_FORMAT_VERSION {
            return Err(RlError::VersionMismatch {
                found: file.version,
                expected: QTABLE_FORMAT_VERSION,
            });
        }
        if file.state_key != expected_encoding {
            return Err(RlError::EncodingMismatch {
                found: file.state_key,
                expected: expected_encoding.to_string(),
            });
        }
        let mut table = QTable::new();
        for (s, i) in file.state_visits {
            table.states.entry(s).or_insert_with(StateEntry::default).i = i;
        }
        for (s, a, q, n) in file.entries {
            let entry = table.states.entry(s).or_insert_with(StateEntry::default);
            entry.actions.insert(a, Cell { q, n });
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Reference oracle: the plain fixed-rate update Q <- αR' + (1−α)Q with
    // α = 1/n, i.e. the incremental average. The short-term-memory rule is
    // deliberately different; its fixed point halves the target.
    fn incremental_average(r_prime: f64, n_total: u64) -> f64 {
        let mut q = 0.0;
        for n in 1..=n_total {
            let alpha = 1.0 / n as f64;
            q = alpha * r_prime + (1.0 - alpha) * q;
        }
        q
    }

    // tanh via exp, independent of f64::tanh.
    fn tanh_ref(z: f64) -> f64 {
        let e = (2.0 * z).exp();
        (e - 1.0) / (e + 1.0)
    }

    #[test]
    fn epsilon_schedule() {
        let e = ExplorationParams {
            m_visits: 100,
            eps_min: 0.01,
        };
        assert_eq!(e.epsilon(0), 1.0);
        assert_eq!(e.epsilon(50), 0.5);
        assert_eq!(e.epsilon(100), 0.01);
        assert_eq!(e.epsilon(10_000), 0.01);
        assert!(!e.converged(99));
        assert!(e.converged(100));
    }

    #[test]
    fn update_examples() {
        let mut t: QTable<u32, u32> = QTable::new();
        // First visit: n=1, Δ=5, Q <- 5.
        assert_eq!(t.update_q(&0, &0, 5.0), 5.0);
        // Second visit: n=2, Δ=0, Q <- (0 + 1·5)/2 = 2.5.
        assert_eq!(t.update_q(&0, &0, 5.0), 2.5);
        assert_eq!(t.pair_visits(&0, &0), 2);
        assert_eq!(t.state_visits(&0), 2);
    }

    #[test]
    fn constant_target_fixed_point_is_half() {
        let mut t: QTable<u32, u32> = QTable::new();
        for _ in 0..10_000 {
            t.update_q(&0, &0, 5.0);
        }
        assert!((t.q(&0, &0) - 2.5).abs() < 1e-2);
        // The plain incremental average converges to the target itself; the
        // short-term-memory rule halves it. Keeping both here documents the
        // divergence between the two update forms.
        assert!((incremental_average(5.0, 10_000) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn selection_distribution_examples() {
        let p = selection_distribution(&[0.0, 0.0, 0.0], &[0, 0, 0], 0);
        assert_eq!(p, vec![1.0 / 3.0; 3]);

        // Ψ = [3, 1], equal visit weights cancel.
        let p = selection_distribution(&[1.0, -1.0], &[1, 1], 2);
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);

        // Ψ = [3, 3]; weights 1 − tanh(3/4) and 1 − tanh(1/4).
        let p = selection_distribution(&[1.0, 1.0], &[3, 1], 4);
        let w0 = 1.0 - tanh_ref(0.75);
        let w1 = 1.0 - tanh_ref(0.25);
        let expect0 = w0 / (w0 + w1);
        assert!((p[0] - expect0).abs() < 1e-6);
        assert!((p[1] - (1.0 - expect0)).abs() < 1e-6);
        assert!((p[0] - 0.3258).abs() < 1e-4);
        assert!((p[1] - 0.6742).abs() < 1e-4);
    }

    #[test]
    fn choose_action_exploits_argmax() {
        let mut t: QTable<u32, u32> = QTable::new();
        let expl = ExplorationParams {
            m_visits: 10,
            eps_min: 0.01,
        };
        // Drive the state past convergence with a clear argmax on action 1.
        for _ in 0..20 {
            t.update_q(&0, &1, 1.0);
        }
        t.set_q(0, 0, -0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| t.choose_action(&0, &[0, 1], &expl, &mut rng).unwrap() == 1)
            .count();
        let p = hits as f64 / trials as f64;
        // Exploit probability is 1 − ε plus the explore-branch mass on the
        // argmax; at least 1 − ε_min − 3σ must land on it.
        let sigma = (0.01f64 * 0.99 / trials as f64).sqrt();
        assert!(p >= 1.0 - expl.eps_min - 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn choose_action_single_and_empty() {
        let t: QTable<u32, u32> = QTable::new();
        let expl = ExplorationParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(t.choose_action(&0, &[9], &expl, &mut rng).unwrap(), 9);
        assert!(matches!(
            t.choose_action(&0, &[], &expl, &mut rng),
            Err(RlError::EmptyActionSet)
        ));
    }

    #[test]
    fn fresh_state_samples_uniformly() {
        let t: QTable<u32, u32> = QTable::new();
        let expl = ExplorationParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 90_000;
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            let a = t.choose_action(&0, &[0, 1, 2], &expl, &mut rng).unwrap();
            counts[a as usize] += 1;
        }
        let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / trials as f64).sqrt();
        for c in counts {
            let p = c as f64 / trials as f64;
            assert!((p - 1.0 / 3.0).abs() < 4.0 * sigma, "p = {p}");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let mut t: QTable<u32, u32> = QTable::new();
        t.update_q(&0, &0, 1.0);
        t.update_q(&0, &1, 0.5);
        let expl = ExplorationParams {
            m_visits: 100,
            eps_min: 0.01,
        };
        let run = |seed: u64| -> Vec<u32> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| t.choose_action(&0, &[0, 1], &expl, &mut rng).unwrap())
                .collect()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn persistence_roundtrip_and_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let mut t: QTable<(u32, u32), i32> = QTable::new();
        t.update_q(&(1, 2), &-1, 0.25);
        t.set_q((3, 0), 0, -0.5);
        t.save("scaler/k-prev-cur", &path).unwrap();

        let back: QTable<(u32, u32), i32> = QTable::load(&path, "scaler/k-prev-cur").unwrap();
        assert_eq!(back.q(&(1, 2), &-1), 0.25);
        assert_eq!(back.pair_visits(&(1, 2), &-1), 1);
        assert_eq!(back.state_visits(&(1, 2)), 1);
        assert_eq!(back.q(&(3, 0), &0), -0.5);
        assert_eq!(back.state_visits(&(3, 0)), 0);

        assert!(matches!(
            QTable::<(u32, u32), i32>::load(&path, "ac/level"),
            Err(RlError::EncodingMismatch { .. })
        ));

        let doctored = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&path, doctored).unwrap();
        assert!(matches!(
            QTable::<(u32, u32), i32>::load(&path, "scaler/k-prev-cur"),
            Err(RlError::VersionMismatch { found: 99, .. })
        ));
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one_nonnegative(
            qs in prop::collection::vec(-10.0f64..10.0, 1..6),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let i: u64 = rng.random_range(0..50);
            let ns: Vec<u64> = (0..qs.len())
                .map(|_| rng.random_range(0..=i.max(1)))
                .collect();
            let p = selection_distribution(&qs, &ns, i);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            // Ψ_a >= 0 by construction.
            let sum_abs: f64 = qs.iter().map(|q| q.abs()).sum();
            prop_assert!(qs.iter().all(|&q| q + sum_abs >= -1e-12));
        }

        #[test]
        fn epsilon_non_increasing(m in 1u64..500, eps_min in 0.0f64..0.2) {
            let e = ExplorationParams { m_visits: m, eps_min };
            let mut prev = f64::INFINITY;
            for i in 0..(m + 10) {
                let cur = e.epsilon(i);
                prop_assert!(cur <= prev + 1e-15);
                if i >= m {
                    prop_assert_eq!(cur, eps_min);
                }
                prev = cur;
            }
        }

        #[test]
        fn argmax_invariant_under_positive_scaling(
            qs in prop::collection::vec(-5.0f64..5.0, 2..5),
            scale in 0.1f64..10.0,
        ) {
            let mut t: QTable<u32, u32> = QTable::new();
            let mut ts: QTable<u32, u32> = QTable::new();
            for (a, &q) in qs.iter().enumerate() {
                t.set_q(0, a as u32, q);
                ts.set_q(0, a as u32, q * scale);
            }
            let actions: Vec<u32> = (0..qs.len() as u32).collect();
            prop_assert_eq!(t.argmax(&0, &actions), ts.argmax(&0, &actions));
        }

        #[test]
        fn update_change_bounded_in_regime(q0 in 0.0f64..1.0, r in 0.1f64..5.0, n in 3u64..1000) {
            // In the convergent regime Q ∈ [0, 2R'/3] the per-step change
            // |R' − 2Q|/n is bounded by |Δ|/n.
            let q = q0 * (2.0 * r / 3.0);
            let delta = r - q;
            let change = (r - 2.0 * q).abs() / n as f64;
            prop_assert!(change <= delta.abs() / n as f64 + 1e-12);
        }
    }
}
