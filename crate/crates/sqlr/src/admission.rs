//! Admission-control agent.
//!
//! Learns an ADMIT/DROP policy over quantized VM utilization levels. Rewards
//! are in fractional-utilization units: dropping earns the level floor
//! (utilization kept), admitting earns the level ceiling (utilization gained),
//! and admitting beyond the boundary earns the negative penalty
//! (x_bnd/100 − 1)/2. Since ceilings exceed floors below the boundary and the
//! penalty flips the ordering above it, the learned policy admits at low
//! levels and drops at high ones; `extract_admission_limit` reads off the
//! crossover as the runtime threshold x_lim.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcurve::{geometric_levels, CurveError, GeometricLevels};
use crate::rl_core::{discounted_target, ExplorationParams, LearningParams, QTable};

/// State-key encoding tag for persisted admission tables.
pub const AC_TABLE_ENCODING: &str = "ac/geometric-level";

#[derive(Debug, Error)]
pub enum AcError {
    #[error("degenerate admission policy: no level prefers ADMIT")]
    NoAdmittingLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum AcAction {
    Admit,
    Drop,
}

pub const AC_ACTIONS: [AcAction; 2] = [AcAction::Admit, AcAction::Drop];

/// Quantized utilization state: a geometric level, or past the hard boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum AcState {
    Level(usize),
    Beyond,
}

pub type AcTable = QTable<AcState, AcAction>;

#[derive(Debug, Clone)]
pub struct AcConfig {
    pub x_tgt: u32,
    pub x_bnd: u32,
    pub levels: GeometricLevels,
    pub exploration: ExplorationParams,
    pub learning: LearningParams,
}

impl AcConfig {
    pub fn new(
        x_tgt: u32,
        x_bnd: u32,
        exploration: ExplorationParams,
        learning: LearningParams,
    ) -> Result<Self, CurveError> {
        let levels = geometric_levels(x_tgt, x_bnd)?;
        Ok(AcConfig {
            x_tgt,
            x_bnd,
            levels,
            exploration,
            learning,
        })
    }
}

impl Default for AcConfig {
    fn default() -> Self {
        AcConfig::new(
            60,
            62,
            ExplorationParams::default(),
            LearningParams::default(),
        )
        .expect("default level bounds are valid")
    }
}

/// Quantizes a utilization sample into the agent's state space.
pub fn ac_state(vm_utilization: f64, config: &AcConfig) -> AcState {
    debug_assert!((0.0..=100.0).contains(&vm_utilization));
    match config.levels.level_index(vm_utilization) {
        Some(idx) => AcState::Level(idx),
        None => AcState::Beyond,
    }
}

/// Reward for an action given the utilization it resulted in.
///
/// DROP pays the level floor, ADMIT the level ceiling (the boundary itself at
/// the top level); past the boundary DROP pays x_bnd/100 and ADMIT the
/// negative penalty (x_bnd/100 − 1)/2. All outputs lie in [−0.5, 1].
pub fn ac_reward(resulting_utilization: f64, action: AcAction, config: &AcConfig) -> f64 {
    debug_assert!((0.0..=100.0).contains(&resulting_utilization));
    match action {
        AcAction::Drop => config.levels.quantize_down(resulting_utilization) as f64 / 100.0,
        AcAction::Admit => match config.levels.quantize_up(resulting_utilization) {
            Some(ceiling) => ceiling as f64 / 100.0,
            None => (config.x_bnd as f64 / 100.0 - 1.0) / 2.0,
        },
    }
}

/// ε-greedy ADMIT/DROP decision for the utilization of the selected VM.
pub fn ac_decide<R: Rng>(
    vm_utilization: f64,
    table: &AcTable,
    config: &AcConfig,
    rng: &mut R,
) -> AcAction {
    let s = ac_state(vm_utilization, config);
    table
        .choose_action(&s, &AC_ACTIONS, &config.exploration, rng)
        .expect("two actions are always permissible")
}

/// One learning step: reward from the resulting utilization, target discounted
/// through the next state's best value, applied to the (state, action) pair.
pub fn ac_learn(
    prev_state: AcState,
    action: AcAction,
    resulting_utilization: f64,
    table: &mut AcTable,
    config: &AcConfig,
) {
    let r = ac_reward(resulting_utilization, action, config);
    let next = ac_state(resulting_utilization, config);
    let max_next = table.max_q(&next, &AC_ACTIONS);
    let target = discounted_target(r, config.learning.gamma, max_next);
    table.update_q(&prev_state, &action, target);
}

/// Upper boundary of the highest level whose learned values prefer ADMIT.
///
/// The deployed admission rule is then "drop when the selected VM's
/// utilization exceeds x_lim".
pub fn extract_admission_limit(table: &AcTable, config: &AcConfig) -> Result<u32, AcError> {
    for idx in (0..config.levels.n_levels()).rev() {
        let s = AcState::Level(idx);
        if table.q(&s, &AcAction::Admit) > table.q(&s, &AcAction::Drop) {
            return Ok(config.levels.upper_boundary(idx));
        }
    }
    Err(AcError::NoAdmittingLevel)
}

/// Probability the ε-greedy policy admits in the given state, combining the
/// exploit branch with the exploration distribution's ADMIT mass.
pub fn admit_probability(table: &AcTable, config: &AcConfig, state: AcState) -> f64 {
    let i = table.state_visits(&state);
    let eps = config.exploration.epsilon(i);
    let exploit_admit = match table.argmax(&state, &AC_ACTIONS) {
        Some(AcAction::Admit) => 1.0,
        _ => 0.0,
    };
    let qs: Vec<f64> = AC_ACTIONS.iter().map(|a| table.q(&state, a)).collect();
    let ns: Vec<u64> = AC_ACTIONS
        .iter()
        .map(|a| table.pair_visits(&state, a))
        .collect();
    let explore_admit = crate::rl_core::selection_distribution(&qs, &ns, i)[0];
    (1.0 - eps) * exploit_admit + eps * explore_admit
}

/// Derived policy summary written next to the persisted table.
#[derive(Debug, Serialize, Deserialize)]
pub struct AcPolicySummary {
    pub x_lim: u32,
    pub levels: Vec<AcLevelSummary>,
    pub beyond: AcLevelSummary,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AcLevelSummary {
    /// Lower boundary in percent; the beyond state reports x_bnd.
    pub lower: u32,
    /// Upper boundary in percent; the beyond state reports 100.
    pub upper: u32,
    pub q_admit: f64,
    pub q_drop: f64,
    pub visits: u64,
    pub admit_probability: f64,
}

pub fn policy_summary(table: &AcTable, config: &AcConfig) -> Result<AcPolicySummary, AcError> {
    let x_lim = extract_admission_limit(table, config)?;
    let summarize = |state: AcState, lower: u32, upper: u32| AcLevelSummary {
        lower,
        upper,
        q_admit: table.q(&state, &AcAction::Admit),
        q_drop: table.q(&state, &AcAction::Drop),
        visits: table.state_visits(&state),
        admit_probability: admit_probability(table, config, state),
    };
    let levels = (0..config.levels.n_levels())
        .map(|idx| {
            summarize(
                AcState::Level(idx),
                config.levels.levels[idx],
                config.levels.upper_boundary(idx),
            )
        })
        .collect();
    Ok(AcPolicySummary {
        x_lim,
        levels,
        beyond: summarize(AcState::Beyond, config.x_bnd, 100),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AcConfig {
        AcConfig::default()
    }

    #[test]
    fn state_quantization() {
        let c = cfg();
        assert_eq!(ac_state(0.0, &c), AcState::Level(0));
        // Default boundaries [0, 30, 45, 52, 56, 58, 59]: 33 sits in [30, 45).
        assert_eq!(ac_state(33.0, &c), AcState::Level(1));
        assert_eq!(ac_state(62.0, &c), AcState::Level(6));
        assert_eq!(ac_state(70.0, &c), AcState::Beyond);
    }

    #[test]
    fn reward_examples() {
        let c = cfg();
        assert!((ac_reward(33.0, AcAction::Drop, &c) - 0.30).abs() < 1e-12);
        assert!((ac_reward(33.0, AcAction::Admit, &c) - 0.45).abs() < 1e-12);
        assert!((ac_reward(70.0, AcAction::Admit, &c) - (-0.19)).abs() < 1e-12);
        assert!((ac_reward(70.0, AcAction::Drop, &c) - 0.62).abs() < 1e-12);
    }

    #[test]
    fn reward_ordering_drives_policy_shape() {
        let c = cfg();
        let x_n = *c.levels.levels.last().unwrap() as f64;
        let mut x = 0.0;
        while x <= x_n {
            assert!(
                ac_reward(x, AcAction::Admit, &c) > ac_reward(x, AcAction::Drop, &c),
                "x = {x}"
            );
            x += 0.5;
        }
        let mut x = c.x_bnd as f64 + 0.1;
        while x <= 100.0 {
            assert!(ac_reward(x, AcAction::Admit, &c) < 0.0);
            assert!(ac_reward(x, AcAction::Drop, &c) > 0.0);
            x += 0.5;
        }
    }

    #[test]
    fn first_episode_with_zero_gamma_stores_raw_reward() {
        let mut c = cfg();
        c.learning.gamma = 0.0;
        let mut t = AcTable::new();
        ac_learn(AcState::Level(1), AcAction::Admit, 33.0, &mut t, &c);
        assert!((t.q(&AcState::Level(1), &AcAction::Admit) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn repeated_transitions_shrink_updates() {
        let c = cfg();
        let mut t = AcTable::new();
        let mut prev_q = 0.0;
        let mut prev_change = f64::INFINITY;
        for ep in 0..200 {
            ac_learn(AcState::Level(1), AcAction::Admit, 33.0, &mut t, &c);
            let q = t.q(&AcState::Level(1), &AcAction::Admit);
            let change = (q - prev_q).abs();
            if ep >= 2 {
                assert!(change <= prev_change + 1e-12);
            }
            prev_change = change;
            prev_q = q;
        }
        assert!(prev_change < 1e-3);
    }

    // Bandit oracle at the beyond-boundary state: with γ = 0 the rule is a
    // two-armed bandit whose values converge to reward/2, so the penalized
    // ADMIT arm must end below DROP.
    #[test]
    fn beyond_boundary_learns_to_drop() {
        let mut c = cfg();
        c.learning.gamma = 0.0;
        let mut t = AcTable::new();
        for _ in 0..500 {
            ac_learn(AcState::Beyond, AcAction::Admit, 70.0, &mut t, &c);
            ac_learn(AcState::Beyond, AcAction::Drop, 70.0, &mut t, &c);
        }
        let qa = t.q(&AcState::Beyond, &AcAction::Admit);
        let qd = t.q(&AcState::Beyond, &AcAction::Drop);
        assert!(qa < qd);
        assert!((qa - (-0.19 / 2.0)).abs() < 1e-2);
        assert!((qd - (0.62 / 2.0)).abs() < 1e-2);
    }

    #[test]
    fn converged_drop_state_drops_with_high_probability() {
        let c = cfg();
        let mut t = AcTable::new();
        for _ in 0..(c.exploration.m_visits) {
            t.update_q(&AcState::Beyond, &AcAction::Drop, 0.62);
            t.update_q(&AcState::Beyond, &AcAction::Admit, -0.19);
        }
        assert!(t.state_visits(&AcState::Beyond) >= c.exploration.m_visits);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000;
        let drops = (0..trials)
            .filter(|_| ac_decide(70.0, &t, &c, &mut rng) == AcAction::Drop)
            .count();
        let p = drops as f64 / trials as f64;
        let sigma = (0.01f64 * 0.99 / trials as f64).sqrt();
        assert!(p >= 1.0 - c.exploration.eps_min - 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn empty_table_decides_uniformly() {
        let c = cfg();
        let t = AcTable::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 100_000;
        let admits = (0..trials)
            .filter(|_| ac_decide(10.0, &t, &c, &mut rng) == AcAction::Admit)
            .count();
        let p = admits as f64 / trials as f64;
        let sigma = (0.25f64 / trials as f64).sqrt();
        assert!((p - 0.5).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn admission_limit_from_hand_built_tables() {
        let c = cfg();
        // Admit preferred only on [45, 52).
        let mut t = AcTable::new();
        for idx in 0..c.levels.n_levels() {
            let s = AcState::Level(idx);
            if idx == 2 {
                t.set_q(s, AcAction::Admit, 0.5);
                t.set_q(s, AcAction::Drop, 0.1);
            } else {
                t.set_q(s, AcAction::Admit, 0.0);
                t.set_q(s, AcAction::Drop, 0.3);
            }
        }
        assert_eq!(extract_admission_limit(&t, &c).unwrap(), 52);

        // Admit preferred everywhere below the boundary.
        let mut t = AcTable::new();
        for idx in 0..c.levels.n_levels() {
            let s = AcState::Level(idx);
            t.set_q(s, AcAction::Admit, 0.5);
            t.set_q(s, AcAction::Drop, 0.1);
        }
        assert_eq!(extract_admission_limit(&t, &c).unwrap(), c.x_bnd);

        // Degenerate: drop everywhere.
        let mut t = AcTable::new();
        for idx in 0..c.levels.n_levels() {
            t.set_q(AcState::Level(idx), AcAction::Drop, 0.9);
        }
        assert!(matches!(
            extract_admission_limit(&t, &c),
            Err(AcError::NoAdmittingLevel)
        ));
    }

    #[test]
    fn policy_summary_reports_all_levels() {
        let c = cfg();
        let mut t = AcTable::new();
        for idx in 0..c.levels.n_levels() {
            t.set_q(AcState::Level(idx), AcAction::Admit, 0.4);
        }
        let summary = policy_summary(&t, &c).unwrap();
        assert_eq!(summary.x_lim, c.x_bnd);
        assert_eq!(summary.levels.len(), c.levels.n_levels());
        assert_eq!(summary.levels[0].lower, 0);
        assert_eq!(summary.levels.last().unwrap().upper, c.x_bnd);
        assert_eq!(summary.beyond.upper, 100);
        for l in &summary.levels {
            assert!((0.0..=1.0).contains(&l.admit_probability));
        }
    }

    proptest! {
        #[test]
        fn rewards_bounded(x in 0.0f64..=100.0, admit in prop::bool::ANY) {
            let c = cfg();
            let a = if admit { AcAction::Admit } else { AcAction::Drop };
            let r = ac_reward(x, a, &c);
            prop_assert!((-0.5..=1.0).contains(&r));
        }

        #[test]
        fn state_matches_reward_branch(x in 0.0f64..=100.0) {
            let c = cfg();
            match ac_state(x, &c) {
                AcState::Beyond => {
                    prop_assert!(x > c.x_bnd as f64);
                    prop_assert!(ac_reward(x, AcAction::Admit, &c) < 0.0);
                }
                AcState::Level(idx) => {
                    prop_assert!(idx < c.levels.n_levels());
                    prop_assert!(ac_reward(x, AcAction::Admit, &c) >= 0.0);
                }
            }
        }
    }
}
