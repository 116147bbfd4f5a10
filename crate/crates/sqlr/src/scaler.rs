//! Horizontal-scaling agent.
//!
//! State is (K, prev_level, cur_level): the VM count plus the quantized mean
//! utilization of the two preceding epochs. Actions are integer VM deltas in
//! [−N, +N], clipped so K stays in [1, V_max]. The table is organized as one
//! "bubble" per K holding one "card" per delta, each card a grid over
//! (prev_level, cur_level); here that is flattened into the generic table with
//! the triple as state key and the delta as action key.
//!
//! The reward (per epoch, after an action settles) is
//!
//! ```text
//! R = R_blk + R_res,   R_blk = r_min            if P <= p_blk
//!                            = θ·(p_blk − P)    otherwise
//!                      R_res = β·(1 − K)
//! ```
//!
//! Card-0 diagonals are pre-seeded from a blocking estimate derived from the
//! error function so the agent starts with a coarse prior instead of zeros,
//! and converged states apply scale-in damping: a first scale-in decision only
//! arms a flag, a second consecutive one executes.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::qcurve::ScalerLevels;
use crate::rl_core::{discounted_target, ExplorationParams, LearningParams, QTable, RlError};

/// State-key encoding tag for persisted scaler tables.
pub const SCALER_TABLE_ENCODING: &str = "scaler/k-prev-cur";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub struct ScalerState {
    pub k: u32,
    pub prev: usize,
    pub cur: usize,
}

pub type ScalerTable = QTable<ScalerState, i32>;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ScalerRewardParams {
    pub theta: f64,
    pub beta: f64,
    pub r_min: f64,
    pub p_blk: f64,
}

impl ScalerRewardParams {
    /// Blocking-tolerant weighting: resource cost dominates.
    pub fn case1() -> Self {
        ScalerRewardParams {
            theta: 1.0,
            beta: 0.01,
            r_min: 0.01,
            p_blk: 0.001,
        }
    }

    /// Blocking-averse weighting: the penalty term dominates.
    pub fn case2() -> Self {
        ScalerRewardParams {
            theta: 10.0,
            beta: 0.001,
            r_min: 0.01,
            p_blk: 0.001,
        }
    }
}

impl Default for ScalerRewardParams {
    fn default() -> Self {
        ScalerRewardParams::case1()
    }
}

#[derive(Debug, Clone)]
pub struct ScalerConfig {
    pub reward: ScalerRewardParams,
    pub exploration: ExplorationParams,
    pub learning: LearningParams,
    /// Largest single-step VM delta.
    pub n_max: i32,
    pub v_max: u32,
}

impl Default for ScalerConfig {
    fn default() -> Self {
        ScalerConfig {
            reward: ScalerRewardParams::default(),
            exploration: ExplorationParams {
                m_visits: 20,
                eps_min: 0.01,
            },
            learning: LearningParams::default(),
            n_max: 2,
            v_max: 10,
        }
    }
}

/// Per-epoch reward: blocking term plus resource cost, both weighted.
pub fn sqlr_reward(p: f64, k: u32, params: &ScalerRewardParams) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    debug_assert!(k >= 1);
    let r_blk = if p <= params.p_blk {
        params.r_min
    } else {
        params.theta * (params.p_blk - p)
    };
    let r_res = params.beta * (1.0 - k as f64);
    r_blk + r_res
}

/// Prior blocking-probability estimate for a utilization level.
///
/// 0 below x_lim, 1 above x_bnd, and in between ½[1 + erf(η·e/√2)] with
/// η = (x − x_lim)/(x_bnd − x_lim). x = x_lim falls in the erf branch (½).
pub fn p0_estimate(x: f64, x_lim: f64, x_bnd: f64) -> f64 {
    debug_assert!(x_lim < x_bnd);
    if x < x_lim {
        0.0
    } else if x > x_bnd {
        1.0
    } else {
        let eta = (x - x_lim) / (x_bnd - x_lim);
        let z = eta * std::f64::consts::E / std::f64::consts::SQRT_2;
        0.5 * (1.0 + libm::erf(z))
    }
}

/// Seeds every bubble's card-0 diagonal with the reward implied by the
/// blocking prior at each level's midpoint. Values are set without recording
/// visits; every other cell stays at 0.
pub fn init_diagonals(
    table: &mut ScalerTable,
    levels: &ScalerLevels,
    params: &ScalerRewardParams,
    x_lim: f64,
    x_bnd: f64,
    v_max: u32,
) {
    for k in 1..=v_max {
        for level in 0..levels.n_levels() {
            let x = levels.midpoint(level);
            let q = sqlr_reward(p0_estimate(x, x_lim, x_bnd), k, params);
            table.set_q(
                ScalerState {
                    k,
                    prev: level,
                    cur: level,
                },
                0,
                q,
            );
        }
    }
}

/// Deltas permissible at VM count `k`: those keeping K + delta in [1, V_max].
pub fn permissible_deltas(k: u32, n_max: i32, v_max: u32) -> Vec<i32> {
    (-n_max..=n_max)
        .filter(|d| {
            let next = k as i64 + *d as i64;
            next >= 1 && next <= v_max as i64
        })
        .collect()
}

/// ε-greedy delta choice over the permissible cards, comparing each card's
/// (prev_level, cur_level) cell within the current bubble.
pub fn select_scale_action<R: Rng>(
    state: ScalerState,
    table: &ScalerTable,
    config: &ScalerConfig,
    rng: &mut R,
) -> Result<i32, RlError> {
    let deltas = permissible_deltas(state.k, config.n_max, config.v_max);
    table.choose_action(&state, &deltas, &config.exploration, rng)
}

/// Scale-in damping flags, one per converged state.
#[derive(Debug, Clone, Default)]
pub struct DampingState {
    pending: BTreeSet<ScalerState>,
}

impl DampingState {
    pub fn new() -> Self {
        DampingState::default()
    }

    /// Filters a chosen delta. In a converged state the first scale-in only
    /// arms the state's flag (effective delta 0); an immediately following
    /// scale-in executes. Any non-scale-in decision clears the flag.
    /// Non-converged states pass through untouched.
    pub fn apply(&mut self, state: ScalerState, delta: i32, converged: bool) -> i32 {
        if delta >= 0 {
            self.pending.remove(&state);
            return delta;
        }
        if !converged {
            return delta;
        }
        if self.pending.remove(&state) {
            delta
        } else {
            self.pending.insert(state);
            0
        }
    }

    pub fn is_pending(&self, state: &ScalerState) -> bool {
        self.pending.contains(state)
    }
}

/// Books the settled outcome of an action into the table.
///
/// `sel_state` and `chosen_delta` identify the cell credited (selection-time
/// bubble and card); the reference value is the live card-0 diagonal of the
/// post-action bubble at the new utilization level.
pub fn scaler_observe(
    sel_state: ScalerState,
    chosen_delta: i32,
    measured_p: f64,
    new_k: u32,
    new_cur_level: usize,
    table: &mut ScalerTable,
    config: &ScalerConfig,
) {
    let r = sqlr_reward(measured_p, new_k, &config.reward);
    let reference = table.q(
        &ScalerState {
            k: new_k,
            prev: new_cur_level,
            cur: new_cur_level,
        },
        &0,
    );
    let target = discounted_target(r, config.learning.gamma, reference);
    table.update_q(&sel_state, &chosen_delta, target);
}
