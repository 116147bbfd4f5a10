//! Experiment orchestration: configuration, training flows, the per-second
//! run loop, metrics aggregation, CSV/JSON emission, and plotting.
//!
//! Every run is fully determined by (config, seed): all randomness flows from
//! one seed through named sub-streams (arrivals, admission exploration,
//! scaler exploration). Reports are rebuilt from the emitted CSVs through the
//! same aggregation code that produced them, so a stored bundle can be
//! verified byte-for-byte against its raw data.

pub mod cli;
pub mod plot;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::{
    ac_decide, ac_learn, ac_state, extract_admission_limit, policy_summary, AcConfig, AcTable,
    AC_TABLE_ENCODING,
};
use crate::baselines::{EkfModel, EkfState, EkfTraceRow};
use crate::cloudsim::{
    generate_arrivals, Cluster, ClusterConfig, EpochWindow, Outcome, SimError, WorkloadProfile,
    WorkloadSlot, STREAM_AC_EXPLORE, STREAM_SCALER_EXPLORE,
};
use crate::qcurve::{scaler_levels, ScalerLevels};
use crate::rl_core::{ExplorationParams, LearningParams};
use crate::scaler::{
    init_diagonals, scaler_observe, select_scale_action, DampingState, ScalerConfig,
    ScalerRewardParams, ScalerState, ScalerTable,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invariant: {0}")]
    Invariant(String),
}

impl HarnessError {
    /// Process exit code: invariant violations are 3, everything else here
    /// is a config/IO failure, 2. Usage errors (1) never reach this type.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invariant(_) => 3,
            _ => 2,
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ConservationViolation { .. } | SimError::ScaleBounds { .. } => {
                HarnessError::Invariant(e.to_string())
            }
            SimError::BadProfile(_) => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<crate::rl_core::RlError> for HarnessError {
    fn from(e: crate::rl_core::RlError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Configuration

fn d_epoch_s() -> u64 {
    120
}
fn d_initial_k() -> u32 {
    2
}
fn d_r_sla() -> f64 {
    5e-6
}
fn d_x_lim() -> u32 {
    45
}
fn d_x_tgt() -> u32 {
    60
}
fn d_x_bnd() -> u32 {
    62
}
fn d_static_k() -> u32 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcSection {
    #[serde(default = "AcSection::d_gamma")]
    pub gamma: f64,
    #[serde(default = "AcSection::d_m_visits")]
    pub m_visits: u64,
    #[serde(default = "AcSection::d_eps_min")]
    pub eps_min: f64,
    /// Core count of the synthetic single training VM; 50 cores give 2%
    /// utilization steps so every quantizer level is reachable.
    #[serde(default = "AcSection::d_train_cores")]
    pub train_cores: u32,
    #[serde(default = "AcSection::d_episodes")]
    pub episodes: u64,
}

impl AcSection {
    fn d_gamma() -> f64 {
        0.9
    }
    fn d_m_visits() -> u64 {
        100
    }
    fn d_eps_min() -> f64 {
        0.01
    }
    fn d_train_cores() -> u32 {
        50
    }
    fn d_episodes() -> u64 {
        5000
    }
}

impl Default for AcSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalerSection {
    #[serde(default = "ScalerSection::d_gamma")]
    pub gamma: f64,
    #[serde(default = "ScalerSection::d_m_visits")]
    pub m_visits: u64,
    #[serde(default = "ScalerSection::d_eps_min")]
    pub eps_min: f64,
    #[serde(default = "ScalerSection::d_n_max")]
    pub n_max: i32,
    #[serde(default = "ScalerSection::d_theta")]
    pub theta: f64,
    #[serde(default = "ScalerSection::d_beta")]
    pub beta: f64,
    #[serde(default = "ScalerSection::d_r_min")]
    pub r_min: f64,
    #[serde(default = "ScalerSection::d_p_blk")]
    pub p_blk: f64,
    #[serde(default = "ScalerSection::d_passes")]
    pub pretrain_passes: u64,
}

impl ScalerSection {
    fn d_gamma() -> f64 {
        0.9
    }
    fn d_m_visits() -> u64 {
        20
    }
    fn d_eps_min() -> f64 {
        0.01
    }
    fn d_n_max() -> i32 {
        2
    }
    fn d_theta() -> f64 {
        1.0
    }
    fn d_beta() -> f64 {
        0.01
    }
    fn d_r_min() -> f64 {
        0.01
    }
    fn d_p_blk() -> f64 {
        0.001
    }
    fn d_passes() -> u64 {
        96
    }

    fn to_scaler_config(&self, v_max: u32, theta: f64, beta: f64) -> ScalerConfig {
        ScalerConfig {
            reward: ScalerRewardParams {
                theta,
                beta,
                r_min: self.r_min,
                p_blk: self.p_blk,
            },
            exploration: ExplorationParams {
                m_visits: self.m_visits,
                eps_min: self.eps_min,
            },
            learning: LearningParams { gamma: self.gamma },
            n_max: self.n_max,
            v_max,
        }
    }
}

impl Default for ScalerSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkfSection {
    #[serde(default = "EkfSection::d_cycle_s")]
    pub cycle_s: u64,
    #[serde(default = "EkfSection::d_floor")]
    pub sla_margin_floor: f64,
    #[serde(default = "EkfSection::d_q_demand")]
    pub q_demand: f64,
    #[serde(default = "EkfSection::d_q_service")]
    pub q_service: f64,
    #[serde(default = "EkfSection::d_r_util")]
    pub r_utilization: f64,
    #[serde(default = "EkfSection::d_r_resp")]
    pub r_response_factor: f64,
}

impl EkfSection {
    fn d_cycle_s() -> u64 {
        90
    }
    fn d_floor() -> f64 {
        0.5
    }
    fn d_q_demand() -> f64 {
        1e4
    }
    fn d_q_service() -> f64 {
        1e-8
    }
    fn d_r_util() -> f64 {
        0.02
    }
    fn d_r_resp() -> f64 {
        0.2
    }

    fn to_model(&self, cluster: &ClusterConfig, r_sla: f64) -> EkfModel {
        EkfModel {
            c_vm: cluster.cores as f64 * cluster.core_capacity_ops,
            r_sla,
            v_max: cluster.v_max,
            sla_margin_floor: self.sla_margin_floor,
            q_demand: self.q_demand,
            q_service: self.q_service,
            r_utilization: self.r_utilization,
            r_response: self.r_response_factor * r_sla,
        }
    }
}

impl Default for EkfSection {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mandatory unless supplied on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "d_epoch_s")]
    pub epoch_s: u64,
    #[serde(default)]
    pub scheme: Option<String>,
    /// Workload profile path; the built-in test profile when absent.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    /// Pre-training profile path; the built-in composite when absent.
    #[serde(default)]
    pub pretrain_profile: Option<PathBuf>,
    #[serde(default = "d_initial_k")]
    pub initial_k: u32,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default = "d_r_sla")]
    pub r_sla_s_per_op: f64,
    /// Admission threshold used when no trained admission table is supplied.
    #[serde(default = "d_x_lim")]
    pub x_lim: u32,
    #[serde(default = "d_x_tgt")]
    pub x_tgt: u32,
    #[serde(default = "d_x_bnd")]
    pub x_bnd: u32,
    #[serde(default)]
    pub ac: AcSection,
    #[serde(default)]
    pub scaler: ScalerSection,
    #[serde(default)]
    pub ekf: EkfSection,
    #[serde(default = "d_static_k")]
    pub static_k: u32,
    #[serde(default)]
    pub ac_table: Option<PathBuf>,
    #[serde(default)]
    pub scaler_table: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let f = File::open(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.epoch_s == 0 {
            return Err(HarnessError::Config("epoch_s must be positive".into()));
        }
        if self.initial_k < 1 || self.initial_k > self.cluster.v_max {
            return Err(HarnessError::Config(format!(
                "initial_k {} outside [1, {}]",
                self.initial_k, self.cluster.v_max
            )));
        }
        if !(self.x_tgt < self.x_bnd && self.x_bnd <= 100) {
            return Err(HarnessError::Config(format!(
                "need x_tgt < x_bnd <= 100, got {} / {}",
                self.x_tgt, self.x_bnd
            )));
        }
        if self.static_k < 1 || self.static_k > self.cluster.v_max {
            return Err(HarnessError::Config(format!(
                "static_k {} outside [1, {}]",
                self.static_k, self.cluster.v_max
            )));
        }
        Ok(())
    }

    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, HarnessError> {
        flag.or(self.seed).ok_or_else(|| {
            HarnessError::Config("seed is mandatory (config field or --seed)".into())
        })
    }

    pub fn load_run_profile(&self) -> Result<WorkloadProfile, HarnessError> {
        match &self.profile {
            Some(p) => load_profile(p),
            None => Ok(default_test_profile()),
        }
    }

    pub fn load_pretrain_profile(&self) -> Result<WorkloadProfile, HarnessError> {
        match &self.pretrain_profile {
            Some(p) => load_profile(p),
            None => Ok(default_pretrain_profile()),
        }
    }
}

pub fn load_profile(path: &Path) -> Result<WorkloadProfile, HarnessError> {
    let f =
        File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let p: WorkloadProfile = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    p.validate()?;
    Ok(p)
}

/// Four simulated hours: light, bursty-busy, medium, light again. Gaps are
/// uniform on {0,…,ω_max} so a slot's offered rate is multiplier·2/ω_max per
/// second.
pub fn default_test_profile() -> WorkloadProfile {
    WorkloadProfile {
        slots: vec![
            WorkloadSlot {
                duration_s: 3600,
                omega_max_s: 9,
                multiplier: 1,
            },
            WorkloadSlot {
                duration_s: 3600,
                omega_max_s: 5,
                multiplier: 10,
            },
            WorkloadSlot {
                duration_s: 3600,
                omega_max_s: 7,
                multiplier: 4,
            },
            WorkloadSlot {
                duration_s: 3600,
                omega_max_s: 9,
                multiplier: 1,
            },
        ],
    }
}

/// Composite pre-training workload cycling several load averages.
pub fn default_pretrain_profile() -> WorkloadProfile {
    WorkloadProfile {
        slots: vec![
            WorkloadSlot {
                duration_s: 1800,
                omega_max_s: 9,
                multiplier: 1,
            },
            WorkloadSlot {
                duration_s: 1800,
                omega_max_s: 5,
                multiplier: 8,
            },
            WorkloadSlot {
                duration_s: 1800,
                omega_max_s: 7,
                multiplier: 3,
            },
            WorkloadSlot {
                duration_s: 1800,
                omega_max_s: 5,
                multiplier: 12,
            },
            WorkloadSlot {
                duration_s: 1800,
                omega_max_s: 9,
                multiplier: 2,
            },
            WorkloadSlot {
                duration_s: 1800,
                omega_max_s: 6,
                multiplier: 6,
            },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Sqlr,
    SqlrCase1,
    SqlrCase2,
    Ekf,
    Static(u32),
}

impl Scheme {
    pub fn parse(name: &str, config: &ExperimentConfig) -> Result<Scheme, HarnessError> {
        Ok(match name {
            "sqlr" => Scheme::Sqlr,
            "sqlr-case1" => Scheme::SqlrCase1,
            "sqlr-case2" => Scheme::SqlrCase2,
            "ekf" => Scheme::Ekf,
            "static" => Scheme::Static(config.static_k),
            "static-2" => Scheme::Static(2),
            "static-10" => Scheme::Static(10),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown scheme {other:?} (expected sqlr, sqlr-case1, sqlr-case2, ekf, static, static-2, static-10)"
                )))
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Scheme::Sqlr => "sqlr".into(),
            Scheme::SqlrCase1 => "sqlr-case1".into(),
            Scheme::SqlrCase2 => "sqlr-case2".into(),
            Scheme::Ekf => "ekf".into(),
            Scheme::Static(k) => format!("static-{k}"),
        }
    }

    fn is_sqlr(&self) -> bool {
        matches!(self, Scheme::Sqlr | Scheme::SqlrCase1 | Scheme::SqlrCase2)
    }

    /// Reward weighting for the SQLR variants.
    fn scaler_weights(&self, section: &ScalerSection) -> (f64, f64) {
        match self {
            Scheme::SqlrCase1 => (1.0, 0.01),
            Scheme::SqlrCase2 => (10.0, 0.001),
            _ => (section.theta, section.beta),
        }
    }
}

// ---------------------------------------------------------------------------
// Raw output rows

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LedgerRow {
    pub id: u64,
    pub arrival_s: u64,
    pub iterations: u64,
    pub outcome: String,
    pub vm_id: Option<u64>,
    pub service_time_s: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SecondRow {
    pub t: u64,
    /// Active + booting VM count at the end of the second.
    pub k: u32,
    pub arrived: u64,
    pub admitted: u64,
    pub blocked: u64,
    pub completed: u64,
    pub active_vms: u32,
    pub sample_sum: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EpochRow {
    pub index: u64,
    pub avg_utilization: f64,
    pub blocking_p: f64,
    pub k_end: u32,
    pub arrived: u64,
    pub blocked: u64,
    pub convergence_fraction: Option<f64>,
    pub chosen_delta: Option<i32>,
    pub effective_delta: Option<i32>,
}

// ---------------------------------------------------------------------------
// Metrics

/// Trailing moving average with partial windows at the head.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= series[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BlockingBin {
    pub start_s: u64,
    pub arrived: u64,
    pub blocked: u64,
    /// blocked/arrived; 0 for empty bins.
    pub rate: f64,
}

/// Blocking rates over fixed bins (2 minutes by default).
pub fn blocking_series(ledger: &[LedgerRow], bin_s: u64, duration_s: u64) -> Vec<BlockingBin> {
    assert!(bin_s >= 1);
    let n_bins = duration_s.div_ceil(bin_s).max(1) as usize;
    let mut bins: Vec<BlockingBin> = (0..n_bins)
        .map(|i| BlockingBin {
            start_s: i as u64 * bin_s,
            arrived: 0,
            blocked: 0,
            rate: 0.0,
        })
        .collect();
    for row in ledger {
        let idx = ((row.arrival_s / bin_s) as usize).min(n_bins - 1);
        bins[idx].arrived += 1;
        if row.outcome == "blocked" {
            bins[idx].blocked += 1;
        }
    }
    for b in &mut bins {
        if b.arrived > 0 {
            b.rate = b.blocked as f64 / b.arrived as f64;
        }
    }
    bins
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CdfPoint {
    pub value: f64,
    pub cum: f64,
}

/// Empirical CDF of the given values, compressed to at most 1001 points by
/// even rank sampling. Deterministic for identical inputs.
pub fn empirical_cdf(values: &[f64]) -> Vec<CdfPoint> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n <= 1001 {
        return sorted
            .iter()
            .enumerate()
            .map(|(i, &v)| CdfPoint {
                value: v,
                cum: (i + 1) as f64 / n as f64,
            })
            .collect();
    }
    (0..=1000)
        .map(|j| {
            let rank = (j * (n - 1)) / 1000;
            CdfPoint {
                value: sorted[rank],
                cum: (rank + 1) as f64 / n as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct HeatCell {
    pub k: u32,
    /// Offered-load bin lower bound, requests per minute (bins of 10).
    pub load_bin: u64,
    pub responses: u64,
    /// Fraction of responses whose per-iteration time exceeded R_sla.
    pub frequency: f64,
    /// Mean exceedance over R_sla among those responses, s/op.
    pub severity: f64,
}

/// Soft-blocking grid: completed requests binned by the fleet size at their
/// arrival second and the total arrivals in their minute. Cells with fewer
/// than 30 responses are suppressed.
pub fn soft_blocking_heatmap(
    ledger: &[LedgerRow],
    seconds: &[SecondRow],
    r_sla: f64,
) -> Vec<HeatCell> {
    let mut per_minute: std::collections::BTreeMap<u64, u64> = std::collections::BTreeMap::new();
    for row in ledger {
        *per_minute.entry(row.arrival_s / 60).or_insert(0) += 1;
    }
    let mut cells: std::collections::BTreeMap<(u32, u64), (u64, u64, f64)> =
        std::collections::BTreeMap::new();
    for row in ledger {
        if row.outcome != "completed" {
            continue;
        }
        let (Some(ticks), true) = (row.service_time_s, (row.arrival_s as usize) < seconds.len())
        else {
            continue;
        };
        let k = seconds[row.arrival_s as usize].k;
        let load = per_minute[&(row.arrival_s / 60)];
        let load_bin = (load / 10) * 10;
        let per_iter = ticks as f64 / row.iterations as f64;
        let cell = cells.entry((k, load_bin)).or_insert((0, 0, 0.0));
        cell.0 += 1;
        if per_iter > r_sla {
            cell.1 += 1;
            cell.2 += per_iter - r_sla;
        }
    }
    cells
        .into_iter()
        .filter(|(_, (responses, _, _))| *responses >= 30)
        .map(
            |((k, load_bin), (responses, exceed, exceed_sum))| HeatCell {
                k,
                load_bin,
                responses,
                frequency: exceed as f64 / responses as f64,
                severity: if exceed > 0 {
                    exceed_sum / exceed as f64
                } else {
                    0.0
                },
            },
        )
        .collect()
}

// ---------------------------------------------------------------------------
// Report bundle

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportBundle {
    pub scheme: String,
    pub seed: u64,
    pub duration_s: u64,
    pub epoch_s: u64,
    pub x_lim: u32,
    pub r_sla_s_per_op: f64,
    pub arrived: u64,
    pub admitted: u64,
    pub blocked: u64,
    pub completed: u64,
    pub in_flight_end: u64,
    pub overall_blocking: f64,
    pub vm_hours: f64,
    pub mean_k: f64,
    pub blocking_bins: Vec<BlockingBin>,
    /// CDF over the per-bin blocking rates.
    pub blocking_cdf: Vec<CdfPoint>,
    /// CDF over per-iteration service times (whole-tick) of completed requests.
    pub service_cdf: Vec<CdfPoint>,
    pub heatmap: Vec<HeatCell>,
    pub final_convergence_fraction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BundleMeta {
    pub scheme: String,
    pub seed: u64,
    pub duration_s: u64,
    pub epoch_s: u64,
    pub x_lim: u32,
    pub r_sla_s_per_op: f64,
}

/// Aggregates raw rows into the bundle; both the run and the report command
/// go through this one function so recomputation is exact.
pub fn build_bundle(
    meta: &BundleMeta,
    ledger: &[LedgerRow],
    seconds: &[SecondRow],
    epochs: &[EpochRow],
) -> ReportBundle {
    let arrived = ledger.len() as u64;
    let blocked = ledger.iter().filter(|r| r.outcome == "blocked").count() as u64;
    let completed = ledger.iter().filter(|r| r.outcome == "completed").count() as u64;
    let in_flight_end = ledger.iter().filter(|r| r.outcome == "in_flight").count() as u64;
    let admitted = completed + in_flight_end;
    let vm_seconds: u64 = seconds.iter().map(|s| s.k as u64).sum();
    let bins = blocking_series(ledger, 120, meta.duration_s);
    let rates: Vec<f64> = bins.iter().map(|b| b.rate).collect();
    let service: Vec<f64> = ledger
        .iter()
        .filter(|r| r.outcome == "completed")
        .filter_map(|r| r.service_time_s.map(|s| s as f64 / r.iterations as f64))
        .collect();
    ReportBundle {
        scheme: meta.scheme.clone(),
        seed: meta.seed,
        duration_s: meta.duration_s,
        epoch_s: meta.epoch_s,
        x_lim: meta.x_lim,
        r_sla_s_per_op: meta.r_sla_s_per_op,
        arrived,
        admitted,
        blocked,
        completed,
        in_flight_end,
        overall_blocking: if arrived == 0 {
            0.0
        } else {
            blocked as f64 / arrived as f64
        },
        vm_hours: vm_seconds as f64 / 3600.0,
        mean_k: if seconds.is_empty() {
            0.0
        } else {
            vm_seconds as f64 / seconds.len() as f64
        },
        blocking_bins: bins,
        blocking_cdf: empirical_cdf(&rates),
        service_cdf: empirical_cdf(&service),
        heatmap: soft_blocking_heatmap(ledger, seconds, meta.r_sla_s_per_op),
        final_convergence_fraction: epochs.iter().rev().find_map(|e| e.convergence_fraction),
    }
}

// ---------------------------------------------------------------------------
// Admission-control training

#[derive(Debug, Serialize)]
pub struct AcTrainOutcome {
    pub x_lim: u32,
    pub episodes: u64,
    pub visited_states: usize,
    pub converged_states: usize,
}

/// Builds the synthetic single-VM training workload: a multiplier ramp, an
/// overload burst, and a ramp back down, repeated until the expected decision
/// count reaches the episode target.
fn ac_training_profile(episodes: u64) -> WorkloadProfile {
    // Ramp through the quantizer's levels, hold near the boundary zone so
    // crossings happen from adjacent levels, then overload to pin the
    // beyond-boundary state, and ramp back down.
    let mut block = Vec::new();
    for m in 1..=6u32 {
        block.push(WorkloadSlot {
            duration_s: 60,
            omega_max_s: 1,
            multiplier: m,
        });
    }
    block.push(WorkloadSlot {
        duration_s: 120,
        omega_max_s: 0,
        multiplier: 8,
    });
    block.push(WorkloadSlot {
        duration_s: 60,
        omega_max_s: 0,
        multiplier: 12,
    });
    block.push(WorkloadSlot {
        duration_s: 30,
        omega_max_s: 0,
        multiplier: 25,
    });
    for m in [3u32, 2, 1] {
        block.push(WorkloadSlot {
            duration_s: 60,
            omega_max_s: 1,
            multiplier: m,
        });
    }
    // Expected decisions per block: two per second per stream on the ramps
    // (mean gap 0.5 s), one per second per stream on the holds.
    let per_block: u64 =
        60 * 2 * (1 + 2 + 3 + 4 + 5 + 6) + 120 * 8 + 60 * 12 + 30 * 25 + 60 * 2 * (3 + 2 + 1);
    let blocks = episodes.div_ceil(per_block).max(1);
    let mut slots = Vec::new();
    for _ in 0..blocks {
        slots.extend(block.iter().cloned());
    }
    WorkloadProfile { slots }
}

/// Trains the admission agent against a one-VM cluster whose core count makes
/// utilization move in 2% steps. Each admission decision is one episode; the
/// follow-up utilization sample at the end of the decision second is the
/// learning signal.
pub fn train_ac(
    config: &ExperimentConfig,
    seed: u64,
    episodes: u64,
) -> Result<(AcTable, AcConfig, AcTrainOutcome), HarnessError> {
    let ac_cfg = AcConfig::new(
        config.x_tgt,
        config.x_bnd,
        ExplorationParams {
            m_visits: config.ac.m_visits,
            eps_min: config.ac.eps_min,
        },
        LearningParams {
            gamma: config.ac.gamma,
        },
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;

    let profile = ac_training_profile(episodes);
    let arrivals = generate_arrivals(&profile, seed)?;
    let duration = profile.total_duration_s();
    let cluster_cfg = ClusterConfig {
        cores: config.ac.train_cores,
        core_capacity_ops: config.cluster.core_capacity_ops,
        t_boot_s: 0,
        v_max: 1,
    };
    let mut cluster = Cluster::new(cluster_cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_AC_EXPLORE);

    let mut table = AcTable::new();
    let mut next = 0usize;
    let mut episodes_run = 0u64;
    for t in 0..duration {
        let mut pending: Vec<(crate::admission::AcState, crate::admission::AcAction)> = Vec::new();
        while next < arrivals.len() && arrivals[next].arrival_s == t {
            let req = arrivals[next];
            next += 1;
            let Some(offer) = cluster.offer(&req) else {
                continue;
            };
            let state = ac_state(offer.utilization, &ac_cfg);
            let action = ac_decide(offer.utilization, &table, &ac_cfg, &mut rng);
            match action {
                crate::admission::AcAction::Admit => cluster.admit(offer, &req),
                crate::admission::AcAction::Drop => cluster.block(&req),
            }
            pending.push((state, action));
        }
        cluster.step();
        cluster.check_conservation()?;
        let resulting = cluster.vms()[0].last_sample;
        for (state, action) in pending {
            ac_learn(state, action, resulting, &mut table, &ac_cfg);
            episodes_run += 1;
        }
    }

    let x_lim = extract_admission_limit(&table, &ac_cfg)
        .map_err(|e| HarnessError::Invariant(e.to_string()))?;
    let (visited, converged) = table.convergence_counts(&ac_cfg.exploration);
    let outcome = AcTrainOutcome {
        x_lim,
        episodes: episodes_run,
        visited_states: visited,
        converged_states: converged,
    };
    Ok((table, ac_cfg, outcome))
}

/// Trains the admission agent and writes the table plus its policy summary.
pub fn train_ac_to_dir(
    config: &ExperimentConfig,
    seed: u64,
    episodes: u64,
    out: &Path,
) -> Result<AcTrainOutcome, HarnessError> {
    std::fs::create_dir_all(out)?;
    let (table, ac_cfg, outcome) = train_ac(config, seed, episodes)?;
    table.save(AC_TABLE_ENCODING, &out.join("ac_table.json"))?;
    let summary =
        policy_summary(&table, &ac_cfg).map_err(|e| HarnessError::Invariant(e.to_string()))?;
    write_json(&out.join("ac_policy.json"), &summary)?;
    write_json(&out.join("ac_training.json"), &outcome)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Scaler pre-training

#[derive(Debug, Serialize)]
pub struct ScalerTrainOutcome {
    pub passes: u64,
    pub epochs: u64,
    pub visited_states: usize,
    pub converged_states: usize,
    pub convergence_fraction: f64,
}

fn scaler_encoding(x_lim: u32) -> String {
    format!("scaler/k-prev-cur/xlim{x_lim}")
}

/// Pre-trains the scaling agent: repeated passes over the pre-training
/// profile with per-pass arrival streams, one shared exploration stream, and
/// the table carried across passes.
///
/// Passes start from different fleet sizes and workload phases. Without
/// that, states pairing a large fleet with heavy load are never visited, the
/// blocking prior on their stay cells never gets corrected, and bootstrapped
/// scale-out values stay pinned to the prior's pessimism.
pub fn train_scaler(
    config: &ExperimentConfig,
    seed: u64,
    scheme: Scheme,
    x_lim: u32,
    passes: u64,
) -> Result<(ScalerTable, ScalerTrainOutcome), HarnessError> {
    let base_profile = config.load_pretrain_profile()?;
    const INITIAL_K_CYCLE: [u32; 5] = [2, 10, 6, 8, 4];
    let (theta, beta) = scheme.scaler_weights(&config.scaler);
    let scaler_cfg = config
        .scaler
        .to_scaler_config(config.cluster.v_max, theta, beta);
    let levels = scaler_levels(x_lim).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut table = ScalerTable::new();
    init_diagonals(
        &mut table,
        &levels,
        &scaler_cfg.reward,
        x_lim as f64,
        config.x_bnd as f64,
        scaler_cfg.v_max,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SCALER_EXPLORE);

    let mut epochs = 0u64;
    for pass in 0..passes {
        let pass_seed = seed.wrapping_add((pass + 1).wrapping_mul(0x9E37_79B9));
        let initial_k = INITIAL_K_CYCLE[pass as usize % INITIAL_K_CYCLE.len()]
            .min(config.cluster.v_max)
            .max(1);
        let arrivals = generate_arrivals(&base_profile, pass_seed)?;
        let duration = base_profile.total_duration_s();
        let mut cluster = Cluster::new(config.cluster, initial_k);
        let mut damping = DampingState::new();
        let mut window = EpochWindow::new();
        let mut pending: Option<(ScalerState, i32)> = None;
        let mut last_cur: Option<usize> = None;
        let mut next = 0usize;
        let mut prev_arrived = 0u64;
        let mut prev_blocked = 0u64;
        for t in 0..duration {
            if t > 0 && t % config.epoch_s == 0 {
                let rec = window.finish(t / config.epoch_s - 1);
                epochs += 1;
                scaler_epoch_boundary(
                    &rec,
                    &levels,
                    &scaler_cfg,
                    &mut table,
                    &mut damping,
                    &mut pending,
                    &mut last_cur,
                    &mut cluster,
                    &mut rng,
                )?;
            }
            while next < arrivals.len() && arrivals[next].arrival_s == t {
                cluster.dispatch_threshold(&arrivals[next], x_lim as f64);
                next += 1;
            }
            let rec = cluster.step();
            cluster.check_conservation()?;
            let arrived_delta = cluster.arrived() - prev_arrived;
            let blocked_delta = cluster.blocked() - prev_blocked;
            prev_arrived = cluster.arrived();
            prev_blocked = cluster.blocked();
            window.push_step(&rec, arrived_delta, blocked_delta);
        }
    }

    let (visited, converged) = table.convergence_counts(&scaler_cfg.exploration);
    let outcome = ScalerTrainOutcome {
        passes,
        epochs,
        visited_states: visited,
        converged_states: converged,
        convergence_fraction: table.convergence_fraction(&scaler_cfg.exploration),
    };
    Ok((table, outcome))
}

pub fn train_scaler_to_dir(
    config: &ExperimentConfig,
    seed: u64,
    scheme: Scheme,
    x_lim: u32,
    passes: u64,
    out: &Path,
) -> Result<ScalerTrainOutcome, HarnessError> {
    std::fs::create_dir_all(out)?;
    let (table, outcome) = train_scaler(config, seed, scheme, x_lim, passes)?;
    table.save(&scaler_encoding(x_lim), &out.join("scaler_table.json"))?;
    write_json(&out.join("scaler_training.json"), &outcome)?;
    Ok(outcome)
}

/// One epoch boundary of the scaling loop: settle the pending action with the
/// just-closed epoch's reward, form the new state, select, damp, and apply.
/// The booked action is the chosen (pre-damping) delta; the cluster applies
/// the damped one.
#[allow(clippy::too_many_arguments)]
fn scaler_epoch_boundary(
    rec: &crate::cloudsim::EpochRecord,
    levels: &ScalerLevels,
    scaler_cfg: &ScalerConfig,
    table: &mut ScalerTable,
    damping: &mut DampingState,
    pending: &mut Option<(ScalerState, i32)>,
    last_cur: &mut Option<usize>,
    cluster: &mut Cluster,
    rng: &mut ChaCha8Rng,
) -> Result<(i32, i32), HarnessError> {
    let cur = levels.quantize(rec.avg_utilization);
    let k_now = cluster.k();
    if let Some((sel_state, chosen_delta)) = pending.take() {
        scaler_observe(
            sel_state,
            chosen_delta,
            rec.blocking_p,
            k_now,
            cur,
            table,
            scaler_cfg,
        );
    }
    let state = ScalerState {
        k: k_now,
        prev: last_cur.unwrap_or(cur),
        cur,
    };
    let delta = select_scale_action(state, table, scaler_cfg, rng)?;
    let converged = scaler_cfg.exploration.converged(table.state_visits(&state));
    let effective = damping.apply(state, delta, converged);
    if effective != 0 {
        cluster.scale(effective)?;
    }
    *pending = Some((state, delta));
    *last_cur = Some(cur);
    Ok((delta, effective))
}

// ---------------------------------------------------------------------------
// Experiment run

pub struct RunSpec<'a> {
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub scheme: Scheme,
    pub profile: WorkloadProfile,
    pub x_lim: u32,
    /// Pre-trained scaler table for SQLR schemes; fresh diagonals otherwise.
    pub scaler_table: Option<ScalerTable>,
}

pub struct RunArtifacts {
    pub bundle: ReportBundle,
    pub ledger: Vec<LedgerRow>,
    pub seconds: Vec<SecondRow>,
    pub epochs: Vec<EpochRow>,
    pub ekf_trace: Vec<EkfTraceRow>,
    pub scaler_table: Option<ScalerTable>,
}

fn ledger_rows(cluster: &Cluster) -> Vec<LedgerRow> {
    cluster
        .ledger()
        .iter()
        .map(|e| LedgerRow {
            id: e.id,
            arrival_s: e.arrival_s,
            iterations: e.iterations,
            outcome: match e.outcome {
                Outcome::Blocked => "blocked".into(),
                Outcome::InFlight => "in_flight".into(),
                Outcome::Completed => "completed".into(),
            },
            vm_id: e.vm_id,
            service_time_s: e.service_time_s,
        })
        .collect()
}

/// Runs one experiment: workload → cluster → provisioner → metrics. The SQLR
/// schemes keep learning online from their (possibly pre-trained) table; the
/// EKF cycles every `ekf.cycle_s` seconds; static schemes never scale.
pub fn run_experiment(spec: RunSpec) -> Result<RunArtifacts, HarnessError> {
    let config = spec.config;
    let arrivals = generate_arrivals(&spec.profile, spec.seed)?;
    let duration = spec.profile.total_duration_s();
    let initial_k = match spec.scheme {
        Scheme::Static(k) => {
            if k < 1 || k > config.cluster.v_max {
                return Err(HarnessError::Config(format!(
                    "static fleet {k} outside [1, {}]",
                    config.cluster.v_max
                )));
            }
            k
        }
        _ => config.initial_k,
    };
    let mut cluster = Cluster::new(config.cluster, initial_k);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(STREAM_SCALER_EXPLORE);

    // SQLR state.
    let (theta, beta) = spec.scheme.scaler_weights(&config.scaler);
    let scaler_cfg = config
        .scaler
        .to_scaler_config(config.cluster.v_max, theta, beta);
    let levels = scaler_levels(spec.x_lim).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut table = if spec.scheme.is_sqlr() {
        Some(match spec.scaler_table {
            Some(t) => t,
            None => {
                let mut t = ScalerTable::new();
                init_diagonals(
                    &mut t,
                    &levels,
                    &scaler_cfg.reward,
                    spec.x_lim as f64,
                    config.x_bnd as f64,
                    scaler_cfg.v_max,
                );
                t
            }
        })
    } else {
        None
    };
    let mut damping = DampingState::new();
    let mut pending: Option<(ScalerState, i32)> = None;
    let mut last_cur: Option<usize> = None;

    // EKF state.
    let ekf_model = config.ekf.to_model(&config.cluster, config.r_sla_s_per_op);
    let mut ekf = match spec.scheme {
        Scheme::Ekf => Some(EkfState::new(&ekf_model, initial_k)),
        _ => None,
    };
    let mut ekf_trace: Vec<EkfTraceRow> = Vec::new();
    let mut ekf_sample_sum = 0.0;
    let mut ekf_active_seconds = 0u64;
    let mut ekf_response_sum = 0.0;
    let mut ekf_response_count = 0u64;

    let mut window = EpochWindow::new();
    let mut epochs: Vec<EpochRow> = Vec::new();
    let mut seconds: Vec<SecondRow> = Vec::with_capacity(duration as usize);
    let mut next = 0usize;
    let mut prev = (0u64, 0u64, 0u64, 0u64);

    for t in 0..duration {
        if t > 0 && t % config.epoch_s == 0 {
            let rec = window.finish(t / config.epoch_s - 1);
            let mut row = EpochRow {
                index: rec.index,
                avg_utilization: rec.avg_utilization,
                blocking_p: rec.blocking_p,
                k_end: rec.k_end,
                arrived: rec.arrived,
                blocked: rec.blocked,
                convergence_fraction: None,
                chosen_delta: None,
                effective_delta: None,
            };
            if let Some(table) = table.as_mut() {
                let (chosen, effective) = scaler_epoch_boundary(
                    &rec,
                    &levels,
                    &scaler_cfg,
                    table,
                    &mut damping,
                    &mut pending,
                    &mut last_cur,
                    &mut cluster,
                    &mut rng,
                )?;
                row.chosen_delta = Some(chosen);
                row.effective_delta = Some(effective);
                row.convergence_fraction =
                    Some(table.convergence_fraction(&scaler_cfg.exploration));
            }
            epochs.push(row);
        }

        if let Some(filter) = ekf
            .as_mut()
            .filter(|_| t > 0 && t % config.ekf.cycle_s == 0)
        {
            let k_now = cluster.k();
            let rho = if ekf_active_seconds > 0 {
                ekf_sample_sum / ekf_active_seconds as f64 / 100.0
            } else {
                0.0
            };
            let t_m = if ekf_response_count > 0 {
                ekf_response_sum / ekf_response_count as f64
            } else {
                // No completions this window: zero innovation on the
                // response channel.
                filter.predicted_response(&ekf_model, k_now)
            };
            let trace = filter.cycle(&ekf_model, rho, t_m, k_now);
            let delta = trace.k_target as i64 - k_now as i64;
            if delta != 0 {
                cluster.scale(delta as i32)?;
            }
            ekf_trace.push(trace);
            ekf_sample_sum = 0.0;
            ekf_active_seconds = 0;
            ekf_response_sum = 0.0;
            ekf_response_count = 0;
        }

        while next < arrivals.len() && arrivals[next].arrival_s == t {
            cluster.dispatch_threshold(&arrivals[next], spec.x_lim as f64);
            next += 1;
        }

        let rec = cluster.step();
        cluster.check_conservation()?;
        let now = (
            cluster.arrived(),
            cluster.admitted(),
            cluster.blocked(),
            cluster.completed(),
        );
        let deltas = (
            now.0 - prev.0,
            now.1 - prev.1,
            now.2 - prev.2,
            now.3 - prev.3,
        );
        prev = now;
        window.push_step(&rec, deltas.0, deltas.2);
        if ekf.is_some() {
            ekf_sample_sum += rec.sample_sum;
            ekf_active_seconds += rec.active_at_start as u64;
            for c in &rec.completions {
                let iterations = cluster.ledger()[c.request_id as usize].iterations;
                ekf_response_sum += c.exact_response_s / iterations as f64;
                ekf_response_count += 1;
            }
        }
        seconds.push(SecondRow {
            t,
            k: rec.k_after,
            arrived: deltas.0,
            admitted: deltas.1,
            blocked: deltas.2,
            completed: deltas.3,
            active_vms: rec.active_at_start,
            sample_sum: rec.sample_sum,
        });
    }

    // Close the final window for the record (no action follows it).
    let final_index = if duration.is_multiple_of(config.epoch_s) {
        duration / config.epoch_s - 1
    } else {
        duration / config.epoch_s
    };
    let rec = window.finish(final_index);
    epochs.push(EpochRow {
        index: rec.index,
        avg_utilization: rec.avg_utilization,
        blocking_p: rec.blocking_p,
        k_end: rec.k_end,
        arrived: rec.arrived,
        blocked: rec.blocked,
        convergence_fraction: table
            .as_ref()
            .map(|t| t.convergence_fraction(&scaler_cfg.exploration)),
        chosen_delta: None,
        effective_delta: None,
    });

    // The two independent VM-time computations must agree exactly.
    let from_series = cluster.vm_seconds_from_series();
    let from_lifetimes = cluster.vm_seconds_from_lifetimes();
    if from_series != from_lifetimes {
        return Err(HarnessError::Invariant(format!(
            "VM-seconds mismatch: series {from_series}, lifetimes {from_lifetimes}"
        )));
    }

    let ledger = ledger_rows(&cluster);
    let meta = BundleMeta {
        scheme: spec.scheme.label(),
        seed: spec.seed,
        duration_s: duration,
        epoch_s: config.epoch_s,
        x_lim: spec.x_lim,
        r_sla_s_per_op: config.r_sla_s_per_op,
    };
    let bundle = build_bundle(&meta, &ledger, &seconds, &epochs);
    Ok(RunArtifacts {
        bundle,
        ledger,
        seconds,
        epochs,
        ekf_trace,
        scaler_table: table,
    })
}

/// Runs an experiment and writes every artifact (CSVs, bundle, tables,
/// plots) into `out`.
pub fn run_to_dir(spec: RunSpec, out: &Path) -> Result<RunArtifacts, HarnessError> {
    std::fs::create_dir_all(out)?;
    let x_lim = spec.x_lim;
    let artifacts = run_experiment(spec)?;
    write_csv(&out.join("ledger.csv"), &artifacts.ledger)?;
    write_csv(&out.join("seconds.csv"), &artifacts.seconds)?;
    write_csv(&out.join("epochs.csv"), &artifacts.epochs)?;
    if !artifacts.ekf_trace.is_empty() {
        write_csv(&out.join("ekf_trace.csv"), &artifacts.ekf_trace)?;
    }
    if let Some(table) = &artifacts.scaler_table {
        table.save(&scaler_encoding(x_lim), &out.join("scaler_table.json"))?;
    }
    write_json(&out.join("bundle.json"), &artifacts.bundle)?;
    plot::emit_plots(&artifacts.bundle, &artifacts.seconds, out)?;
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// Compare and report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub arrived: u64,
    pub blocked: u64,
    pub overall_blocking: f64,
    pub vm_hours: f64,
    pub mean_k: f64,
    pub completed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareSummary {
    pub seed: u64,
    pub x_lim: u32,
    pub schemes: Vec<SchemeSummary>,
}

/// The full comparison flow: train the admission agent once, pre-train a
/// scaler table per SQLR case, then run every scheme on the same workload.
pub fn compare(
    config: &ExperimentConfig,
    seed: u64,
    out: &Path,
) -> Result<CompareSummary, HarnessError> {
    std::fs::create_dir_all(out)?;
    let ac_outcome = train_ac_to_dir(config, seed, config.ac.episodes, &out.join("ac"))?;
    let x_lim = ac_outcome.x_lim;
    let profile = config.load_run_profile()?;

    let schemes = [
        Scheme::SqlrCase1,
        Scheme::SqlrCase2,
        Scheme::Ekf,
        Scheme::Static(2),
        Scheme::Static(10),
    ];
    let mut summaries = Vec::new();
    for scheme in schemes {
        let table = if scheme.is_sqlr() {
            let (table, outcome) =
                train_scaler(config, seed, scheme, x_lim, config.scaler.pretrain_passes)?;
            write_json(
                &out.join(format!("pretrain-{}.json", scheme.label())),
                &outcome,
            )?;
            Some(table)
        } else {
            None
        };
        let artifacts = run_to_dir(
            RunSpec {
                config,
                seed,
                scheme,
                profile: profile.clone(),
                x_lim,
                scaler_table: table,
            },
            &out.join(scheme.label()),
        )?;
        let b = &artifacts.bundle;
        summaries.push(SchemeSummary {
            scheme: b.scheme.clone(),
            arrived: b.arrived,
            blocked: b.blocked,
            overall_blocking: b.overall_blocking,
            vm_hours: b.vm_hours,
            mean_k: b.mean_k,
            completed: b.completed,
        });
    }
    let summary = CompareSummary {
        seed,
        x_lim,
        schemes: summaries,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Rebuilds the bundle from a run directory's CSVs, verifies it matches the
/// stored one byte-for-byte, and re-emits the plots.
pub fn report(dir: &Path) -> Result<ReportBundle, HarnessError> {
    let bundle_path = dir.join("bundle.json");
    let stored_bytes = std::fs::read(&bundle_path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", bundle_path.display())))?;
    let stored: ReportBundle = serde_json::from_slice(&stored_bytes)?;
    let ledger: Vec<LedgerRow> = read_csv(&dir.join("ledger.csv"))?;
    let seconds: Vec<SecondRow> = read_csv(&dir.join("seconds.csv"))?;
    let epochs: Vec<EpochRow> = read_csv(&dir.join("epochs.csv"))?;
    let meta = BundleMeta {
        scheme: stored.scheme.clone(),
        seed: stored.seed,
        duration_s: stored.duration_s,
        epoch_s: stored.epoch_s,
        x_lim: stored.x_lim,
        r_sla_s_per_op: stored.r_sla_s_per_op,
    };
    let recomputed = build_bundle(&meta, &ledger, &seconds, &epochs);
    let mut recomputed_bytes = serde_json::to_vec_pretty(&recomputed)?;
    recomputed_bytes.push(b'\n');
    if stored_bytes != recomputed_bytes {
        return Err(HarnessError::Invariant(format!(
            "stored bundle in {} does not match its raw CSVs",
            dir.display()
        )));
    }
    plot::emit_plots(&recomputed, &seconds, dir)?;
    Ok(recomputed)
}

// ---------------------------------------------------------------------------
// File IO

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let f =
        File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let f =
        File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(f));
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
