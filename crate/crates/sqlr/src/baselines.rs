//! Comparison provisioners: an EKF-driven queue-model scaler and static
//! fleets.
//!
//! The filter tracks x = [x₁, x₂] where x₁ is the total demand rate in ops/s
//! and x₂ the unloaded per-op service demand in s/op, under the single-tier
//! queue law T = x₂/(1 − ρ) with ρ = x₁/(K·C_vm). Measurements are the
//! window-averaged utilization fraction and per-op response time. Prediction
//! is an identity transition (demand modeled as a random walk); the update is
//! a standard linearized step in Joseph form with re-symmetrization.
//!
//! The target fleet size is the smallest K whose predicted per-op time meets
//! R_sla, i.e. ceil(x₁/(C_vm·(1 − x₂/R_sla))). The SLA margin 1 − x₂/R_sla is
//! floored (default 0.5) because measured per-op times never fall below the
//! unloaded 1/core rate, which equals R_sla here: without a floor the fitted
//! margin can reach 0 and the target diverges. The floor caps inflation at
//! 1/floor times the demand-implied fleet and keeps the target
//! demand-proportional, preserving the filter's characteristic failure mode
//! of parking near 1 VM when traffic is light.

use serde::{Deserialize, Serialize};

type Mat2 = [[f64; 2]; 2];
type Vec2 = [f64; 2];

fn mat_add(a: Mat2, b: Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat_t(a: Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat_inv(a: Mat2) -> Option<Mat2> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    Some([
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ])
}

fn mat_vec(a: Mat2, v: Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

fn diag(a: f64, b: f64) -> Mat2 {
    [[a, 0.0], [0.0, b]]
}

const IDENT: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EkfModel {
    /// Whole-VM capacity in ops/s (cores × per-core rate).
    pub c_vm: f64,
    /// Target per-op response time, s/op.
    pub r_sla: f64,
    pub v_max: u32,
    /// Lower bound on the SLA margin 1 − x₂/R_sla used for sizing.
    pub sla_margin_floor: f64,
    pub q_demand: f64,
    pub q_service: f64,
    pub r_utilization: f64,
    pub r_response: f64,
}

impl EkfModel {
    pub fn new(c_vm: f64, r_sla: f64, v_max: u32) -> Self {
        EkfModel {
            c_vm,
            r_sla,
            v_max,
            sla_margin_floor: 0.5,
            q_demand: 1e4,
            q_service: 1e-8,
            r_utilization: 0.02,
            r_response: 0.2 * r_sla,
        }
    }

    fn q_n(&self) -> Mat2 {
        diag(
            self.q_demand * self.q_demand,
            self.q_service * self.q_service,
        )
    }

    fn r_n(&self) -> Mat2 {
        diag(
            self.r_utilization * self.r_utilization,
            self.r_response * self.r_response,
        )
    }

    fn p0(&self) -> Mat2 {
        diag(
            (0.5 * self.c_vm) * (0.5 * self.c_vm),
            (0.5 * self.r_sla) * (0.5 * self.r_sla),
        )
    }

    fn x0(&self) -> Vec2 {
        [self.c_vm, 0.5 * self.r_sla]
    }

    /// Smallest fleet whose predicted per-op time meets the SLA, clamped to
    /// [1, V_max]: ceil(x₁ / (C_vm · margin)) with the floored margin.
    pub fn k_target(&self, x1: f64, x2: f64) -> u32 {
        let margin = (1.0 - x2 / self.r_sla).max(self.sla_margin_floor);
        let raw = (x1.max(0.0) / (self.c_vm * margin)).ceil();
        if !raw.is_finite() {
            return self.v_max;
        }
        (raw as i64).clamp(1, self.v_max as i64) as u32
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EkfTraceRow {
    pub cycle: u64,
    pub demand_ops: f64,
    pub service_s_per_op: f64,
    pub innovation_utilization: f64,
    pub innovation_response: f64,
    pub k_target: u32,
    pub recovered: bool,
}

#[derive(Debug, Clone)]
pub struct EkfState {
    x: Vec2,
    p: Mat2,
    last_k_target: u32,
    cycles: u64,
}

impl EkfState {
    pub fn new(model: &EkfModel, initial_k: u32) -> Self {
        EkfState {
            x: model.x0(),
            p: model.p0(),
            last_k_target: initial_k,
            cycles: 0,
        }
    }

    pub fn estimate(&self) -> (f64, f64) {
        (self.x[0], self.x[1])
    }

    pub fn covariance(&self) -> Mat2 {
        self.p
    }

    /// Response time the model predicts for the current estimate at fleet
    /// size `k`. Feeding this back as the measurement makes the response
    /// channel's innovation zero, for windows with nothing to measure.
    pub fn predicted_response(&self, model: &EkfModel, k: u32) -> f64 {
        self.measure(model, k).0[1]
    }

    /// Measurement model and its Jacobian at the current estimate; the
    /// predicted occupancy is capped just below 1 so the queue law stays
    /// finite when the estimate implies saturation.
    fn measure(&self, model: &EkfModel, k: u32) -> (Vec2, Mat2) {
        let cap = k as f64 * model.c_vm;
        let u_raw = self.x[0] / cap;
        let u = u_raw.clamp(0.0, 0.999);
        let h = [u, self.x[1] / (1.0 - u)];
        let du_dx1 = if (0.0..0.999).contains(&u_raw) {
            1.0 / cap
        } else {
            0.0
        };
        let one_minus = 1.0 - u;
        let jac = [
            [du_dx1, 0.0],
            [
                self.x[1] / (one_minus * one_minus) * du_dx1,
                1.0 / one_minus,
            ],
        ];
        (h, jac)
    }

    /// One 90 s filter cycle: predict, linearized update on the window
    /// averages, fleet sizing. A non-finite update holds the previous target
    /// and resets the covariance to its prior.
    pub fn cycle(
        &mut self,
        model: &EkfModel,
        avg_utilization_fraction: f64,
        avg_response_s_per_op: f64,
        k_now: u32,
    ) -> EkfTraceRow {
        self.cycles += 1;
        let x_before = self.x;
        let p_before = self.p;

        self.p = mat_add(self.p, model.q_n());
        let (h, jac) = self.measure(model, k_now.max(1));
        let y = [
            avg_utilization_fraction - h[0],
            avg_response_s_per_op - h[1],
        ];
        let s = mat_add(mat_mul(mat_mul(jac, self.p), mat_t(jac)), model.r_n());
        let mut recovered = false;
        match mat_inv(s) {
            Some(s_inv) => {
                let gain = mat_mul(mat_mul(self.p, mat_t(jac)), s_inv);
                let dx = mat_vec(gain, y);
                self.x = [self.x[0] + dx[0], self.x[1] + dx[1]];
                // Joseph form keeps the covariance PSD under rounding.
                let i_kh = [
                    [
                        IDENT[0][0] - (gain[0][0] * jac[0][0] + gain[0][1] * jac[1][0]),
                        IDENT[0][1] - (gain[0][0] * jac[0][1] + gain[0][1] * jac[1][1]),
                    ],
                    [
                        IDENT[1][0] - (gain[1][0] * jac[0][0] + gain[1][1] * jac[1][0]),
                        IDENT[1][1] - (gain[1][0] * jac[0][1] + gain[1][1] * jac[1][1]),
                    ],
                ];
                self.p = mat_add(
                    mat_mul(mat_mul(i_kh, self.p), mat_t(i_kh)),
                    mat_mul(mat_mul(gain, model.r_n()), mat_t(gain)),
                );
                self.p = [
                    [self.p[0][0], 0.5 * (self.p[0][1] + self.p[1][0])],
                    [0.5 * (self.p[0][1] + self.p[1][0]), self.p[1][1]],
                ];
            }
            None => recovered = true,
        }

        let finite =
            self.x.iter().all(|v| v.is_finite()) && self.p.iter().flatten().all(|v| v.is_finite());
        if recovered || !finite {
            self.x = x_before;
            self.p = model.p0();
            let _ = p_before;
            return EkfTraceRow {
                cycle: self.cycles,
                demand_ops: self.x[0],
                service_s_per_op: self.x[1],
                innovation_utilization: y[0],
                innovation_response: y[1],
                k_target: self.last_k_target,
                recovered: true,
            };
        }

        let k_target = model.k_target(self.x[0], self.x[1]);
        self.last_k_target = k_target;
        EkfTraceRow {
            cycle: self.cycles,
            demand_ops: self.x[0],
            service_s_per_op: self.x[1],
            innovation_utilization: y[0],
            innovation_response: y[1],
            k_target,
            recovered: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct StaticConfig {
    pub k_fixed: u32,
}

impl StaticConfig {
    pub fn validate(&self, v_max: u32) -> Result<(), String> {
        if self.k_fixed < 1 || self.k_fixed > v_max {
            return Err(format!("K_fixed {} outside [1, {v_max}]", self.k_fixed));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> EkfModel {
        EkfModel::new(800_000.0, 5e-6, 10)
    }

    fn eigenvalues(p: Mat2) -> (f64, f64) {
        let tr = p[0][0] + p[1][1];
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 - disc, tr / 2.0 + disc)
    }

    #[test]
    fn zero_innovation_leaves_estimate_unchanged() {
        let m = model();
        let mut s = EkfState::new(&m, 2);
        let (h, _) = s.measure(&m, 2);
        let before = s.estimate();
        s.cycle(&m, h[0], h[1], 2);
        let after = s.estimate();
        assert!((before.0 - after.0).abs() < 1e-6 * before.0.abs().max(1.0));
        assert!((before.1 - after.1).abs() < 1e-12);
    }

    #[test]
    fn sizing_worked_example() {
        // Demand 1.2e6 ops/s with a fitted margin of 0.75 needs
        // ceil(1.2e6 / (8e5 · 0.75)) = 2 VMs.
        let m = model();
        assert_eq!(m.k_target(1.2e6, 0.25 * m.r_sla), 2);
    }

    #[test]
    fn sizing_clamps() {
        let m = model();
        assert_eq!(m.k_target(0.0, 1e-6), 1);
        assert_eq!(m.k_target(-5.0e5, 1e-6), 1);
        assert_eq!(m.k_target(1e9, 1e-6), 10);
        // Margin floor: a fitted x₂ at or above R_sla would zero the bare
        // margin; the floor keeps sizing demand-proportional instead.
        assert_eq!(m.k_target(8e5, 2.0 * m.r_sla), 2);
    }

    #[test]
    fn converges_on_stationary_model_consistent_measurements() {
        let m = model();
        let mut s = EkfState::new(&m, 3);
        let k = 3u32;
        let true_x1 = 1.0e6;
        let true_x2 = 2.0e-6;
        let rho = true_x1 / (k as f64 * m.c_vm);
        let t_resp = true_x2 / (1.0 - rho);
        for _ in 0..50 {
            s.cycle(&m, rho, t_resp, k);
        }
        let (x1, x2) = s.estimate();
        assert!((x1 - true_x1).abs() / true_x1 < 0.05, "x1 = {x1}");
        assert!((x2 - true_x2).abs() / true_x2 < 0.05, "x2 = {x2}");
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let m = model();
        let mut s = EkfState::new(&m, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let rho: f64 = rng.random_range(0.0..1.0);
            let t: f64 = rng.random_range(5e-6..5e-5);
            let k = rng.random_range(1..=10);
            s.cycle(&m, rho, t, k);
            let p = s.covariance();
            assert_eq!(p[0][1], p[1][0]);
            let (lo, _) = eigenvalues(p);
            assert!(lo >= -1e-9, "lo = {lo}");
        }
    }

    #[test]
    fn non_finite_measurement_recovers() {
        let m = model();
        let mut s = EkfState::new(&m, 2);
        let row = s.cycle(&m, 0.5, 6e-6, 2);
        assert!(!row.recovered);
        let k_before = row.k_target;
        let x_before = s.estimate();
        let row = s.cycle(&m, f64::NAN, 6e-6, 2);
        assert!(row.recovered);
        assert_eq!(row.k_target, k_before);
        assert_eq!(s.estimate(), x_before);
        // Covariance is back at the prior.
        assert_eq!(s.covariance(), m.p0());
        // The filter keeps working afterwards.
        let row = s.cycle(&m, 0.5, 6e-6, 2);
        assert!(!row.recovered);
    }

    #[test]
    fn static_config_validation() {
        assert!(StaticConfig { k_fixed: 2 }.validate(10).is_ok());
        assert!(StaticConfig { k_fixed: 0 }.validate(10).is_err());
        assert!(StaticConfig { k_fixed: 11 }.validate(10).is_err());
    }

    proptest! {
        #[test]
        fn k_target_always_in_range(
            x1 in -1e7f64..1e8,
            x2 in 0.0f64..1e-4,
        ) {
            let m = model();
            let k = m.k_target(x1, x2);
            prop_assert!((1..=10).contains(&k));
        }

        #[test]
        fn cycles_never_panic_and_stay_in_range(
            measurements in prop::collection::vec((0.0f64..=1.5, 0.0f64..1e-3, 1u32..=10), 1..60),
        ) {
            let m = model();
            let mut s = EkfState::new(&m, 2);
            for (rho, t, k) in measurements {
                let row = s.cycle(&m, rho, t, k);
                prop_assert!((1..=10).contains(&row.k_target));
            }
        }
    }
}
