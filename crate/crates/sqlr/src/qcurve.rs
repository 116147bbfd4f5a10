//! Processor-sharing response-time model and the two utilization quantizers.
//!
//! A request of `ell` operations served by a processor of capacity `C` ops/s that
//! is already `rho` ops/s busy sees a response time of
//!
//! ```text
//! T(rho) = ell / (C - rho)
//! ```
//!
//! The curve is flat at low occupancy and blows up near saturation. The knee,
//! the occupancy beyond which response times become unpredictable, is located
//! geometrically: take the tangent at the point where `T'(rho)` reaches a target
//! gradient, take the tangent at `rho = 0`, and intersect them.
//!
//! Two quantizers discretize utilization percentages:
//! - geometric levels `x_j = floor((1 - (1/2)^j) * x_tgt)`, dense near the
//!   training target, used by the admission controller;
//! - fixed-step scaler levels (2-point steps below 20, 5-point steps up to the
//!   learned admission limit, one coarse level above), used by the scaler.
//!
//! Level intervals are lower-inclusive, upper-exclusive; the top scaler level is
//! closed at 100.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("invalid curve: ell and capacity must be positive")]
    BadCurve,
    #[error("occupancy {rho} outside [0, capacity {capacity})")]
    Saturated { rho: f64, capacity: f64 },
    #[error("target gradient {gradient} does not exceed the unloaded slope {unloaded}")]
    NoKnee { gradient: f64, unloaded: f64 },
    #[error("levels require 0 < x_tgt < x_bnd <= 100, got x_tgt={x_tgt} x_bnd={x_bnd}")]
    BadLevelBounds { x_tgt: u32, x_bnd: u32 },
    #[error("scaler levels require 20 < x_lim < 100, got {x_lim}")]
    BadScalerLimit { x_lim: u32 },
}

/// Response-time curve of a processor-sharing server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PSCurve {
    /// Operations per request.
    pub ell: f64,
    /// Server capacity in operations per second.
    pub capacity: f64,
}

impl PSCurve {
    pub fn new(ell: f64, capacity: f64) -> Result<Self, CurveError> {
        if ell <= 0.0 || ell.is_nan() || capacity <= 0.0 || capacity.is_nan() {
            return Err(CurveError::BadCurve);
        }
        Ok(PSCurve { ell, capacity })
    }

    /// Response time at occupancy `rho` ops/s. Errors at or past saturation.
    pub fn response_time(&self, rho: f64) -> Result<f64, CurveError> {
        if !(0.0..self.capacity).contains(&rho) {
            return Err(CurveError::Saturated {
                rho,
                capacity: self.capacity,
            });
        }
        Ok(self.ell / (self.capacity - rho))
    }

    /// Occupancy at the knee of the curve for the given target gradient
    /// (seconds of response time per unit of occupancy).
    ///
    /// The knee is the intersection of the tangent at the point where
    /// `T'(rho) = target_gradient` with the tangent at `rho = 0`.
    pub fn find_knee(&self, target_gradient: f64) -> Result<f64, CurveError> {
        let unloaded_slope = self.ell / (self.capacity * self.capacity);
        if target_gradient <= unloaded_slope || target_gradient.is_nan() {
            return Err(CurveError::NoKnee {
                gradient: target_gradient,
                unloaded: unloaded_slope,
            });
        }
        // T'(rho) = ell/(C-rho)^2 = g  =>  rho* = C - sqrt(ell/g).
        // Tangent there: y = sqrt(ell*g) + g*(rho - rho*). Tangent at zero:
        // y = ell/C + (ell/C^2)*rho. Solve for the intersection.
        let rho_star = self.capacity - (self.ell / target_gradient).sqrt();
        let t_star = (self.ell * target_gradient).sqrt();
        let numerator = t_star - target_gradient * rho_star - self.ell / self.capacity;
        let denominator = unloaded_slope - target_gradient;
        Ok(numerator / denominator)
    }
}

/// Geometric utilization levels for the admission controller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeometricLevels {
    /// Training-target utilization (integer percent).
    pub x_tgt: u32,
    /// Boundary utilization beyond which response times are unpredictable.
    pub x_bnd: u32,
    /// Ascending level boundaries; levels[0] = 0, all < x_tgt.
    pub levels: Vec<u32>,
}

/// The raw level sequence `x_j = floor((1 - (1/2)^j) * x_tgt)`, stopping at the
/// first j whose floored value repeats the previous one.
pub fn geometric_sequence(x_tgt: u32) -> Vec<u32> {
    let mut levels: Vec<u32> = Vec::new();
    for j in 0u32.. {
        // floor(x*(1 - 2^-j)) = x - ceil(x / 2^j), exact in integers.
        let half_pow = 1u64 << j.min(63);
        let v = (x_tgt as u64 - (x_tgt as u64).div_ceil(half_pow)) as u32;
        if levels.last() == Some(&v) {
            break;
        }
        levels.push(v);
    }
    levels
}

/// Builds the geometric level set for an admission quantizer with the given
/// training target and boundary utilization.
pub fn geometric_levels(x_tgt: u32, x_bnd: u32) -> Result<GeometricLevels, CurveError> {
    if x_tgt == 0 || x_tgt >= x_bnd || x_bnd > 100 {
        return Err(CurveError::BadLevelBounds { x_tgt, x_bnd });
    }
    Ok(GeometricLevels {
        x_tgt,
        x_bnd,
        levels: geometric_sequence(x_tgt),
    })
}

impl GeometricLevels {
    /// Largest level value <= x; x_bnd when x lies beyond the boundary.
    pub fn quantize_down(&self, x: f64) -> u32 {
        debug_assert!((0.0..=100.0).contains(&x));
        if x > self.x_bnd as f64 {
            return self.x_bnd;
        }
        *self
            .levels
            .iter()
            .rev()
            .find(|&&v| v as f64 <= x)
            .expect("levels[0] = 0 bounds every x >= 0")
    }

    /// Smallest level value > x, with x_bnd covering the gap (x_n, x_bnd].
    /// None when x lies beyond the boundary.
    pub fn quantize_up(&self, x: f64) -> Option<u32> {
        debug_assert!((0.0..=100.0).contains(&x));
        if x > self.x_bnd as f64 {
            return None;
        }
        Some(
            self.levels
                .iter()
                .find(|&&v| v as f64 > x)
                .copied()
                .unwrap_or(self.x_bnd),
        )
    }

    /// Index of the level interval containing x; None beyond the boundary.
    /// The top interval [levels[n], x_bnd] is closed at x_bnd.
    pub fn level_index(&self, x: f64) -> Option<usize> {
        if x > self.x_bnd as f64 {
            return None;
        }
        Some(
            self.levels
                .iter()
                .rposition(|&v| v as f64 <= x)
                .unwrap_or(0),
        )
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Upper boundary of interval `idx`: the next level value, or x_bnd for the top.
    pub fn upper_boundary(&self, idx: usize) -> u32 {
        self.levels.get(idx + 1).copied().unwrap_or(self.x_bnd)
    }
}

/// Fixed-step utilization levels for the scaler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalerLevels {
    /// Learned admission limit (integer percent).
    pub x_lim: u32,
    /// Ascending lower boundaries; level i covers [boundaries[i], boundaries[i+1])
    /// and the last level covers [x_lim, 100].
    pub boundaries: Vec<u32>,
}

/// 2-point steps on [0,20), 5-point steps on [20, x_lim), one level [x_lim, 100].
pub fn scaler_levels(x_lim: u32) -> Result<ScalerLevels, CurveError> {
    if x_lim <= 20 || x_lim >= 100 {
        return Err(CurveError::BadScalerLimit { x_lim });
    }
    let mut boundaries: Vec<u32> = (0..20).step_by(2).collect();
    boundaries.extend((20..x_lim).step_by(5));
    boundaries.push(x_lim);
    Ok(ScalerLevels { x_lim, boundaries })
}

impl ScalerLevels {
    /// Index of the level containing x (lower-inclusive; top level closed at 100).
    pub fn quantize(&self, x: f64) -> usize {
        debug_assert!((0.0..=100.0).contains(&x));
        self.boundaries
            .iter()
            .rposition(|&b| b as f64 <= x)
            .unwrap_or(0)
    }

    pub fn n_levels(&self) -> usize {
        self.boundaries.len()
    }

    /// Midpoint of level `idx`, the representative utilization of the interval.
    pub fn midpoint(&self, idx: usize) -> f64 {
        let lo = self.boundaries[idx] as f64;
        let hi = self.boundaries.get(idx + 1).copied().unwrap_or(100) as f64;
        (lo + hi) / 2.0
    }
}
