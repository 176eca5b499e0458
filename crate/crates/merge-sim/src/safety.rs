//! Safe spatiotemporal spacing, minimum merge gap and ramp arrival timing.
//!
//! The spacing budget assumes every vehicle tracks a pre-planned trajectory:
//! each vehicle can be off by at most its positioning error plus its tracking
//! error, so a pair of vehicles needs twice that sum as a buffer. A ramp
//! vehicle inserting between two mainline vehicles additionally needs its own
//! body length, which gives the minimum merge gap.

use serde::{Deserialize, Serialize};

use crate::model::RoadLayout;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SafetyError {
    #[error("error budget terms must be non-negative")]
    NegativeInput,
    #[error("merge speed {v_merge} outside [{lo}, {hi}] m/s")]
    SpeedWindowViolation { v_merge: f64, lo: f64, hi: f64 },
    #[error("merge point {x_merge} m lies beyond the {lane_len} m acceleration lane")]
    MergeBeyondLaneEnd { x_merge: f64, lane_len: f64 },
    #[error("no acceleration duration satisfies both the speed floor and the lane length")]
    EmptyWindow,
    #[error("invalid input: {0}")]
    BadInput(&'static str),
}

/// Tracking/positioning error budget and the derived safe spacing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    /// Positioning error per vehicle, m.
    pub l_pos: f64,
    /// Trajectory tracking error per vehicle, m.
    pub l_trk: f64,
    /// Derived safe spacing 2 (l_pos + l_trk), m.
    pub s_safe: f64,
    /// Clock synchronisation error, s. Recorded but small enough to ignore.
    pub sync_error: f64,
}

impl SafetyParams {
    pub fn new(l_pos: f64, l_trk: f64) -> Result<Self, SafetyError> {
        Ok(SafetyParams {
            l_pos,
            l_trk,
            s_safe: safe_spacing(l_pos, l_trk)?,
            sync_error: 3e-9,
        })
    }
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams::new(0.02, 0.6).expect("default budget is valid")
    }
}

/// Safe spacing between consecutive planned vehicles: 2 (l_pos + l_trk).
pub fn safe_spacing(l_pos: f64, l_trk: f64) -> Result<f64, SafetyError> {
    if l_pos < 0.0 || l_trk < 0.0 {
        return Err(SafetyError::NegativeInput);
    }
    Ok(2.0 * (l_pos + l_trk))
}

/// Minimum mainline gap a ramp vehicle of body length `l_v` can merge into:
/// 2 s_safe + l_v.
pub fn min_merge_gap(s_safe: f64, l_v: f64) -> Result<f64, SafetyError> {
    if s_safe < 0.0 || l_v < 0.0 {
        return Err(SafetyError::NegativeInput);
    }
    Ok(2.0 * s_safe + l_v)
}

/// Timing of a ramp vehicle's run to the merge point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RampArrival {
    /// Time on the normal ramp section at the entry speed, s.
    pub t_normal: f64,
    /// Acceleration time on the acceleration lane, s.
    pub t_accel: f64,
    /// Total time to the merge point, s.
    pub t_r: f64,
    /// Merge point: where the merge speed is reached on the acceleration
    /// lane, m from the lane start.
    pub x_merge: f64,
}

/// Plan the ramp vehicle's run: cruise from `x_r` (<= 0) to the acceleration
/// lane at `v0`, then accelerate at `a_r` until `v_merge`.
///
/// The merge point is dynamic: it is wherever `v_merge` is attained, and it
/// must lie within the acceleration lane.
pub fn ramp_arrival_time(
    x_r: f64,
    v0: f64,
    a_r: f64,
    v_merge: f64,
    layout: &RoadLayout,
) -> Result<RampArrival, SafetyError> {
    if v0 <= 0.0 {
        return Err(SafetyError::BadInput("entry speed must be positive"));
    }
    if a_r <= 0.0 {
        return Err(SafetyError::BadInput("ramp acceleration must be positive"));
    }
    if x_r > 0.0 {
        return Err(SafetyError::BadInput(
            "ramp vehicle must be upstream of the acceleration lane",
        ));
    }
    if v_merge < v0 {
        return Err(SafetyError::BadInput("merge speed below entry speed"));
    }
    if v_merge < layout.v_lim_min || v_merge > layout.v_lim_max {
        return Err(SafetyError::SpeedWindowViolation {
            v_merge,
            lo: layout.v_lim_min,
            hi: layout.v_lim_max,
        });
    }
    let t_normal = -x_r / v0;
    let t_accel = (v_merge - v0) / a_r;
    let x_merge = v0 * t_accel + 0.5 * a_r * t_accel * t_accel;
    if x_merge > layout.accel_lane_len + 1e-9 {
        return Err(SafetyError::MergeBeyondLaneEnd {
            x_merge,
            lane_len: layout.accel_lane_len,
        });
    }
    Ok(RampArrival {
        t_normal,
        t_accel,
        t_r: t_normal + t_accel,
        x_merge,
    })
}

/// Admissible acceleration durations on the acceleration lane: long enough to
/// reach the outer-lane speed floor, short enough to stay within the lane.
///
/// The lower bound clamps at zero when the vehicle already satisfies the
/// speed floor at entry.
pub fn accel_time_window(
    v0: f64,
    a_r: f64,
    l_b: f64,
    v_lim_min: f64,
) -> Result<(f64, f64), SafetyError> {
    if v0 <= 0.0 || a_r <= 0.0 || l_b <= 0.0 {
        return Err(SafetyError::BadInput("v0, a_r and l_b must be positive"));
    }
    let t_lo = ((v_lim_min - v0) / a_r).max(0.0);
    let t_hi = ((v0 * v0 + 2.0 * a_r * l_b).sqrt() - v0) / a_r;
    if t_lo > t_hi {
        return Err(SafetyError::EmptyWindow);
    }
    Ok((t_lo, t_hi))
}
