//! Closed-form constraint solvers behind the cooperative merge strategies.
//!
//! All functions are pure. Positions follow the shared axis (x = 0 at the
//! acceleration-lane start, upstream negative); the `s_*` arguments are
//! distances to the lane start (s = -x) as used by the lane-change
//! conditions. Every solver returns the minimal (or, for the ramp
//! adjustment, maximal) feasible value; infeasibility is an error the
//! dispatcher uses to fall through its strategy ladder.

use crate::model::VehicleState;
use crate::safety::{accel_time_window, SafetyError, SafetyParams};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SolveError {
    #[error("cooperation time outside its admissible window")]
    EmptyTimeWindow,
    #[error("required deceleration {required:.3} exceeds the class limit {limit:.3}")]
    DecelBound { required: f64, limit: f64 },
    #[error("required acceleration {required:.3} exceeds the safe bound {limit:.3}")]
    AccelBound { required: f64, limit: f64 },
    #[error("required deceleration would stop the vehicle before the horizon")]
    WouldStop,
    #[error("merge speed window violated")]
    SpeedWindow,
    #[error("no acceleration duration satisfies the lane and rear-gap constraints")]
    NoAccelTime,
    #[error("fixed-point iteration on the merge speed did not converge")]
    NoConvergence,
    #[error("insertion closing speed beyond the recoverable margin")]
    ClosingSpeed,
    #[error("{0}")]
    Safety(#[from] SafetyError),
    #[error("invalid input: {0}")]
    BadInput(&'static str),
}

/// Which cooperative route the gap pattern around the insertion slot allows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaneChangeCase {
    /// Both inner-lane gaps already suffice: change lanes directly.
    Direct,
    /// Front gap suffices, rear gap short: the inner follower decelerates.
    FollowerDecel,
    /// Rear gap suffices, front gap short: the inner leader accelerates.
    LeaderAccel,
    /// Both gaps short: leave the inner lane alone and adjust the
    /// cooperative vehicle on the outer lane instead.
    CoopAccel,
}

/// Total partition of the (front gap, rear gap) plane at threshold `s_safe`.
pub fn classify_lane_change_case(s_f: f64, s_b: f64, s_safe: f64) -> LaneChangeCase {
    match (s_f >= s_safe, s_b >= s_safe) {
        (true, true) => LaneChangeCase::Direct,
        (true, false) => LaneChangeCase::FollowerDecel,
        (false, true) => LaneChangeCase::LeaderAccel,
        (false, false) => LaneChangeCase::CoopAccel,
    }
}

/// Minimum deceleration of the inner-lane follower so that, after the
/// cooperative vehicle changes lanes at time `t_q1`, the follower sits at
/// least `s_safe` behind it.
///
/// `s_p`/`s_q1` are distances to the lane start, `l_p` the changing
/// vehicle's body length, `decel_max` the follower's braking limit.
#[allow(clippy::too_many_arguments)]
pub fn solve_follower_decel(
    s_p: f64,
    s_q1: f64,
    v_p: f64,
    v_q1: f64,
    t_q1: f64,
    safety: &SafetyParams,
    l_p: f64,
    decel_max: f64,
) -> Result<f64, SolveError> {
    if v_p <= 0.0 {
        return Err(SolveError::BadInput("cooperative speed must be positive"));
    }
    if t_q1 <= 0.0 || t_q1 > s_p / v_p {
        return Err(SolveError::EmptyTimeWindow);
    }
    let need = 2.0 * (v_q1 * t_q1 - v_p * t_q1 - s_q1 + s_p + l_p + safety.s_safe)
        / (t_q1 * t_q1);
    let a = need.max(0.0);
    if a > decel_max {
        return Err(SolveError::DecelBound {
            required: a,
            limit: decel_max,
        });
    }
    if a * t_q1 > v_q1 {
        return Err(SolveError::WouldStop);
    }
    Ok(a)
}

/// Latest admissible cooperation time before the inner follower would close
/// to within `s_safe` of the changing vehicle; `None` when unconstrained.
pub fn leader_accel_time_limit(
    s_p: f64,
    s_q1: f64,
    v_p: f64,
    v_q1: f64,
    s_safe: f64,
    l_p: f64,
) -> Option<f64> {
    if v_q1 > v_p {
        Some((s_q1 - s_p - s_safe - l_p) / (v_q1 - v_p))
    } else {
        None
    }
}

/// Minimum acceleration of the inner-lane leader so that, after the
/// cooperative vehicle changes lanes at `t_q`, it sits at least `s_safe`
/// behind the leader, subject to the follower not being outrun.
///
/// `a_safe_q` caps the leader's acceleration (its class limit, possibly
/// tightened by its own car-following situation); `a_min` is the class
/// lower acceleration bound.
#[allow(clippy::too_many_arguments)]
pub fn solve_leader_accel(
    s_p: f64,
    s_q: f64,
    s_q1: f64,
    v_p: f64,
    v_q: f64,
    v_q1: f64,
    t_q: f64,
    safety: &SafetyParams,
    l_q: f64,
    l_p: f64,
    a_min: f64,
    a_safe_q: f64,
) -> Result<f64, SolveError> {
    if v_p <= 0.0 {
        return Err(SolveError::BadInput("cooperative speed must be positive"));
    }
    let mut t_max = s_p / v_p;
    if let Some(limit) = leader_accel_time_limit(s_p, s_q1, v_p, v_q1, safety.s_safe, l_p) {
        if limit <= 0.0 {
            return Err(SolveError::EmptyTimeWindow);
        }
        t_max = t_max.min(limit);
    }
    if t_q <= 0.0 || t_q > t_max {
        return Err(SolveError::EmptyTimeWindow);
    }
    let need =
        2.0 * (s_q + safety.s_safe + l_q - s_p + (v_p - v_q) * t_q) / (t_q * t_q);
    let a = need.max(0.0).max(a_min);
    if a > a_safe_q {
        return Err(SolveError::AccelBound {
            required: a,
            limit: a_safe_q,
        });
    }
    Ok(a)
}

/// Speed adjustments for the outer-lane neighbours around the merge slot.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GapFix {
    /// Extra distance the leading vehicle must gain, m.
    pub lead_delta: Option<f64>,
    /// Acceleration of the leading vehicle over `t_r`, m/s^2.
    pub lead_accel: Option<f64>,
    /// Distance the following vehicle must give up, m.
    pub rear_delta: Option<f64>,
    /// Deceleration magnitude of the following vehicle over `t_r`, m/s^2.
    pub rear_decel: Option<f64>,
}

/// After the cooperative vehicle has vacated the outer lane, check whether
/// its old neighbours leave the ramp vehicle enough room at the merge
/// instant, and solve the constant accelerations that restore `s_safe` on
/// whichever side falls short.
///
/// Projections run the neighbours at their current speeds for `t_r`. With
/// `literal_rate_form` the displacement-over-time quotient delta/t_r is used
/// as the acceleration, matching the source formulation; the default uses
/// the kinematically consistent 2 delta / t_r^2.
#[allow(clippy::too_many_arguments)]
pub fn post_lane_change_gap_fix(
    lead: Option<&VehicleState>,
    rear: Option<&VehicleState>,
    ramp_len: f64,
    x_r_merge: f64,
    t_r: f64,
    safety: &SafetyParams,
    lead_accel_max: f64,
    rear_decel_max: f64,
    literal_rate_form: bool,
) -> Result<GapFix, SolveError> {
    if t_r <= 0.0 {
        return Err(SolveError::BadInput("merge horizon must be positive"));
    }
    let mut fix = GapFix::default();
    let rate = |delta: f64| {
        if literal_rate_form {
            delta / t_r
        } else {
            2.0 * delta / (t_r * t_r)
        }
    };

    if let Some(lead) = lead {
        let x_lead = lead.x + lead.v * t_r;
        let gap = x_lead - x_r_merge - lead.length;
        if gap < safety.s_safe {
            let delta = safety.s_safe - gap;
            let a = rate(delta);
            if a > lead_accel_max {
                return Err(SolveError::AccelBound {
                    required: a,
                    limit: lead_accel_max,
                });
            }
            fix.lead_delta = Some(delta);
            fix.lead_accel = Some(a);
        }
    }

    if let Some(rear) = rear {
        let x_rear = rear.x + rear.v * t_r;
        let gap = x_r_merge - x_rear - ramp_len;
        if gap < safety.s_safe {
            let delta = safety.s_safe - gap;
            let a = rate(delta);
            if a > rear_decel_max {
                return Err(SolveError::DecelBound {
                    required: a,
                    limit: rear_decel_max,
                });
            }
            if a * t_r > rear.v {
                return Err(SolveError::WouldStop);
            }
            fix.rear_delta = Some(delta);
            fix.rear_decel = Some(a);
        }
    }

    Ok(fix)
}

/// The front-gap acceleration bound on the cooperative vehicle: the minimum
/// constant acceleration over `t_r` that puts it `s_safe` plus its body
/// length ahead of the ramp vehicle's merge point.
pub fn coop_accel_bound(
    x_merge: f64,
    t_r: f64,
    x_p: f64,
    v_p: f64,
    s_safe: f64,
    l_p: f64,
) -> f64 {
    2.0 * (x_merge + s_safe + l_p - x_p - v_p * t_r) / (t_r * t_r)
}

/// Inputs of the cooperative-acceleration strategy (the outer-lane vehicle
/// speeds up to clear the slot while the ramp vehicle accelerates to meet
/// it).
#[derive(Clone, Copy, Debug)]
pub struct CoopAccelInput {
    /// Ramp vehicle position (<= 0) and entry speed.
    pub x_r: f64,
    pub v0: f64,
    /// Nominal ramp acceleration on the acceleration lane.
    pub a_r: f64,
    /// Cooperative vehicle position (< 0) and speed.
    pub x_p: f64,
    pub v_p: f64,
    /// Outer-lane follower of the cooperative vehicle, if any: (x, v).
    pub rear: Option<(f64, f64)>,
    /// Body lengths: cooperative vehicle and ramp vehicle.
    pub l_p: f64,
    pub l_r: f64,
    /// Acceleration cap of the cooperative vehicle.
    pub accel_max_p: f64,
    /// Lane geometry and speed window.
    pub l_b: f64,
    pub v_lim_min: f64,
    pub v_lim_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoopAccelSolution {
    pub t_accel: f64,
    pub t_r: f64,
    pub x_merge: f64,
    /// Cooperative vehicle's constant acceleration over `t_r`.
    pub a_p: f64,
    /// Ramp vehicle's speed at the merge point.
    pub v_merge: f64,
    /// Cooperative vehicle's speed at the merge instant.
    pub v_p_merge: f64,
    pub iterations: u32,
}

/// Solve the coupled merge: the ramp vehicle's acceleration time fixes the
/// merge point and time, the cooperative vehicle's acceleration must clear
/// the front gap there, and its resulting merge speed feeds back into the
/// acceleration time. Iterated to a fixed point on the merge speed
/// (tolerance 1e-4 m/s, at most 100 rounds).
pub fn solve_coop_accel(input: &CoopAccelInput, safety: &SafetyParams) -> Result<CoopAccelSolution, SolveError> {
    if input.v0 <= 0.0 || input.a_r <= 0.0 {
        return Err(SolveError::BadInput("ramp speed and acceleration must be positive"));
    }
    if input.x_r > 0.0 {
        return Err(SolveError::BadInput("ramp vehicle must be upstream of the lane start"));
    }
    let t_n = -input.x_r / input.v0;
    let (win_lo, win_hi) =
        accel_time_window(input.v0, input.a_r, input.l_b, input.v_lim_min)?;
    // The speed ceiling tightens the lane-length upper bound.
    let t_hi = win_hi.min((input.v_lim_max - input.v0) / input.a_r);
    if win_lo > t_hi {
        return Err(SolveError::NoAccelTime);
    }

    let x_merge_at = |t_a: f64| input.v0 * t_a + 0.5 * input.a_r * t_a * t_a;
    // Rear-gap shortfall at the merge instant for a candidate duration.
    let rear_gap = |t_a: f64| -> f64 {
        match input.rear {
            Some((x1, v1)) => {
                x_merge_at(t_a) - (x1 + v1 * (t_n + t_a)) - input.l_r - safety.s_safe
            }
            None => f64::INFINITY,
        }
    };

    let mut target = input.v_p; // working guess for the matched merge speed
    for iterations in 1..=100u32 {
        let mut t_a = ((target - input.v0) / input.a_r).clamp(win_lo, t_hi);
        if rear_gap(t_a) < 0.0 {
            // Push the merge later until the follower's projected position
            // clears; the positive quadratic root mirrors the rear-gap
            // condition solved for the acceleration time.
            let (x1, v1) = input.rear.expect("rear constraint only binds with a follower");
            let half_a = 0.5 * input.a_r;
            let b = input.v0 - v1;
            let c = -(x1 + v1 * t_n + input.l_r + safety.s_safe);
            let disc = b * b - 4.0 * half_a * c;
            if disc < 0.0 {
                return Err(SolveError::NoAccelTime);
            }
            let root = (-b + disc.sqrt()) / (2.0 * half_a);
            if root > t_hi + 1e-9 || rear_gap(root.clamp(win_lo, t_hi)) < -1e-6 {
                return Err(SolveError::NoAccelTime);
            }
            t_a = root.clamp(win_lo, t_hi);
        }

        let t_r = t_n + t_a;
        let x_merge = x_merge_at(t_a);
        let bound = coop_accel_bound(x_merge, t_r, input.x_p, input.v_p, safety.s_safe, input.l_p);
        let a_p = bound.max(0.0);
        if a_p > input.accel_max_p {
            return Err(SolveError::AccelBound {
                required: a_p,
                limit: input.accel_max_p,
            });
        }
        if input.v_p + a_p * t_r > input.v_lim_max + 1e-9 {
            return Err(SolveError::SpeedWindow);
        }
        let v_p_merge = input.v_p + a_p * t_r;

        if (v_p_merge - target).abs() < 1e-4 {
            return Ok(CoopAccelSolution {
                t_accel: t_a,
                t_r,
                x_merge,
                a_p,
                v_merge: input.v0 + input.a_r * t_a,
                v_p_merge,
                iterations,
            });
        }
        target = v_p_merge;
    }
    Err(SolveError::NoConvergence)
}

/// Inputs of the ramp-acceleration adjustment (the cooperative vehicle holds
/// its speed; the ramp vehicle picks its acceleration to slot in behind it).
#[derive(Clone, Copy, Debug)]
pub struct RampAdjustInput {
    pub x_r: f64,
    pub v0: f64,
    pub x_p: f64,
    pub v_p: f64,
    /// Outer-lane follower, if any: (x, v, decel_max).
    pub rear: Option<(f64, f64, f64)>,
    /// Cooperative vehicle's body length (its class decides the front-gap
    /// constant) and the ramp vehicle's body length.
    pub coop_len: f64,
    pub l_r: f64,
    /// Ramp vehicle's admissible acceleration range.
    pub a_min: f64,
    pub a_max: f64,
    pub l_b: f64,
    pub v_lim_min: f64,
    pub v_lim_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RampAdjustSolution {
    pub a_ramp: f64,
    pub t_accel: f64,
    pub t_r: f64,
    pub x_merge: f64,
    /// Merge speed (the cooperative vehicle's unchanged speed).
    pub v_merge: f64,
    /// Deceleration asked of the outer-lane follower, if its projected gap
    /// falls short.
    pub rear_decel: Option<f64>,
}

/// Front gap at the merge instant as a function of the ramp acceleration.
/// Decreasing in `a` (a harder acceleration merges earlier, leaving the
/// constant-speed leader less far along), so the feasible set is an
/// interval whose maximum is the fastest safe merge.
fn ramp_adjust_front_gap(input: &RampAdjustInput, a: f64) -> f64 {
    let t_n = -input.x_r / input.v0;
    let t_r = t_n + (input.v_p - input.v0) / a;
    let x_merge = (input.v_p * input.v_p - input.v0 * input.v0) / (2.0 * a);
    input.x_p + input.v_p * t_r - x_merge - input.coop_len
}

pub fn solve_ramp_accel_adjust(
    input: &RampAdjustInput,
    safety: &SafetyParams,
) -> Result<RampAdjustSolution, SolveError> {
    if input.v0 <= 0.0 || input.x_r > 0.0 {
        return Err(SolveError::BadInput("ramp vehicle must be upstream at positive speed"));
    }
    if input.v_p <= input.v0 {
        return Err(SolveError::BadInput("strategy needs the cooperative vehicle faster than the ramp entry speed"));
    }
    if input.v_p < input.v_lim_min || input.v_p > input.v_lim_max {
        return Err(SolveError::SpeedWindow);
    }
    let t_n = -input.x_r / input.v0;

    // Lane-length feasibility bounds the acceleration from below.
    let a_lane = (input.v_p * input.v_p - input.v0 * input.v0) / (2.0 * input.l_b);
    let lo = input.a_min.max(a_lane);

    // Front-gap condition, rearranged: only a valid upper bound when its
    // denominator is positive; otherwise every acceleration passes the
    // direct check.
    let denom = safety.s_safe + input.coop_len - input.x_p - input.v_p * t_n;
    let mut hi = input.a_max;
    if denom > 0.0 {
        let dv = input.v_p - input.v0;
        hi = hi.min(dv * dv / (2.0 * denom));
    }
    if lo > hi || hi <= 0.0 {
        return Err(SolveError::NoAccelTime);
    }
    let a_ramp = hi;
    // Direct re-check of the original constraint at the chosen value.
    if ramp_adjust_front_gap(input, a_ramp) < safety.s_safe - 1e-9 {
        return Err(SolveError::NoAccelTime);
    }

    let t_accel = (input.v_p - input.v0) / a_ramp;
    let t_r = t_n + t_accel;
    let x_merge = (input.v_p * input.v_p - input.v0 * input.v0) / (2.0 * a_ramp);

    let mut rear_decel = None;
    if let Some((x1, v1, decel_max)) = input.rear {
        let gap = x_merge - (x1 + v1 * t_r) - input.l_r;
        if gap < safety.s_safe {
            let a =
                2.0 * (safety.s_safe + input.l_r + x1 + v1 * t_r - x_merge) / (t_r * t_r);
            if a > decel_max {
                return Err(SolveError::DecelBound {
                    required: a,
                    limit: decel_max,
                });
            }
            if a * t_r > v1 {
                return Err(SolveError::WouldStop);
            }
            rear_decel = Some(a);
        }
    }

    Ok(RampAdjustSolution {
        a_ramp,
        t_accel,
        t_r,
        x_merge,
        v_merge: input.v_p,
        rear_decel,
    })
}
