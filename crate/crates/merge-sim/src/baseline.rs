//! Uncontrolled traffic: IDM car-following and a reduced gap-acceptance
//! lane-change model.
//!
//! The lane-change model keeps the structure of SUMO's LC2013 at the level
//! the scenario needs: a safety criterion (minimum gap plus bounded induced
//! deceleration for both the subject and the new follower) and a speed-gain
//! incentive. Mandatory merges from the acceleration lane skip the incentive.

use serde::{Deserialize, Serialize};

use crate::model::{bumper_gap, RoadLayout, VehicleClassParams, VehicleState};

/// IDM parameters for one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Minimum standstill gap s0, m.
    pub s0: f64,
    /// Desired time headway T, s.
    pub t_headway: f64,
    /// Maximum acceleration, m/s^2.
    pub accel: f64,
    /// Comfortable (maximum) deceleration, m/s^2, positive.
    pub decel: f64,
    /// Free-flow exponent.
    pub delta: f64,
    /// Desired speed, m/s.
    pub v_des: f64,
}

impl IdmParams {
    pub fn for_class(class: &VehicleClassParams, v_des: f64) -> Self {
        IdmParams {
            s0: 2.0,
            t_headway: 1.0,
            accel: class.accel_max,
            decel: class.decel_max,
            delta: 4.0,
            v_des,
        }
    }
}

/// IDM output; `emergency` marks a call with a non-positive gap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdmAccel {
    pub a: f64,
    pub emergency: bool,
}

/// IDM acceleration toward a leader `gap` metres ahead travelling at
/// `v_leader`. Use `f64::INFINITY` when there is no leader.
///
/// A non-positive gap returns full braking and flags an emergency; the
/// caller logs it as a conflict event.
pub fn idm_acceleration(v: f64, v_leader: f64, gap: f64, p: &IdmParams) -> IdmAccel {
    if gap <= 0.0 {
        return IdmAccel {
            a: -p.decel,
            emergency: true,
        };
    }
    let free = 1.0 - (v / p.v_des).powi(p.delta as i32);
    let dynamic = v * p.t_headway + v * (v - v_leader) / (2.0 * (p.accel * p.decel).sqrt());
    let s_star = p.s0 + dynamic.max(0.0);
    let a = p.accel * (free - (s_star / gap).powi(2));
    IdmAccel {
        a: a.clamp(-p.decel, p.accel),
        emergency: false,
    }
}

/// Weights of the reduced lane-change model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeParams {
    /// Willingness to perform route-mandated changes; non-positive disables
    /// them.
    pub strategic_weight: f64,
    /// Scales how hard a new follower may be asked to brake.
    pub cooperative_weight: f64,
    /// Scales the speed-gain incentive.
    pub speedgain_weight: f64,
    /// Acceleration advantage (m/s^2) required before a discretionary change
    /// pays off, before weighting.
    pub speedgain_threshold: f64,
    /// Cap on induced decelerations; `None` uses each vehicle's class limit.
    pub safety_decel_limit: Option<f64>,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        LaneChangeParams {
            strategic_weight: 1.0,
            cooperative_weight: 1.0,
            speedgain_weight: 1.0,
            speedgain_threshold: 0.1,
            safety_decel_limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaneChangeChoice {
    Stay,
    ChangeLane,
}

/// Neighbourhood of a prospective lane change.
#[derive(Clone, Copy, Debug, Default)]
pub struct LaneChangeScene<'a> {
    pub cur_leader: Option<&'a VehicleState>,
    pub target_leader: Option<&'a VehicleState>,
    pub target_follower: Option<&'a VehicleState>,
}

/// Gap-acceptance lane-change decision.
///
/// `subject_idm` evaluates the subject in either lane (only `v_des` differs
/// between lanes here); `follower_idm` evaluates the prospective follower.
/// The caller guarantees the target lane admits the subject's class.
pub fn lane_change_decision(
    subject: &VehicleState,
    scene: &LaneChangeScene,
    subject_idm: &IdmParams,
    target_idm: &IdmParams,
    follower_idm: Option<&IdmParams>,
    subject_decel_max: f64,
    follower_decel_max: f64,
    mandatory: bool,
    p: &LaneChangeParams,
) -> LaneChangeChoice {
    if mandatory && p.strategic_weight <= 0.0 {
        return LaneChangeChoice::Stay;
    }

    // Safety: both new-neighbour gaps at least s0.
    let lead_gap = scene
        .target_leader
        .map(|l| bumper_gap(l, subject))
        .unwrap_or(f64::INFINITY);
    let follow_gap = scene
        .target_follower
        .map(|f| bumper_gap(subject, f))
        .unwrap_or(f64::INFINITY);
    if lead_gap < target_idm.s0 || follow_gap < target_idm.s0 {
        return LaneChangeChoice::Stay;
    }

    // Safety: bounded induced decelerations after the change.
    let subject_limit = p.safety_decel_limit.unwrap_or(subject_decel_max);
    let lead_v = scene.target_leader.map(|l| l.v).unwrap_or(subject.v);
    let a_subject = idm_acceleration(subject.v, lead_v, lead_gap, target_idm).a;
    if a_subject < -subject_limit {
        return LaneChangeChoice::Stay;
    }
    if let (Some(follower), Some(f_idm)) = (scene.target_follower, follower_idm) {
        let follower_limit =
            p.safety_decel_limit.unwrap_or(follower_decel_max) * p.cooperative_weight;
        let a_follower = idm_acceleration(follower.v, subject.v, follow_gap, f_idm).a;
        if a_follower < -follower_limit {
            return LaneChangeChoice::Stay;
        }
    }

    if mandatory {
        return LaneChangeChoice::ChangeLane;
    }

    // Incentive: anticipated IDM acceleration gain in the target lane.
    let cur_gap = scene
        .cur_leader
        .map(|l| bumper_gap(l, subject))
        .unwrap_or(f64::INFINITY);
    let cur_lead_v = scene.cur_leader.map(|l| l.v).unwrap_or(subject.v);
    let a_current = idm_acceleration(subject.v, cur_lead_v, cur_gap, subject_idm).a;
    if p.speedgain_weight * (a_subject - a_current) > p.speedgain_threshold {
        LaneChangeChoice::ChangeLane
    } else {
        LaneChangeChoice::Stay
    }
}

/// Longitudinal command for an uncontrolled ramp vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RampBehavior {
    pub accel: f64,
    /// Gap accepted this step: switch to the outer lane now.
    pub merge: bool,
    /// Standing at the acceleration-lane end with no accepted gap.
    pub forced_stop: bool,
    pub emergency: bool,
}

/// Uncontrolled ramp driving: cruise on the normal section, then chase the
/// outer-lane speed on the acceleration lane against a virtual wall at its
/// end, attempting a gap-acceptance merge every step.
#[allow(clippy::too_many_arguments)]
pub fn uncontrolled_ramp_behavior(
    subject: &VehicleState,
    ramp_leader: Option<&VehicleState>,
    outer_leader: Option<&VehicleState>,
    outer_follower: Option<&VehicleState>,
    layout: &RoadLayout,
    ramp_idm: &IdmParams,
    outer_idm: &IdmParams,
    follower_params: Option<(&IdmParams, f64)>,
    subject_decel_max: f64,
    lc: &LaneChangeParams,
) -> RampBehavior {
    let on_accel_lane = subject.x >= 0.0;
    let idm = if on_accel_lane { outer_idm } else { ramp_idm };

    let leader_gap = ramp_leader
        .map(|l| bumper_gap(l, subject))
        .unwrap_or(f64::INFINITY);
    let leader_v = ramp_leader.map(|l| l.v).unwrap_or(0.0);
    let mut response = idm_acceleration(subject.v, leader_v, leader_gap, idm);

    let mut merge = false;
    let mut forced_stop = false;
    if on_accel_lane {
        // Virtual wall at the lane end: brake as if following a stopped
        // leader whose rear bumper sits at x = accel_lane_len.
        let wall_gap = layout.accel_lane_len - subject.x;
        let wall = idm_acceleration(subject.v, 0.0, wall_gap.max(1e-6), idm);
        if wall.a < response.a {
            response = IdmAccel {
                a: wall.a,
                emergency: response.emergency,
            };
        }

        let scene = LaneChangeScene {
            cur_leader: ramp_leader,
            target_leader: outer_leader,
            target_follower: outer_follower,
        };
        let (follower_idm, follower_decel) = match follower_params {
            Some((p, d)) => (Some(p), d),
            None => (None, 0.0),
        };
        merge = lane_change_decision(
            subject,
            &scene,
            idm,
            outer_idm,
            follower_idm,
            subject_decel_max,
            follower_decel,
            true,
            lc,
        ) == LaneChangeChoice::ChangeLane;
        forced_stop = !merge && subject.v < 0.1 && wall_gap < 5.0;
    }

    RampBehavior {
        accel: response.a,
        merge,
        forced_stop,
        emergency: response.emergency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassCatalog, Lane, Role, VehicleClass, VehicleId};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cav_idm(v_des: f64) -> IdmParams {
        IdmParams::for_class(&ClassCatalog::default().cav, v_des)
    }

    fn veh(id: u64, lane: Lane, x: f64, v: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            class: VehicleClass::Cav,
            length: 5.0,
            lane,
            x,
            v,
            a: 0.0,
            role: Role::Background,
        }
    }

    #[test]
    fn free_flow_equilibrium() {
        let p = cav_idm(27.78);
        let out = idm_acceleration(27.78, 0.0, f64::INFINITY, &p);
        assert_abs_diff_eq!(out.a, 0.0, epsilon = 1e-12);
        assert!(!out.emergency);
    }

    #[test]
    fn standing_start_max_accel() {
        let p = cav_idm(27.78);
        let out = idm_acceleration(0.0, 0.0, f64::INFINITY, &p);
        assert_abs_diff_eq!(out.a, p.accel, epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_following_deficit() {
        // At gap == s* with matched speeds only the free-flow term is
        // counteracted by the full interaction term.
        let p = cav_idm(27.78);
        let s_star = 2.0 + 20.0 * 1.0;
        let out = idm_acceleration(20.0, 20.0, s_star, &p);
        assert_abs_diff_eq!(out.a, -0.6715, epsilon = 5e-4);
    }

    #[test]
    fn zero_gap_is_emergency() {
        let p = cav_idm(27.78);
        let out = idm_acceleration(10.0, 10.0, 0.0, &p);
        assert!(out.emergency);
        assert_eq!(out.a, -p.decel);
    }

    #[test]
    fn ample_gaps_accept_change() {
        let subject = veh(1, Lane::MainlineOuter, 0.0, 20.0);
        let leader = veh(2, Lane::MainlineInner, 55.0, 27.0);
        let follower = veh(3, Lane::MainlineInner, -55.0, 20.0);
        let cur_leader = veh(4, Lane::MainlineOuter, 18.0, 16.0);
        let idm = cav_idm(27.78);
        let scene = LaneChangeScene {
            cur_leader: Some(&cur_leader),
            target_leader: Some(&leader),
            target_follower: Some(&follower),
        };
        let choice = lane_change_decision(
            &subject,
            &scene,
            &idm,
            &idm,
            Some(&idm),
            4.5,
            4.5,
            false,
            &LaneChangeParams::default(),
        );
        assert_eq!(choice, LaneChangeChoice::ChangeLane);
    }

    #[test]
    fn follower_gap_below_s0_vetoes() {
        let subject = veh(1, Lane::MainlineOuter, 0.0, 20.0);
        let follower = veh(3, Lane::MainlineInner, -6.0, 20.0); // gap 1 m < s0
        let idm = cav_idm(27.78);
        let scene = LaneChangeScene {
            cur_leader: None,
            target_leader: None,
            target_follower: Some(&follower),
        };
        let choice = lane_change_decision(
            &subject,
            &scene,
            &idm,
            &idm,
            Some(&idm),
            4.5,
            4.5,
            false,
            &LaneChangeParams::default(),
        );
        assert_eq!(choice, LaneChangeChoice::Stay);
    }

    #[test]
    fn mandatory_merge_at_exact_s0() {
        // Matched speeds at gap == s0: induced decelerations stay within the
        // class limit (checked against the IDM formula directly), so the
        // mandatory path accepts.
        let subject = veh(1, Lane::AccelLane, 50.0, 20.0);
        let leader = veh(2, Lane::MainlineOuter, 57.0, 20.0); // gap exactly 2
        let follower = veh(3, Lane::MainlineOuter, 43.0, 20.0); // gap exactly 2
        let idm = cav_idm(27.78);
        let scene = LaneChangeScene {
            cur_leader: None,
            target_leader: Some(&leader),
            target_follower: Some(&follower),
        };

        let induced = idm_acceleration(20.0, 20.0, 2.0, &idm).a;
        assert!(induced >= -4.5);

        let choice = lane_change_decision(
            &subject,
            &scene,
            &idm,
            &idm,
            Some(&idm),
            4.5,
            4.5,
            true,
            &LaneChangeParams::default(),
        );
        assert_eq!(choice, LaneChangeChoice::ChangeLane);
    }

    #[test]
    fn empty_outer_lane_merges_immediately() {
        let layout = RoadLayout::default();
        let subject = veh(1, Lane::AccelLane, 5.0, 16.67);
        let idm_ramp = cav_idm(16.67);
        let idm_outer = cav_idm(27.78);
        let out = uncontrolled_ramp_behavior(
            &subject,
            None,
            None,
            None,
            &layout,
            &idm_ramp,
            &idm_outer,
            None,
            4.5,
            &LaneChangeParams::default(),
        );
        assert!(out.merge);
        assert!(!out.forced_stop);
    }

    #[test]
    fn wall_forces_stop_when_no_gap() {
        let layout = RoadLayout::default();
        // Standing at the lane end with a blocking outer vehicle alongside.
        let subject = veh(1, Lane::AccelLane, 197.0, 0.05);
        let blocker = veh(2, Lane::MainlineOuter, 198.0, 20.0);
        let idm_outer = cav_idm(27.78);
        let out = uncontrolled_ramp_behavior(
            &subject,
            None,
            Some(&blocker),
            None,
            &layout,
            &cav_idm(16.67),
            &idm_outer,
            None,
            4.5,
            &LaneChangeParams::default(),
        );
        assert!(!out.merge);
        assert!(out.forced_stop);
        assert!(out.accel <= 0.0);
    }

    proptest! {
        /// The safety veto: no change is ever accepted with a new-neighbour
        /// gap below s0.
        #[test]
        fn no_change_with_tight_gap(
            lead_gap in -3.0f64..60.0,
            follow_gap in -3.0f64..60.0,
            v in 5.0f64..30.0,
            v_lead in 5.0f64..30.0,
            v_follow in 5.0f64..30.0,
            mandatory in proptest::bool::ANY,
        ) {
            let idm = cav_idm(27.78);
            let subject = veh(1, Lane::MainlineOuter, 0.0, v);
            let leader = veh(2, Lane::MainlineInner, lead_gap + 5.0, v_lead);
            let follower = veh(3, Lane::MainlineInner, -(follow_gap + 5.0), v_follow);
            let scene = LaneChangeScene {
                cur_leader: None,
                target_leader: Some(&leader),
                target_follower: Some(&follower),
            };
            let choice = lane_change_decision(
                &subject, &scene, &idm, &idm, Some(&idm), 4.5, 4.5, mandatory,
                &LaneChangeParams::default(),
            );
            if lead_gap < idm.s0 || follow_gap < idm.s0 {
                prop_assert_eq!(choice, LaneChangeChoice::Stay);
            }
        }

        /// Pure IDM following never produces a negative gap from a
        /// recoverable initial condition (gap >= s0, |dv| <= 10, and the gap
        /// covers the closing distance achievable at the class deceleration)
        /// with the default parameters and dt = 0.1.
        #[test]
        fn idm_following_soak(
            gap0 in 2.0f64..80.0,
            v_f in 0.0f64..27.78,
            dv in -10.0f64..10.0,
        ) {
            let idm = cav_idm(27.78);
            let v_l0 = (v_f + dv).clamp(0.0, 27.78);
            let closing = (v_f - v_l0).max(0.0);
            // A faster follower needs room to shed the speed difference.
            prop_assume!(gap0 >= closing * closing / (2.0 * 3.0));
            let (mut x_l, mut v_l) = (gap0 + 5.0, v_l0);
            let (mut x_f, mut v_f) = (0.0, v_f);
            let dt = 0.1;
            for _ in 0..1200 {
                let gap = x_l - x_f - 5.0;
                prop_assert!(gap >= 0.0, "gap went negative: {}", gap);
                let a_f = idm_acceleration(v_f, v_l, gap, &idm).a;
                (x_l, v_l) = crate::model::advance_constant_accel(x_l, v_l, 0.0, dt);
                (x_f, v_f) = crate::model::advance_constant_accel(x_f, v_f, a_f, dt);
            }
        }
    }
}
