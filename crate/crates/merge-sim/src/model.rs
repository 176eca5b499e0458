//! Road geometry, vehicle state and piecewise constant-acceleration plans.
//!
//! Coordinate convention: the longitudinal axis `x` increases in the travel
//! direction and is shared by all lanes. `x = 0` is the start of the parallel
//! acceleration lane; everything upstream of it is negative. Distances "to the
//! start of the acceleration lane" used by the cooperative solvers are
//! therefore `S = -x`. Vehicle positions are always FRONT-bumper positions,
//! so every leader/follower gap subtracts the leader's body length.

use serde::{Deserialize, Serialize};

/// Vehicle class: passenger car (CAV) or truck (CAT).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Cav,
    Cat,
}

impl VehicleClass {
    pub fn label(self) -> &'static str {
        match self {
            VehicleClass::Cav => "CAV",
            VehicleClass::Cat => "CAT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "CAV" | "cav" => Some(VehicleClass::Cav),
            "CAT" | "cat" => Some(VehicleClass::Cat),
            _ => None,
        }
    }
}

/// Per-class kinematic limits and body length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleClassParams {
    /// Body length in m.
    pub length: f64,
    /// Maximum acceleration in m/s^2.
    pub accel_max: f64,
    /// Maximum deceleration magnitude in m/s^2 (positive number).
    pub decel_max: f64,
    /// Lower bound used when a solver asks for a minimum positive
    /// acceleration. Never stated in the reference data; defaults to 0.
    pub accel_min: f64,
}

impl VehicleClassParams {
    pub fn cav() -> Self {
        VehicleClassParams {
            length: 5.0,
            accel_max: 2.5,
            decel_max: 4.5,
            accel_min: 0.0,
        }
    }

    pub fn cat() -> Self {
        VehicleClassParams {
            length: 7.0,
            accel_max: 1.5,
            decel_max: 4.0,
            accel_min: 0.0,
        }
    }
}

/// The two class parameter sets used by a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub cav: VehicleClassParams,
    pub cat: VehicleClassParams,
}

impl Default for ClassCatalog {
    fn default() -> Self {
        ClassCatalog {
            cav: VehicleClassParams::cav(),
            cat: VehicleClassParams::cat(),
        }
    }
}

impl ClassCatalog {
    pub fn get(&self, class: VehicleClass) -> &VehicleClassParams {
        match class {
            VehicleClass::Cav => &self.cav,
            VehicleClass::Cat => &self.cat,
        }
    }
}

/// Lane identifiers of the dual-mainline single-ramp layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lane {
    MainlineInner,
    MainlineOuter,
    RampNormal,
    AccelLane,
}

impl Lane {
    pub fn label(self) -> &'static str {
        match self {
            Lane::MainlineInner => "inner",
            Lane::MainlineOuter => "outer",
            Lane::RampNormal => "ramp",
            Lane::AccelLane => "accel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inner" => Some(Lane::MainlineInner),
            "outer" => Some(Lane::MainlineOuter),
            "ramp" => Some(Lane::RampNormal),
            "accel" => Some(Lane::AccelLane),
            _ => None,
        }
    }

    pub fn is_mainline(self) -> bool {
        matches!(self, Lane::MainlineInner | Lane::MainlineOuter)
    }

    /// Ramp-side lanes share the same physical axis as the outer lane.
    pub fn is_ramp_side(self) -> bool {
        matches!(self, Lane::RampNormal | Lane::AccelLane)
    }
}

/// Static geometry and speed regulation of the merge zone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    /// Length of the parallel acceleration lane in m (starts at x = 0).
    pub accel_lane_len: f64,
    /// Mainline length simulated upstream of the acceleration-lane start, m.
    pub upstream_len: f64,
    /// Length simulated downstream of the acceleration-lane start, m.
    pub downstream_len: f64,
    /// Length of the normal ramp section upstream of the acceleration lane, m.
    pub ramp_len: f64,
    /// Minimum speed limit of the outer lane, m/s.
    pub v_lim_min: f64,
    /// Maximum speed limit (design speed), m/s.
    pub v_lim_max: f64,
    /// The inner mainline lane only admits CAVs.
    pub inner_lane_cav_only: bool,
}

impl Default for RoadLayout {
    fn default() -> Self {
        RoadLayout {
            accel_lane_len: 200.0,
            upstream_len: 1000.0,
            downstream_len: 500.0,
            ramp_len: 300.0,
            v_lim_min: 60.0 / 3.6,
            v_lim_max: 100.0 / 3.6,
            inner_lane_cav_only: true,
        }
    }
}

impl RoadLayout {
    /// Spawn position for mainline vehicles.
    pub fn mainline_entry_x(&self) -> f64 {
        -self.upstream_len
    }

    /// Spawn position for ramp vehicles.
    pub fn ramp_entry_x(&self) -> f64 {
        -self.ramp_len
    }

    /// Exit boundary (vehicles leave the simulated section past this point).
    pub fn exit_x(&self) -> f64 {
        self.downstream_len
    }

    /// Section length traversed by mainline vehicles, m.
    pub fn mainline_section_len(&self) -> f64 {
        self.upstream_len + self.downstream_len
    }

    /// Section length traversed by ramp vehicles, m.
    pub fn ramp_section_len(&self) -> f64 {
        self.ramp_len + self.downstream_len
    }

    pub fn lane_admits(&self, lane: Lane, class: VehicleClass) -> bool {
        !(self.inner_lane_cav_only && lane == Lane::MainlineInner && class == VehicleClass::Cat)
    }
}

/// Stable vehicle identifier, assigned in spawn order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Role a vehicle plays in the currently active cooperative decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    RampTarget,
    Cooperative,
    InnerLeader,
    InnerFollower,
    OuterLeader,
    OuterFollower,
    Background,
}

/// Kinematic snapshot of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    /// Body length in m (resolved from the class catalog at spawn).
    pub length: f64,
    pub lane: Lane,
    /// Front-bumper position, m.
    pub x: f64,
    /// Speed, m/s. Never negative.
    pub v: f64,
    /// Signed acceleration currently applied, m/s^2.
    pub a: f64,
    pub role: Role,
}

impl VehicleState {
    /// Distance to the acceleration-lane start (positive while upstream).
    pub fn dist_to_lane_start(&self) -> f64 {
        -self.x
    }
}

/// Bumper-to-bumper gap between a leader and its follower on the same axis.
///
/// Negative values mean the two bodies overlap.
pub fn bumper_gap(leader: &VehicleState, follower: &VehicleState) -> f64 {
    leader.x - follower.x - leader.length
}

/// Advance a point-mass under constant acceleration for `dt` seconds.
///
/// Speed clamps at zero: a braking vehicle stops instead of reversing, having
/// advanced only v^2 / 2|a|.
pub fn advance_constant_accel(x: f64, v: f64, a: f64, dt: f64) -> (f64, f64) {
    debug_assert!(dt >= 0.0);
    if v + a * dt < 0.0 {
        // a < 0 here; the vehicle halts at t = -v/a within the step.
        (x + v * v / (2.0 * -a), 0.0)
    } else {
        (x + v * dt + 0.5 * a * dt * dt, v + a * dt)
    }
}

/// One constant-acceleration piece of a trajectory plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    /// Start time relative to the plan epoch, s.
    pub t_start: f64,
    /// Duration, s.
    pub duration: f64,
    /// Acceleration applied over the segment, m/s^2.
    pub a: f64,
}

/// Piecewise constant-acceleration trajectory for one vehicle.
///
/// Segments are contiguous and start at t = 0. Evaluation past the horizon
/// extrapolates at the final speed with a = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub vehicle: VehicleId,
    pub segments: Vec<PlanSegment>,
}

/// Plan construction rejects overlapping or discontiguous segments.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("plan segments must be contiguous and start at t = 0")]
    Discontiguous,
    #[error("plan segment durations must be positive")]
    NonPositiveDuration,
}

impl TrajectoryPlan {
    pub fn new(vehicle: VehicleId, segments: Vec<PlanSegment>) -> Result<Self, PlanError> {
        let mut t = 0.0;
        for seg in &segments {
            if seg.duration <= 0.0 {
                return Err(PlanError::NonPositiveDuration);
            }
            if (seg.t_start - t).abs() > 1e-9 {
                return Err(PlanError::Discontiguous);
            }
            t = seg.t_start + seg.duration;
        }
        Ok(TrajectoryPlan { vehicle, segments })
    }

    /// Constant-speed plan covering `duration` seconds.
    pub fn hold(vehicle: VehicleId, duration: f64) -> Self {
        TrajectoryPlan {
            vehicle,
            segments: vec![PlanSegment {
                t_start: 0.0,
                duration,
                a: 0.0,
            }],
        }
    }

    /// End of the last segment (0 for an empty plan).
    pub fn horizon(&self) -> f64 {
        self.segments
            .last()
            .map(|s| s.t_start + s.duration)
            .unwrap_or(0.0)
    }

    /// Largest acceleration magnitude commanded by the plan.
    pub fn max_accel_magnitude(&self) -> f64 {
        self.segments.iter().fold(0.0, |m, s| m.max(s.a.abs()))
    }
}

/// Evaluate a plan: state at relative time `t` starting from `(x0, v0)`.
pub fn plan_state_at(plan: &TrajectoryPlan, x0: f64, v0: f64, t: f64) -> (f64, f64) {
    debug_assert!(t >= 0.0);
    let (mut x, mut v) = (x0, v0);
    let mut clock = 0.0;
    for seg in &plan.segments {
        if t <= clock {
            break;
        }
        let dt = (t - clock).min(seg.duration);
        (x, v) = advance_constant_accel(x, v, seg.a, dt);
        clock += seg.duration;
    }
    if t > clock {
        // Past the horizon: coast at the final speed.
        (x, v) = advance_constant_accel(x, v, 0.0, t - clock);
    }
    (x, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn veh(id: u64, class: VehicleClass, x: f64) -> VehicleState {
        let catalog = ClassCatalog::default();
        VehicleState {
            id: VehicleId(id),
            class,
            length: catalog.get(class).length,
            lane: Lane::MainlineOuter,
            x,
            v: 20.0,
            a: 0.0,
            role: Role::Background,
        }
    }

    #[test]
    fn class_table_values() {
        let c = ClassCatalog::default();
        assert_eq!(c.cav.length, 5.0);
        assert_eq!(c.cav.accel_max, 2.5);
        assert_eq!(c.cav.decel_max, 4.5);
        assert_eq!(c.cat.length, 7.0);
        assert_eq!(c.cat.accel_max, 1.5);
        assert_eq!(c.cat.decel_max, 4.0);
    }

    #[test]
    fn advance_zero_accel() {
        assert_eq!(advance_constant_accel(0.0, 10.0, 0.0, 2.0), (20.0, 10.0));
    }

    #[test]
    fn advance_substitution() {
        assert_eq!(advance_constant_accel(0.0, 10.0, 1.0, 2.0), (22.0, 12.0));
    }

    #[test]
    fn advance_stop_clamp() {
        // Braking at 4 m/s^2 from 2 m/s halts after 0.5 m. Cross-checked by
        // 1 ms integration below.
        let (x, v) = advance_constant_accel(0.0, 2.0, -4.0, 1.0);
        assert_abs_diff_eq!(x, 0.5, epsilon = 1e-12);
        assert_eq!(v, 0.0);

        let (mut xs, mut vs) = (0.0_f64, 2.0_f64);
        for _ in 0..1000 {
            let dv = (-4.0_f64 * 1e-3).max(-vs);
            xs += vs * 1e-3 + 0.5 * dv * 1e-3;
            vs += dv;
        }
        assert_abs_diff_eq!(x, xs, epsilon = 1e-6);
    }

    #[test]
    fn plan_constant_speed() {
        let plan = TrajectoryPlan::new(
            VehicleId(1),
            vec![PlanSegment {
                t_start: 0.0,
                duration: 10.0,
                a: 0.0,
            }],
        )
        .unwrap();
        assert_eq!(plan_state_at(&plan, 0.0, 20.0, 5.0), (100.0, 20.0));
    }

    #[test]
    fn plan_two_segments() {
        let plan = TrajectoryPlan::new(
            VehicleId(1),
            vec![
                PlanSegment {
                    t_start: 0.0,
                    duration: 2.0,
                    a: 1.0,
                },
                PlanSegment {
                    t_start: 2.0,
                    duration: 8.0,
                    a: 0.0,
                },
            ],
        )
        .unwrap();
        let (x, v) = plan_state_at(&plan, 0.0, 10.0, 4.0);
        assert_abs_diff_eq!(x, 46.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 12.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_plan_coasts() {
        let plan = TrajectoryPlan::new(VehicleId(1), vec![]).unwrap();
        assert_eq!(plan_state_at(&plan, 3.0, 7.0, 1.0), (10.0, 7.0));
    }

    #[test]
    fn discontiguous_plan_rejected() {
        let bad = TrajectoryPlan::new(
            VehicleId(1),
            vec![PlanSegment {
                t_start: 1.0,
                duration: 1.0,
                a: 0.0,
            }],
        );
        assert_eq!(bad.unwrap_err(), PlanError::Discontiguous);
    }

    #[test]
    fn bumper_gap_uses_leader_length() {
        let cat = veh(1, VehicleClass::Cat, 60.0);
        let follower = veh(2, VehicleClass::Cav, 52.0);
        assert_abs_diff_eq!(bumper_gap(&cat, &follower), 1.0, epsilon = 1e-12);

        let cav = veh(3, VehicleClass::Cav, 10.0);
        let touching = veh(4, VehicleClass::Cav, 5.0);
        assert_eq!(bumper_gap(&cav, &touching), 0.0);

        let overlapping = veh(5, VehicleClass::Cav, 8.0);
        assert_eq!(bumper_gap(&cav, &overlapping), -3.0);
    }

    proptest! {
        /// Plans compose: evaluating at t2 equals evaluating at t1 and
        /// advancing the remainder from there through the residual plan.
        #[test]
        fn plan_composition_law(
            segs in proptest::collection::vec((0.1f64..8.0, -3.0f64..3.0), 0..5),
            v0 in 0.0f64..35.0,
            split in 0.0f64..1.0,
            total in 0.0f64..1.0,
        ) {
            let mut t = 0.0;
            let mut segments = Vec::new();
            for (dur, a) in segs {
                segments.push(PlanSegment { t_start: t, duration: dur, a });
                t += dur;
            }
            let plan = TrajectoryPlan::new(VehicleId(1), segments).unwrap();
            let horizon = plan.horizon().max(1.0);
            let t2 = total * (horizon + 5.0);
            let t1 = split * t2;

            let direct = plan_state_at(&plan, 0.0, v0, t2);

            // Advance to t1, then re-evaluate the tail of the plan from there.
            let (x1, v1) = plan_state_at(&plan, 0.0, v0, t1);
            let mut tail = Vec::new();
            let mut clock = 0.0;
            for seg in &plan.segments {
                let end = seg.t_start + seg.duration;
                if end > t1 {
                    let start = seg.t_start.max(t1);
                    tail.push(PlanSegment {
                        t_start: clock,
                        duration: end - start,
                        a: seg.a,
                    });
                    clock += end - start;
                }
            }
            let tail_plan = TrajectoryPlan::new(VehicleId(1), tail).unwrap();
            let stepped = plan_state_at(&tail_plan, x1, v1, t2 - t1);

            prop_assert!((direct.0 - stepped.0).abs() < 1e-6,
                "x mismatch: {} vs {}", direct.0, stepped.0);
            prop_assert!((direct.1 - stepped.1).abs() < 1e-6,
                "v mismatch: {} vs {}", direct.1, stepped.1);
        }

        /// The kinematic step never produces a negative speed.
        #[test]
        fn speed_never_negative(
            v in 0.0f64..40.0,
            a in -6.0f64..3.0,
            dt in 0.0f64..10.0,
        ) {
            let (_, v2) = advance_constant_accel(0.0, v, a, dt);
            prop_assert!(v2 >= 0.0);
        }
    }
}
