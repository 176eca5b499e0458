//! Cooperative merge planning: candidate selection, strategy dispatch and
//! plan validation.
//!
//! The planner is a pure function from a context snapshot to a decision. A
//! decision bundles trajectory plans for every vehicle it touches (vehicles
//! that must simply hold their speed get explicit constant-speed plans, so
//! the projections the solvers rely on actually happen), scheduled lane
//! switches, and the gap requirements the plans were solved against. Every
//! decision is validated by forward-sampling before release; any
//! infeasibility makes the dispatcher fall through its strategy ladder and
//! ultimately report `Infeasible`, at which point the caller retries with
//! the next cooperative candidate or leaves the vehicle to the uncontrolled
//! model.

use serde::{Deserialize, Serialize};

use crate::baseline::{idm_acceleration, IdmParams};
use crate::model::{
    bumper_gap, ClassCatalog, Lane, PlanSegment, Role, RoadLayout, TrajectoryPlan, VehicleId,
    VehicleState,
};
use crate::safety::{ramp_arrival_time, RampArrival, SafetyParams};
use crate::solver::{
    classify_lane_change_case, leader_accel_time_limit, post_lane_change_gap_fix,
    solve_coop_accel, solve_follower_decel, solve_leader_accel, solve_ramp_accel_adjust,
    CoopAccelInput, LaneChangeCase, RampAdjustInput, SolveError,
};

/// Tunables of the planner that are not part of the physical scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Nominal ramp acceleration, m/s^2 (clamped to the vehicle's class).
    pub a_r_default: f64,
    /// Outer-lane flow (veh/h) above which the ramp-adjustment strategy is
    /// tried first.
    pub heavy_flow_threshold: f64,
    /// Sliding window for the flow measurement, s.
    pub heavy_flow_window: f64,
    /// Use the literal displacement/time quotient for the neighbour gap
    /// fixes instead of the kinematically consistent 2*delta/t^2.
    pub literal_gap_fix_accel: bool,
    /// Fraction of the braking-limited closing speed accepted at an
    /// insertion.
    pub closing_speed_margin: f64,
    /// How often an unplanned ramp vehicle re-enters the selection pipeline, s.
    pub replan_interval: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            a_r_default: 1.0,
            heavy_flow_threshold: 1400.0,
            heavy_flow_window: 60.0,
            literal_gap_fix_accel: false,
            closing_speed_margin: 0.8,
            replan_interval: 1.0,
        }
    }
}

/// Snapshot handed to the planner for one ramp vehicle.
#[derive(Clone, Debug)]
pub struct MergeContext {
    /// Decision instant (plans are relative to it).
    pub now: f64,
    /// Ramp target vehicle, upstream of the acceleration lane.
    pub r: VehicleState,
    /// Selected cooperative outer-lane vehicle, if any.
    pub p: Option<VehicleState>,
    /// Inner-lane vehicle ahead of the insertion slot.
    pub q: Option<VehicleState>,
    /// Inner-lane vehicle behind the insertion slot.
    pub q_plus1: Option<VehicleState>,
    /// q's own leader; bounds how hard q may accelerate.
    pub q_leader: Option<VehicleState>,
    /// Outer-lane leader of the cooperative vehicle.
    pub p_minus1: Option<VehicleState>,
    /// Outer-lane follower of the cooperative vehicle.
    pub p_plus1: Option<VehicleState>,
    /// Nearest ramp-side predecessor of the target, with the remainder of
    /// its active plan if it has one.
    pub ramp_leader: Option<VehicleState>,
    pub ramp_leader_plan: Option<TrajectoryPlan>,
    pub layout: RoadLayout,
    pub safety: SafetyParams,
    pub a_r_default: f64,
}

impl MergeContext {
    /// Front gap of the insertion slot on the inner lane.
    pub fn s_f(&self) -> f64 {
        match (&self.q, &self.p) {
            (Some(q), Some(p)) => bumper_gap(q, p),
            _ => f64::INFINITY,
        }
    }

    /// Rear gap of the insertion slot on the inner lane.
    pub fn s_b(&self) -> f64 {
        match (&self.p, &self.q_plus1) {
            (Some(p), Some(q1)) => bumper_gap(p, q1),
            _ => f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    DirectLaneChange,
    LaneChangeFollowerDecel,
    LaneChangeLeaderAccel,
    MainlineCoopAccel,
    RampAccelAdjust,
    Infeasible,
}

impl StrategyKind {
    pub fn is_lane_change(self) -> bool {
        matches!(
            self,
            StrategyKind::DirectLaneChange
                | StrategyKind::LaneChangeFollowerDecel
                | StrategyKind::LaneChangeLeaderAccel
        )
    }
}

/// Every quantity solved for a released decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolvedQuantities {
    pub t_normal: f64,
    pub t_accel: f64,
    pub t_r: f64,
    /// Absolute merge time.
    pub t_merge: f64,
    /// Ramp vehicle's planned speed at the merge point.
    pub v_merge: f64,
    pub x_merge: f64,
    pub a_ramp: Option<f64>,
    pub a_decel_q1: Option<f64>,
    pub t_q1: Option<f64>,
    pub a_accel_q: Option<f64>,
    pub t_q: Option<f64>,
    pub a_accel_p: Option<f64>,
    pub a_p_minus1: Option<f64>,
    pub a_decel_p1: Option<f64>,
    pub delta_s_lead: Option<f64>,
    pub delta_s_follow: Option<f64>,
}

/// Scheduled instantaneous lane switch (relative time).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedLaneChange {
    pub vehicle: VehicleId,
    pub t: f64,
    pub from: Lane,
    pub to: Lane,
}

/// A pairwise gap the decision guarantees at a given relative time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub leader: VehicleId,
    pub follower: VehicleId,
    pub t: f64,
    pub min_gap: f64,
}

#[derive(Clone, Debug)]
pub struct StrategyDecision {
    pub kind: StrategyKind,
    pub solved: Option<SolvedQuantities>,
    pub plans: Vec<TrajectoryPlan>,
    pub lane_changes: Vec<PlannedLaneChange>,
    pub gap_checks: Vec<GapCheck>,
    pub roles: Vec<(VehicleId, Role)>,
    /// Latest plan end across all participants, s (relative).
    pub horizon: f64,
}

impl StrategyDecision {
    pub fn infeasible() -> Self {
        StrategyDecision {
            kind: StrategyKind::Infeasible,
            solved: None,
            plans: Vec::new(),
            lane_changes: Vec::new(),
            gap_checks: Vec::new(),
            roles: Vec::new(),
            horizon: 0.0,
        }
    }
}

/// Ramp acceleration and arrival plan that reaches `v_merge` within the
/// acceleration lane: the nominal value when feasible, otherwise the
/// smallest lane-feasible acceleration up to the class limit.
pub fn ramp_accel_for(
    x_r: f64,
    v0: f64,
    v_merge: f64,
    a_r_default: f64,
    accel_max: f64,
    layout: &RoadLayout,
) -> Result<(f64, RampArrival), SolveError> {
    let a_nominal = a_r_default.min(accel_max);
    match ramp_arrival_time(x_r, v0, a_nominal, v_merge, layout) {
        Ok(arrival) => Ok((a_nominal, arrival)),
        Err(crate::safety::SafetyError::MergeBeyondLaneEnd { .. }) => {
            let a_lane = (v_merge * v_merge - v0 * v0) / (2.0 * layout.accel_lane_len);
            if a_lane > accel_max {
                return Err(SolveError::NoAccelTime);
            }
            let a = a_lane.max(a_nominal);
            let arrival = ramp_arrival_time(x_r, v0, a, v_merge, layout)?;
            Ok((a, arrival))
        }
        Err(e) => Err(e.into()),
    }
}

/// Candidate chosen by the arrival-time matching rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CooperativeChoice {
    /// Index into the candidate slice.
    pub index: usize,
    pub arrival: RampArrival,
    /// Candidate's travel time to the merge point at its current speed.
    pub t_m: f64,
    pub a_r: f64,
}

/// Pick the outer-lane vehicle whose arrival time at the dynamic merge point
/// best matches the ramp vehicle's, assuming the ramp vehicle accelerates to
/// the candidate's current speed. Ties break toward the earlier-arriving
/// candidate so the ramp vehicle slots in behind it.
pub fn select_cooperative_vehicle(
    r: &VehicleState,
    candidates: &[VehicleState],
    a_r_default: f64,
    accel_max_r: f64,
    layout: &RoadLayout,
) -> Option<CooperativeChoice> {
    let mut best: Option<CooperativeChoice> = None;
    for (index, p) in candidates.iter().enumerate() {
        if p.x >= 0.0 || p.v <= 0.0 {
            continue;
        }
        let Ok((a_r, arrival)) = ramp_accel_for(r.x, r.v, p.v, a_r_default, accel_max_r, layout)
        else {
            continue;
        };
        let t_m = (arrival.x_merge - p.x) / p.v;
        if t_m <= 0.0 {
            continue;
        }
        let choice = CooperativeChoice {
            index,
            arrival,
            t_m,
            a_r,
        };
        best = match best {
            None => Some(choice),
            Some(cur) => {
                let (d_new, d_cur) = (
                    (t_m - arrival.t_r).abs(),
                    (cur.t_m - cur.arrival.t_r).abs(),
                );
                if d_new < d_cur - 1e-9 || ((d_new - d_cur).abs() <= 1e-9 && t_m < cur.t_m) {
                    Some(choice)
                } else {
                    Some(cur)
                }
            }
        };
    }
    best
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A vehicle the validator projects forward: by its plan when it has one,
/// at constant speed otherwise.
#[derive(Clone, Debug)]
pub struct PlanActor {
    pub state: VehicleState,
    pub plan: Option<TrajectoryPlan>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlanViolation {
    /// A guaranteed insertion gap fell short at its check time.
    MergeGap {
        leader: VehicleId,
        follower: VehicleId,
        t: f64,
        gap: f64,
        min_gap: f64,
    },
    /// Two projected vehicles overlapped on a shared axis.
    Overlap {
        leader: VehicleId,
        follower: VehicleId,
        t: f64,
        gap: f64,
    },
    SpeedBound {
        vehicle: VehicleId,
        t: f64,
        v: f64,
    },
    AccelBound {
        vehicle: VehicleId,
        a: f64,
        limit: f64,
    },
    MergeBeyondLane {
        x_merge: f64,
    },
    MergeSpeedMismatch {
        v: f64,
        expected: f64,
    },
}

const VALIDATE_DT: f64 = 0.01;
const GAP_TOL: f64 = 1e-6;

fn axis_group(lane: Lane) -> u8 {
    match lane {
        Lane::MainlineInner => 0,
        Lane::MainlineOuter => 1,
        Lane::RampNormal | Lane::AccelLane => 2,
    }
}

fn lane_at(initial: Lane, id: VehicleId, changes: &[PlannedLaneChange], t: f64) -> Lane {
    let mut lane = initial;
    for c in changes {
        if c.vehicle == id && t >= c.t {
            lane = c.to;
        }
    }
    lane
}

/// Forward-sample a decision's plans and verify every constraint the solvers
/// promised: guaranteed gaps at their check times, no overlap anywhere on a
/// shared axis, speeds inside [0, v_lim_max], plan accelerations inside the
/// class bounds, and the ramp vehicle reaching its merge speed within the
/// acceleration lane.
pub fn validate_plan(
    decision: &StrategyDecision,
    actors: &[PlanActor],
    _safety: &SafetyParams,
    layout: &RoadLayout,
    catalog: &ClassCatalog,
) -> Result<(), Vec<PlanViolation>> {
    let mut violations = Vec::new();

    let project = |actor: &PlanActor, t: f64| -> (f64, f64) {
        match &actor.plan {
            Some(plan) => crate::model::plan_state_at(plan, actor.state.x, actor.state.v, t),
            None => (actor.state.x + actor.state.v * t, actor.state.v),
        }
    };
    let find = |id: VehicleId| actors.iter().find(|a| a.state.id == id);

    // Plan accelerations against class bounds.
    for plan in &decision.plans {
        if let Some(actor) = find(plan.vehicle) {
            let params = catalog.get(actor.state.class);
            let limit = params.accel_max.max(params.decel_max);
            let a = plan.max_accel_magnitude();
            if a > limit + 1e-9 {
                violations.push(PlanViolation::AccelBound {
                    vehicle: plan.vehicle,
                    a,
                    limit,
                });
            }
        }
    }

    // Guaranteed insertion gaps at their exact check times.
    for check in &decision.gap_checks {
        let (Some(leader), Some(follower)) = (find(check.leader), find(check.follower)) else {
            continue;
        };
        let (x_l, _) = project(leader, check.t);
        let (x_f, _) = project(follower, check.t);
        let gap = x_l - x_f - leader.state.length;
        if gap < check.min_gap - GAP_TOL {
            violations.push(PlanViolation::MergeGap {
                leader: check.leader,
                follower: check.follower,
                t: check.t,
                gap,
                min_gap: check.min_gap,
            });
        }
    }

    // Sampled overlap and speed checks over the horizon.
    let steps = (decision.horizon / VALIDATE_DT).ceil() as usize;
    let mut frame: Vec<(u8, f64, f64, VehicleId)> = Vec::with_capacity(actors.len());
    for k in 0..=steps {
        let t = (k as f64 * VALIDATE_DT).min(decision.horizon);
        frame.clear();
        for actor in actors {
            let (x, v) = project(actor, t);
            if v < -1e-9 || v > layout.v_lim_max + 1e-9 {
                violations.push(PlanViolation::SpeedBound {
                    vehicle: actor.state.id,
                    t,
                    v,
                });
                return Err(violations);
            }
            let lane = lane_at(actor.state.lane, actor.state.id, &decision.lane_changes, t);
            frame.push((axis_group(lane), x, actor.state.length, actor.state.id));
        }
        frame.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
        for w in frame.windows(2) {
            let (g0, x0, _, id0) = w[0];
            let (g1, x1, len1, id1) = w[1];
            if g0 != g1 {
                continue;
            }
            let gap = x1 - x0 - len1;
            if gap < -GAP_TOL {
                violations.push(PlanViolation::Overlap {
                    leader: id1,
                    follower: id0,
                    t,
                    gap,
                });
                return Err(violations);
            }
        }
    }

    // Ramp-vehicle merge conditions.
    if let Some(solved) = &decision.solved {
        if solved.x_merge > layout.accel_lane_len + GAP_TOL {
            violations.push(PlanViolation::MergeBeyondLane {
                x_merge: solved.x_merge,
            });
        }
        let ramp_target = decision
            .roles
            .iter()
            .find(|(_, role)| *role == Role::RampTarget)
            .map(|(id, _)| *id);
        if let Some(r_actor) = ramp_target.and_then(find) {
            let (_, v) = project(r_actor, solved.t_r);
            if (v - solved.v_merge).abs() > 0.1 {
                violations.push(PlanViolation::MergeSpeedMismatch {
                    v,
                    expected: solved.v_merge,
                });
            }
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

// ---------------------------------------------------------------------------
// Strategy dispatch
// ---------------------------------------------------------------------------

struct Builder<'a> {
    ctx: &'a MergeContext,
    cfg: &'a ControllerConfig,
    catalog: &'a ClassCatalog,
}

impl<'a> Builder<'a> {
    fn r_params(&self) -> &crate::model::VehicleClassParams {
        self.catalog.get(self.ctx.r.class)
    }

    fn ramp_plan(&self, arrival: &RampArrival, a_r: f64) -> TrajectoryPlan {
        let mut segments = Vec::new();
        if arrival.t_normal > 0.0 {
            segments.push(PlanSegment {
                t_start: 0.0,
                duration: arrival.t_normal,
                a: 0.0,
            });
        }
        if arrival.t_accel > 0.0 {
            segments.push(PlanSegment {
                t_start: arrival.t_normal,
                duration: arrival.t_accel,
                a: a_r,
            });
        }
        TrajectoryPlan {
            vehicle: self.ctx.r.id,
            segments,
        }
    }

    fn closing_speed_ok(&self, v_leader: f64, v_follower: f64, follower_decel: f64) -> bool {
        v_follower - v_leader
            <= self.cfg.closing_speed_margin
                * (2.0 * follower_decel * self.ctx.safety.s_safe).sqrt()
    }

    fn guard(&self, v_leader: f64, v_follower: f64, follower_decel: f64) -> Result<(), SolveError> {
        if self.closing_speed_ok(v_leader, v_follower, follower_decel) {
            Ok(())
        } else {
            Err(SolveError::ClosingSpeed)
        }
    }

    /// Gap fixes for the outer-lane neighbours of the vacated slot, plus the
    /// plans (adjustment or hold) and checks they imply.
    #[allow(clippy::type_complexity)]
    fn neighbour_fix(
        &self,
        arrival: &RampArrival,
        v_merge: f64,
        solved: &mut SolvedQuantities,
        plans: &mut Vec<TrajectoryPlan>,
        checks: &mut Vec<GapCheck>,
    ) -> Result<(), SolveError> {
        let ctx = self.ctx;
        let lead = ctx.p_minus1.as_ref();
        let rear = ctx.p_plus1.as_ref();
        let fix = post_lane_change_gap_fix(
            lead,
            rear,
            ctx.r.length,
            arrival.x_merge,
            arrival.t_r,
            &ctx.safety,
            lead.map(|l| self.catalog.get(l.class).accel_max)
                .unwrap_or(f64::INFINITY),
            rear.map(|r| self.catalog.get(r.class).decel_max)
                .unwrap_or(f64::INFINITY),
            self.cfg.literal_gap_fix_accel,
        )?;
        solved.a_p_minus1 = fix.lead_accel;
        solved.a_decel_p1 = fix.rear_decel;
        solved.delta_s_lead = fix.lead_delta;
        solved.delta_s_follow = fix.rear_delta;

        if let Some(lead) = lead {
            let a = fix.lead_accel.unwrap_or(0.0);
            plans.push(TrajectoryPlan {
                vehicle: lead.id,
                segments: vec![PlanSegment {
                    t_start: 0.0,
                    duration: arrival.t_r,
                    a,
                }],
            });
            checks.push(GapCheck {
                leader: lead.id,
                follower: ctx.r.id,
                t: arrival.t_r,
                min_gap: ctx.safety.s_safe,
            });
            self.guard(
                lead.v + a * arrival.t_r,
                v_merge,
                self.r_params().decel_max,
            )?;
        }
        if let Some(rear) = rear {
            let a = fix.rear_decel.unwrap_or(0.0);
            plans.push(TrajectoryPlan {
                vehicle: rear.id,
                segments: vec![PlanSegment {
                    t_start: 0.0,
                    duration: arrival.t_r,
                    a: -a,
                }],
            });
            checks.push(GapCheck {
                leader: ctx.r.id,
                follower: rear.id,
                t: arrival.t_r,
                min_gap: ctx.safety.s_safe,
            });
            self.guard(
                v_merge,
                rear.v - a * arrival.t_r,
                self.catalog.get(rear.class).decel_max,
            )?;
        }
        Ok(())
    }

    fn base_roles(&self) -> Vec<(VehicleId, Role)> {
        let ctx = self.ctx;
        let mut roles = vec![(ctx.r.id, Role::RampTarget)];
        if let Some(p) = &ctx.p {
            roles.push((p.id, Role::Cooperative));
        }
        if let Some(q) = &ctx.q {
            roles.push((q.id, Role::InnerLeader));
        }
        if let Some(q1) = &ctx.q_plus1 {
            roles.push((q1.id, Role::InnerFollower));
        }
        if let Some(pm) = &ctx.p_minus1 {
            roles.push((pm.id, Role::OuterLeader));
        }
        if let Some(p1) = &ctx.p_plus1 {
            roles.push((p1.id, Role::OuterFollower));
        }
        roles
    }

    fn solved_base(&self, arrival: &RampArrival, v_merge: f64) -> SolvedQuantities {
        SolvedQuantities {
            t_normal: arrival.t_normal,
            t_accel: arrival.t_accel,
            t_r: arrival.t_r,
            t_merge: self.ctx.now + arrival.t_r,
            v_merge,
            x_merge: arrival.x_merge,
            ..SolvedQuantities::default()
        }
    }

    /// Lane-change strategies share everything but the inner-lane
    /// cooperation; `inner` solves it and returns (plans, checks, lane
    /// change time).
    fn lane_change_decision(
        &self,
        kind: StrategyKind,
        inner: impl FnOnce(
            &mut SolvedQuantities,
            &mut Vec<TrajectoryPlan>,
            &mut Vec<GapCheck>,
        ) -> Result<f64, SolveError>,
    ) -> Result<StrategyDecision, SolveError> {
        let ctx = self.ctx;
        let p = ctx.p.as_ref().expect("lane-change strategies need p");
        let (a_r, arrival) = ramp_accel_for(
            ctx.r.x,
            ctx.r.v,
            p.v,
            ctx.a_r_default,
            self.r_params().accel_max,
            &ctx.layout,
        )?;
        let v_merge = p.v;

        let mut solved = self.solved_base(&arrival, v_merge);
        solved.a_ramp = Some(a_r);
        let mut plans = vec![self.ramp_plan(&arrival, a_r)];
        let mut checks = Vec::new();

        let t_lc = inner(&mut solved, &mut plans, &mut checks)?;
        if t_lc > arrival.t_r {
            return Err(SolveError::EmptyTimeWindow);
        }

        // The cooperative vehicle holds its speed through the merge horizon
        // and switches to the inner lane once the slot is ready.
        plans.push(TrajectoryPlan::hold(p.id, arrival.t_r));
        let mut lane_changes = vec![
            PlannedLaneChange {
                vehicle: p.id,
                t: t_lc,
                from: Lane::MainlineOuter,
                to: Lane::MainlineInner,
            },
            PlannedLaneChange {
                vehicle: ctx.r.id,
                t: arrival.t_r,
                from: Lane::AccelLane,
                to: Lane::MainlineOuter,
            },
        ];
        lane_changes.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());

        // Insertion gaps on the inner lane at the change instant.
        if let Some(q) = &ctx.q {
            checks.push(GapCheck {
                leader: q.id,
                follower: p.id,
                t: t_lc,
                min_gap: ctx.safety.s_safe,
            });
            self.guard(q.v, p.v, self.catalog.get(p.class).decel_max)?;
        }
        if let Some(q1) = &ctx.q_plus1 {
            let v_q1_after = q1.v
                - solved.a_decel_q1.unwrap_or(0.0) * solved.t_q1.unwrap_or(0.0);
            checks.push(GapCheck {
                leader: p.id,
                follower: q1.id,
                t: t_lc,
                min_gap: ctx.safety.s_safe,
            });
            self.guard(p.v, v_q1_after, self.catalog.get(q1.class).decel_max)?;
        }

        self.neighbour_fix(&arrival, v_merge, &mut solved, &mut plans, &mut checks)?;

        let horizon = plans.iter().map(|p| p.horizon()).fold(0.0, f64::max);
        Ok(StrategyDecision {
            kind,
            solved: Some(solved),
            plans,
            lane_changes,
            gap_checks: checks,
            roles: self.base_roles(),
            horizon,
        })
    }

    fn attempt_direct(&self) -> Result<StrategyDecision, SolveError> {
        self.lane_change_decision(StrategyKind::DirectLaneChange, |_, _, _| Ok(0.0))
    }

    fn attempt_follower_decel(&self) -> Result<StrategyDecision, SolveError> {
        let ctx = self.ctx;
        let p = ctx.p.as_ref().unwrap();
        let q1 = ctx
            .q_plus1
            .as_ref()
            .ok_or(SolveError::BadInput("follower cooperation needs q+1"))?;
        let s_p = p.dist_to_lane_start();
        let s_q1 = q1.dist_to_lane_start();
        if s_p <= 0.0 {
            return Err(SolveError::EmptyTimeWindow);
        }
        // Cooperation time: midpoint of the admissible window.
        let t_q1 = 0.5 * s_p / p.v;
        let a = solve_follower_decel(
            s_p,
            s_q1,
            p.v,
            q1.v,
            t_q1,
            &ctx.safety,
            p.length,
            self.catalog.get(q1.class).decel_max,
        )?;
        let q1_id = q1.id;
        let q_state = ctx.q.clone();
        self.lane_change_decision(StrategyKind::LaneChangeFollowerDecel, move |solved, plans, _| {
            solved.a_decel_q1 = Some(a);
            solved.t_q1 = Some(t_q1);
            plans.push(TrajectoryPlan {
                vehicle: q1_id,
                segments: vec![PlanSegment {
                    t_start: 0.0,
                    duration: t_q1,
                    a: -a,
                }],
            });
            if let Some(q) = q_state {
                plans.push(TrajectoryPlan::hold(q.id, t_q1));
            }
            Ok(t_q1)
        })
    }

    fn attempt_leader_accel(&self) -> Result<StrategyDecision, SolveError> {
        let ctx = self.ctx;
        let p = ctx.p.as_ref().unwrap();
        let q = ctx
            .q
            .as_ref()
            .ok_or(SolveError::BadInput("leader cooperation needs q"))?;
        let s_p = p.dist_to_lane_start();
        let s_q = q.dist_to_lane_start();
        if s_p <= 0.0 {
            return Err(SolveError::EmptyTimeWindow);
        }
        let mut t_max = s_p / p.v;
        if let Some(q1) = &ctx.q_plus1 {
            if let Some(limit) = leader_accel_time_limit(
                s_p,
                q1.dist_to_lane_start(),
                p.v,
                q1.v,
                ctx.safety.s_safe,
                p.length,
            ) {
                if limit <= 0.0 {
                    return Err(SolveError::EmptyTimeWindow);
                }
                t_max = t_max.min(limit);
            }
        }
        let t_q = 0.5 * t_max;

        // q may accelerate up to its class limit, tightened by its own
        // car-following situation.
        let q_params = self.catalog.get(q.class);
        let mut a_safe = q_params.accel_max;
        if let Some(leader) = &ctx.q_leader {
            let idm = IdmParams::for_class(q_params, ctx.layout.v_lim_max);
            let gap = bumper_gap(leader, q);
            let a_idm = idm_acceleration(q.v, leader.v, gap, &idm).a;
            a_safe = a_safe.min(a_idm.max(0.0));
        }

        let s_q1 = ctx.q_plus1.as_ref().map(|q1| q1.dist_to_lane_start()).unwrap_or(f64::MAX);
        let v_q1 = ctx.q_plus1.as_ref().map(|q1| q1.v).unwrap_or(0.0);
        let a = solve_leader_accel(
            s_p,
            s_q,
            s_q1,
            p.v,
            q.v,
            v_q1,
            t_q,
            &ctx.safety,
            q.length,
            p.length,
            q_params.accel_min,
            a_safe,
        )?;
        if q.v + a * t_q > ctx.layout.v_lim_max + 1e-9 {
            return Err(SolveError::SpeedWindow);
        }
        let q_id = q.id;
        let q1_state = ctx.q_plus1.clone();
        self.lane_change_decision(StrategyKind::LaneChangeLeaderAccel, move |solved, plans, _| {
            solved.a_accel_q = Some(a);
            solved.t_q = Some(t_q);
            plans.push(TrajectoryPlan {
                vehicle: q_id,
                segments: vec![PlanSegment {
                    t_start: 0.0,
                    duration: t_q,
                    a,
                }],
            });
            if let Some(q1) = q1_state {
                plans.push(TrajectoryPlan::hold(q1.id, t_q));
            }
            Ok(t_q)
        })
    }

    fn attempt_coop_accel(&self) -> Result<StrategyDecision, SolveError> {
        let ctx = self.ctx;
        let p = ctx.p.as_ref().unwrap();
        let a_r = ctx.a_r_default.min(self.r_params().accel_max);
        let input = CoopAccelInput {
            x_r: ctx.r.x,
            v0: ctx.r.v,
            a_r,
            x_p: p.x,
            v_p: p.v,
            rear: ctx.p_plus1.as_ref().map(|p1| (p1.x, p1.v)),
            l_p: p.length,
            l_r: ctx.r.length,
            accel_max_p: self.catalog.get(p.class).accel_max,
            l_b: ctx.layout.accel_lane_len,
            v_lim_min: ctx.layout.v_lim_min,
            v_lim_max: ctx.layout.v_lim_max,
        };
        let sol = solve_coop_accel(&input, &ctx.safety)?;

        let arrival = RampArrival {
            t_normal: -ctx.r.x / ctx.r.v,
            t_accel: sol.t_accel,
            t_r: sol.t_r,
            x_merge: sol.x_merge,
        };
        let mut solved = self.solved_base(&arrival, sol.v_merge);
        solved.a_ramp = Some(a_r);
        solved.a_accel_p = Some(sol.a_p);

        let mut plans = vec![
            self.ramp_plan(&arrival, a_r),
            TrajectoryPlan {
                vehicle: p.id,
                segments: vec![PlanSegment {
                    t_start: 0.0,
                    duration: sol.t_r,
                    a: sol.a_p,
                }],
            },
        ];
        let mut checks = vec![GapCheck {
            leader: p.id,
            follower: ctx.r.id,
            t: sol.t_r,
            min_gap: ctx.safety.s_safe,
        }];
        self.guard(sol.v_p_merge, sol.v_merge, self.r_params().decel_max)?;

        if let Some(p1) = &ctx.p_plus1 {
            plans.push(TrajectoryPlan::hold(p1.id, sol.t_r));
            checks.push(GapCheck {
                leader: ctx.r.id,
                follower: p1.id,
                t: sol.t_r,
                min_gap: ctx.safety.s_safe,
            });
            self.guard(sol.v_merge, p1.v, self.catalog.get(p1.class).decel_max)?;
        }
        if let Some(pm) = &ctx.p_minus1 {
            plans.push(TrajectoryPlan::hold(pm.id, sol.t_r));
        }

        let horizon = plans.iter().map(|p| p.horizon()).fold(0.0, f64::max);
        Ok(StrategyDecision {
            kind: StrategyKind::MainlineCoopAccel,
            solved: Some(solved),
            plans,
            lane_changes: vec![PlannedLaneChange {
                vehicle: ctx.r.id,
                t: sol.t_r,
                from: Lane::AccelLane,
                to: Lane::MainlineOuter,
            }],
            gap_checks: checks,
            roles: self.base_roles(),
            horizon,
        })
    }

    fn attempt_ramp_adjust(&self) -> Result<StrategyDecision, SolveError> {
        let ctx = self.ctx;
        let p = ctx.p.as_ref().unwrap();
        let r_params = self.r_params();
        let input = RampAdjustInput {
            x_r: ctx.r.x,
            v0: ctx.r.v,
            x_p: p.x,
            v_p: p.v,
            rear: ctx
                .p_plus1
                .as_ref()
                .map(|p1| (p1.x, p1.v, self.catalog.get(p1.class).decel_max)),
            coop_len: p.length,
            l_r: ctx.r.length,
            a_min: r_params.accel_min,
            a_max: r_params.accel_max,
            l_b: ctx.layout.accel_lane_len,
            v_lim_min: ctx.layout.v_lim_min,
            v_lim_max: ctx.layout.v_lim_max,
        };
        let sol = solve_ramp_accel_adjust(&input, &ctx.safety)?;

        let arrival = RampArrival {
            t_normal: -ctx.r.x / ctx.r.v,
            t_accel: sol.t_accel,
            t_r: sol.t_r,
            x_merge: sol.x_merge,
        };
        let mut solved = self.solved_base(&arrival, sol.v_merge);
        solved.a_ramp = Some(sol.a_ramp);
        solved.a_decel_p1 = sol.rear_decel;

        let mut plans = vec![
            self.ramp_plan(&arrival, sol.a_ramp),
            TrajectoryPlan::hold(p.id, sol.t_r),
        ];
        let mut checks = vec![GapCheck {
            leader: p.id,
            follower: ctx.r.id,
            t: sol.t_r,
            min_gap: ctx.safety.s_safe,
        }];
        // Speed-matched by construction; the follower needs the guard.
        if let Some(p1) = &ctx.p_plus1 {
            let a = sol.rear_decel.unwrap_or(0.0);
            plans.push(TrajectoryPlan {
                vehicle: p1.id,
                segments: vec![PlanSegment {
                    t_start: 0.0,
                    duration: sol.t_r,
                    a: -a,
                }],
            });
            checks.push(GapCheck {
                leader: ctx.r.id,
                follower: p1.id,
                t: sol.t_r,
                min_gap: ctx.safety.s_safe,
            });
            self.guard(
                sol.v_merge,
                p1.v - a * sol.t_r,
                self.catalog.get(p1.class).decel_max,
            )?;
        }

        let horizon = plans.iter().map(|p| p.horizon()).fold(0.0, f64::max);
        Ok(StrategyDecision {
            kind: StrategyKind::RampAccelAdjust,
            solved: Some(solved),
            plans,
            lane_changes: vec![PlannedLaneChange {
                vehicle: ctx.r.id,
                t: sol.t_r,
                from: Lane::AccelLane,
                to: Lane::MainlineOuter,
            }],
            gap_checks: checks,
            roles: self.base_roles(),
            horizon,
        })
    }

    /// Free merge with nothing on the mainline: run to the lane at the
    /// nominal acceleration and merge at the highest attainable legal speed.
    fn free_merge(&self) -> Result<StrategyDecision, SolveError> {
        let ctx = self.ctx;
        let r_params = self.r_params();
        let a_r = ctx.a_r_default.min(r_params.accel_max);
        let v_reachable = (ctx.r.v * ctx.r.v + 2.0 * a_r * ctx.layout.accel_lane_len).sqrt();
        let v_merge = v_reachable.min(ctx.layout.v_lim_max).max(ctx.layout.v_lim_min);
        let arrival = ramp_arrival_time(ctx.r.x, ctx.r.v, a_r, v_merge, &ctx.layout)?;
        let mut solved = self.solved_base(&arrival, v_merge);
        solved.a_ramp = Some(a_r);
        let plans = vec![self.ramp_plan(&arrival, a_r)];
        let horizon = plans.iter().map(|p| p.horizon()).fold(0.0, f64::max);
        Ok(StrategyDecision {
            kind: StrategyKind::RampAccelAdjust,
            solved: Some(solved),
            plans,
            lane_changes: vec![PlannedLaneChange {
                vehicle: ctx.r.id,
                t: arrival.t_r,
                from: Lane::AccelLane,
                to: Lane::MainlineOuter,
            }],
            gap_checks: Vec::new(),
            roles: vec![(ctx.r.id, Role::RampTarget)],
            horizon,
        })
    }
}

fn validation_actors(ctx: &MergeContext, decision: &StrategyDecision) -> Vec<PlanActor> {
    let mut actors = vec![PlanActor {
        state: ctx.r,
        plan: None,
    }];
    for state in [
        &ctx.p,
        &ctx.q,
        &ctx.q_plus1,
        &ctx.q_leader,
        &ctx.p_minus1,
        &ctx.p_plus1,
    ]
    .into_iter()
    .flatten()
    {
        actors.push(PlanActor {
            state: *state,
            plan: None,
        });
    }
    if let Some(rl) = &ctx.ramp_leader {
        actors.push(PlanActor {
            state: *rl,
            plan: ctx.ramp_leader_plan.clone(),
        });
    }
    for plan in &decision.plans {
        if let Some(actor) = actors.iter_mut().find(|a| a.state.id == plan.vehicle) {
            actor.plan = Some(plan.clone());
        }
    }
    actors
}

/// Dispatch the strategy ladder for one ramp vehicle against one cooperative
/// candidate and release the first decision that validates.
///
/// Ladder: with a CAT cooperative vehicle only the ramp speed adjustment is
/// legal (no lane changes toward the CAV-only inner lane). With a CAV
/// cooperative vehicle the gap pattern picks the lane-change route or the
/// cooperative acceleration; heavy outer-lane flow promotes the ramp
/// adjustment to the front of the queue, light flow appends it as the last
/// resort.
pub fn plan_merge(
    ctx: &MergeContext,
    heavy_traffic: bool,
    cfg: &ControllerConfig,
    catalog: &ClassCatalog,
) -> StrategyDecision {
    let builder = Builder { ctx, cfg, catalog };

    let Some(p) = &ctx.p else {
        // Empty mainline: free merge, validated against the ramp leader only.
        return match builder.free_merge() {
            Ok(decision) => {
                let actors = validation_actors(ctx, &decision);
                match validate_plan(&decision, &actors, &ctx.safety, &ctx.layout, catalog) {
                    Ok(()) => decision,
                    Err(_) => StrategyDecision::infeasible(),
                }
            }
            Err(_) => StrategyDecision::infeasible(),
        };
    };

    let mut ladder: Vec<StrategyKind> = Vec::new();
    if p.class == crate::model::VehicleClass::Cat {
        ladder.push(StrategyKind::RampAccelAdjust);
    } else {
        if heavy_traffic {
            ladder.push(StrategyKind::RampAccelAdjust);
        }
        let case = classify_lane_change_case(ctx.s_f(), ctx.s_b(), ctx.safety.s_safe);
        let classified = match case {
            LaneChangeCase::Direct => StrategyKind::DirectLaneChange,
            LaneChangeCase::FollowerDecel => StrategyKind::LaneChangeFollowerDecel,
            LaneChangeCase::LeaderAccel => StrategyKind::LaneChangeLeaderAccel,
            LaneChangeCase::CoopAccel => StrategyKind::MainlineCoopAccel,
        };
        ladder.push(classified);
        if classified != StrategyKind::MainlineCoopAccel {
            ladder.push(StrategyKind::MainlineCoopAccel);
        }
        if !heavy_traffic {
            ladder.push(StrategyKind::RampAccelAdjust);
        }
    }

    for kind in ladder {
        let result = match kind {
            StrategyKind::DirectLaneChange => builder.attempt_direct(),
            StrategyKind::LaneChangeFollowerDecel => builder.attempt_follower_decel(),
            StrategyKind::LaneChangeLeaderAccel => builder.attempt_leader_accel(),
            StrategyKind::MainlineCoopAccel => builder.attempt_coop_accel(),
            StrategyKind::RampAccelAdjust => builder.attempt_ramp_adjust(),
            StrategyKind::Infeasible => unreachable!(),
        };
        if let Ok(decision) = result {
            let actors = validation_actors(ctx, &decision);
            if validate_plan(&decision, &actors, &ctx.safety, &ctx.layout, catalog).is_ok() {
                return decision;
            }
        }
    }
    StrategyDecision::infeasible()
}

#[cfg(test)]
mod tests;
