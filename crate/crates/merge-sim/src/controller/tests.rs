use super::*;
use crate::model::{ClassCatalog, VehicleClass};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn veh(id: u64, class: VehicleClass, lane: Lane, x: f64, v: f64) -> VehicleState {
    let catalog = ClassCatalog::default();
    VehicleState {
        id: VehicleId(id),
        class,
        length: catalog.get(class).length,
        lane,
        x,
        v,
        a: 0.0,
        role: Role::Background,
    }
}

fn base_ctx(r: VehicleState, p: Option<VehicleState>) -> MergeContext {
    MergeContext {
        now: 0.0,
        r,
        p,
        q: None,
        q_plus1: None,
        q_leader: None,
        p_minus1: None,
        p_plus1: None,
        ramp_leader: None,
        ramp_leader_plan: None,
        layout: RoadLayout::default(),
        safety: SafetyParams::default(),
        a_r_default: 1.0,
    }
}

fn ramp_target(v: f64) -> VehicleState {
    veh(1, VehicleClass::Cat, Lane::RampNormal, -300.0, v)
}

#[test]
fn selection_minimizes_arrival_difference() {
    // All candidates share the speed, so t_r = 30 and x_merge are common;
    // positions put their own arrival at 25, 29 and 33 s.
    let r = ramp_target(15.0);
    let mut layout = RoadLayout::default();
    layout.v_lim_min = 15.0;
    let candidates = vec![
        veh(2, VehicleClass::Cav, Lane::MainlineOuter, -425.0, 25.0),
        veh(3, VehicleClass::Cav, Lane::MainlineOuter, -525.0, 25.0),
        veh(4, VehicleClass::Cav, Lane::MainlineOuter, -625.0, 25.0),
    ];
    let choice = select_cooperative_vehicle(&r, &candidates, 1.0, 1.5, &layout).unwrap();
    assert_eq!(candidates[choice.index].id, VehicleId(3));
    assert_abs_diff_eq!(choice.arrival.t_r, 30.0, epsilon = 1e-9);
    assert_abs_diff_eq!(choice.t_m, 29.0, epsilon = 1e-9);
}

#[test]
fn selection_tie_breaks_earlier() {
    let r = ramp_target(15.0);
    let mut layout = RoadLayout::default();
    layout.v_lim_min = 15.0;
    let candidates = vec![
        veh(2, VehicleClass::Cav, Lane::MainlineOuter, -500.0, 25.0), // t_m = 28
        veh(3, VehicleClass::Cav, Lane::MainlineOuter, -600.0, 25.0), // t_m = 32
    ];
    let choice = select_cooperative_vehicle(&r, &candidates, 1.0, 1.5, &layout).unwrap();
    assert_eq!(candidates[choice.index].id, VehicleId(2));
}

#[test]
fn selection_empty_is_none() {
    let r = ramp_target(15.0);
    assert!(select_cooperative_vehicle(&r, &[], 1.0, 1.5, &RoadLayout::default()).is_none());
}

#[test]
fn empty_mainline_free_merge() {
    let r = ramp_target(60.0 / 3.6);
    let ctx = base_ctx(r, None);
    let d = plan_merge(&ctx, false, &ControllerConfig::default(), &ClassCatalog::default());
    assert_eq!(d.kind, StrategyKind::RampAccelAdjust);
    assert_eq!(d.plans.len(), 1);
    assert!(d.gap_checks.is_empty());
    let solved = d.solved.unwrap();
    assert!(solved.x_merge <= 200.0 + 1e-6);
    assert!(solved.v_merge >= ctx.layout.v_lim_min - 1e-9);
}

/// Inner-lane slot with both gaps at 2 m: the direct change fires, and the
/// outer neighbours are projected and corrected per the merge-gap rules.
#[test]
fn direct_lane_change_with_gap_fix() {
    let r = ramp_target(60.0 / 3.6);
    let p = veh(2, VehicleClass::Cav, Lane::MainlineOuter, -500.0, 20.0);
    let q = veh(3, VehicleClass::Cav, Lane::MainlineInner, -493.0, 20.0); // s_f = 2
    let q1 = veh(4, VehicleClass::Cav, Lane::MainlineInner, -507.0, 20.0); // s_b = 2
    let mut ctx = base_ctx(r, Some(p));
    ctx.q = Some(q);
    ctx.q_plus1 = Some(q1);
    assert_abs_diff_eq!(ctx.s_f(), 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(ctx.s_b(), 2.0, epsilon = 1e-12);

    let d = plan_merge(&ctx, false, &ControllerConfig::default(), &ClassCatalog::default());
    assert_eq!(d.kind, StrategyKind::DirectLaneChange);
    // p switches immediately, the ramp vehicle at its merge time.
    assert_eq!(d.lane_changes.len(), 2);
    assert_eq!(d.lane_changes[0].vehicle, p.id);
    assert_eq!(d.lane_changes[0].to, Lane::MainlineInner);
    let solved = d.solved.unwrap();
    assert_abs_diff_eq!(solved.v_merge, 20.0, epsilon = 1e-9);
    assert!(d.gap_checks.iter().any(|c| c.leader == q.id && c.follower == p.id));
}

#[test]
fn tight_gaps_fall_back_to_coop_accel() {
    let r = ramp_target(15.0);
    let mut layout = RoadLayout::default();
    layout.v_lim_min = 15.0;
    let p = veh(2, VehicleClass::Cav, Lane::MainlineOuter, -560.0, 25.0);
    let q = veh(3, VehicleClass::Cav, Lane::MainlineInner, -554.0, 25.0); // s_f = 1
    let q1 = veh(4, VehicleClass::Cav, Lane::MainlineInner, -566.0, 25.0); // s_b = 1
    let mut ctx = base_ctx(r, Some(p));
    ctx.layout = layout;
    ctx.q = Some(q);
    ctx.q_plus1 = Some(q1);

    let d = plan_merge(&ctx, false, &ControllerConfig::default(), &ClassCatalog::default());
    assert_eq!(d.kind, StrategyKind::MainlineCoopAccel);
    let solved = d.solved.unwrap();
    assert_abs_diff_eq!(solved.t_accel, 10.0, epsilon = 1e-6);
    assert_abs_diff_eq!(solved.a_accel_p.unwrap(), 0.036088, epsilon = 1e-4);
    // No lane-change strategy may touch the inner-lane pair here.
    assert!(!d.kind.is_lane_change());
}

#[test]
fn cat_cooperative_uses_ramp_adjust() {
    let r = ramp_target(15.0);
    let mut layout = RoadLayout::default();
    layout.v_lim_min = 15.0;
    let p = veh(2, VehicleClass::Cat, Lane::MainlineOuter, -500.0, 25.0);
    let mut ctx = base_ctx(r, Some(p));
    ctx.layout = layout;
    let d = plan_merge(&ctx, false, &ControllerConfig::default(), &ClassCatalog::default());
    assert_eq!(d.kind, StrategyKind::RampAccelAdjust);
    let solved = d.solved.unwrap();
    assert_abs_diff_eq!(solved.a_ramp.unwrap(), 1.5, epsilon = 1e-9);
    assert_abs_diff_eq!(solved.v_merge, 25.0, epsilon = 1e-12);
}

#[test]
fn heavy_traffic_prefers_ramp_adjust() {
    let r = ramp_target(15.0);
    let mut layout = RoadLayout::default();
    layout.v_lim_min = 15.0;
    let p = veh(2, VehicleClass::Cav, Lane::MainlineOuter, -500.0, 25.0);
    let q = veh(3, VehicleClass::Cav, Lane::MainlineInner, -493.0, 25.0);
    let q1 = veh(4, VehicleClass::Cav, Lane::MainlineInner, -507.0, 25.0);
    let mut ctx = base_ctx(r, Some(p));
    ctx.layout = layout;
    ctx.q = Some(q);
    ctx.q_plus1 = Some(q1);
    let light = plan_merge(&ctx, false, &ControllerConfig::default(), &ClassCatalog::default());
    assert_eq!(light.kind, StrategyKind::DirectLaneChange);
    let heavy = plan_merge(&ctx, true, &ControllerConfig::default(), &ClassCatalog::default());
    assert_eq!(heavy.kind, StrategyKind::RampAccelAdjust);
}

#[test]
fn validate_accepts_solved_decision() {
    let r = ramp_target(15.0);
    let mut layout = RoadLayout::default();
    layout.v_lim_min = 15.0;
    let p = veh(2, VehicleClass::Cav, Lane::MainlineOuter, -560.0, 25.0);
    let mut ctx = base_ctx(r, Some(p));
    ctx.layout = layout;
    ctx.q = Some(veh(3, VehicleClass::Cav, Lane::MainlineInner, -554.0, 25.0));
    ctx.q_plus1 = Some(veh(4, VehicleClass::Cav, Lane::MainlineInner, -566.0, 25.0));
    let d = plan_merge(&ctx, false, &ControllerConfig::default(), &ClassCatalog::default());
    assert_ne!(d.kind, StrategyKind::Infeasible);
    let actors = validation_actors(&ctx, &d);
    validate_plan(&d, &actors, &ctx.safety, &ctx.layout, &ClassCatalog::default()).unwrap();
}

#[test]
fn validate_flags_short_merge_gap() {
    // Hand-built decision: the follower is projected 1.0 m behind the ramp
    // vehicle at the merge instant, below the safe spacing.
    let r = veh(1, VehicleClass::Cat, Lane::AccelLane, 100.0, 20.0);
    let p1 = veh(2, VehicleClass::Cav, Lane::MainlineOuter, 92.0 - 1.0, 20.0);
    let decision = StrategyDecision {
        kind: StrategyKind::RampAccelAdjust,
        solved: None,
        plans: vec![TrajectoryPlan::hold(r.id, 1.0)],
        lane_changes: vec![],
        gap_checks: vec![GapCheck {
            leader: r.id,
            follower: p1.id,
            t: 0.0,
            min_gap: 1.24,
        }],
        roles: vec![(r.id, Role::RampTarget)],
        horizon: 1.0,
    };
    let actors = vec![
        PlanActor {
            state: r,
            plan: Some(decision.plans[0].clone()),
        },
        PlanActor {
            state: p1,
            plan: None,
        },
    ];
    let violations = validate_plan(
        &decision,
        &actors,
        &SafetyParams::default(),
        &RoadLayout::default(),
        &ClassCatalog::default(),
    )
    .unwrap_err();
    assert!(matches!(violations[0], PlanViolation::MergeGap { .. }));
}

#[test]
fn validate_flags_accel_beyond_class_bound() {
    let r = veh(1, VehicleClass::Cat, Lane::RampNormal, -100.0, 15.0);
    let plan = TrajectoryPlan {
        vehicle: r.id,
        segments: vec![crate::model::PlanSegment {
            t_start: 0.0,
            duration: 2.0,
            a: 3.0, // beyond the truck's 1.5
        }],
    };
    let decision = StrategyDecision {
        kind: StrategyKind::RampAccelAdjust,
        solved: None,
        plans: vec![plan.clone()],
        lane_changes: vec![],
        gap_checks: vec![],
        roles: vec![(r.id, Role::RampTarget)],
        horizon: 2.0,
    };
    let actors = vec![PlanActor {
        state: r,
        plan: Some(plan),
    }];
    let violations = validate_plan(
        &decision,
        &actors,
        &SafetyParams::default(),
        &RoadLayout::default(),
        &ClassCatalog::default(),
    )
    .unwrap_err();
    assert!(violations
        .iter()
        .any(|v| matches!(v, PlanViolation::AccelBound { .. })));
}

proptest! {
    /// With a CAT cooperative vehicle no decision ever carries a
    /// lane-change kind.
    #[test]
    fn cat_cooperative_never_lane_changes(
        x_p in -900.0f64..-20.0,
        v_p in 14.0f64..27.0,
        x_r in -400.0f64..-50.0,
        v_r in 12.0f64..20.0,
        with_rear in proptest::bool::ANY,
        rear_gap in 10.0f64..80.0,
        heavy in proptest::bool::ANY,
    ) {
        let r = veh(1, VehicleClass::Cat, Lane::RampNormal, x_r, v_r);
        let p = veh(2, VehicleClass::Cat, Lane::MainlineOuter, x_p, v_p);
        let mut ctx = base_ctx(r, Some(p));
        ctx.layout.v_lim_min = 14.0;
        if with_rear {
            ctx.p_plus1 = Some(veh(5, VehicleClass::Cav, Lane::MainlineOuter, x_p - rear_gap, v_p));
        }
        let d = plan_merge(&ctx, heavy, &ControllerConfig::default(), &ClassCatalog::default());
        prop_assert!(
            matches!(d.kind, StrategyKind::RampAccelAdjust | StrategyKind::Infeasible),
            "got {:?}", d.kind
        );
    }

    /// Whatever the dispatcher releases has passed validation; re-validating
    /// must agree.
    #[test]
    fn released_decisions_validate(
        x_p in -800.0f64..-100.0,
        v_p in 17.0f64..27.0,
        gap_f in 0.5f64..40.0,
        gap_b in 0.5f64..40.0,
        heavy in proptest::bool::ANY,
    ) {
        let r = ramp_target(60.0 / 3.6);
        let p = veh(2, VehicleClass::Cav, Lane::MainlineOuter, x_p, v_p);
        let mut ctx = base_ctx(r, Some(p));
        ctx.q = Some(veh(3, VehicleClass::Cav, Lane::MainlineInner, x_p + gap_f + 5.0, v_p));
        ctx.q_plus1 = Some(veh(4, VehicleClass::Cav, Lane::MainlineInner, x_p - gap_b - 5.0, v_p));
        let d = plan_merge(&ctx, heavy, &ControllerConfig::default(), &ClassCatalog::default());
        if d.kind != StrategyKind::Infeasible {
            let actors = validation_actors(&ctx, &d);
            let catalog = ClassCatalog::default();
            prop_assert!(validate_plan(&d, &actors, &ctx.safety, &ctx.layout, &catalog).is_ok());
        }
    }
}
