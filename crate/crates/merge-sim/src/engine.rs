//! Deterministic fixed-step world: spawning, plan execution with optional
//! tracking-error injection, uncontrolled car-following and lane changing,
//! the planning pipeline, and event/trace collection.
//!
//! A run is strictly single-threaded; identical `(config, seed)` produce
//! identical traces. Randomness comes from counter-mode generators seeded
//! per stream and consumed in a fixed vehicle order. Each step computes all
//! longitudinal updates from one snapshot before applying any of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::{
    idm_acceleration, lane_change_decision, uncontrolled_ramp_behavior, IdmParams,
    LaneChangeChoice, LaneChangeScene,
};
use crate::config::{ConfigError, ScenarioConfig, Strategy};
use crate::controller::{
    plan_merge, select_cooperative_vehicle, ControllerConfig, MergeContext, StrategyDecision,
    StrategyKind,
};
use crate::model::{
    advance_constant_accel, bumper_gap, plan_state_at, ClassCatalog, Lane, PlanSegment, Role,
    RoadLayout, TrajectoryPlan, VehicleClass, VehicleId, VehicleState,
};
use crate::safety::SafetyParams;
use crate::trace::{Event, EventKind, IntervalAccum, TraceLog, TraceRecord, VehicleSummary};

/// Deterministic arrival times for one demand stream: shifted-exponential
/// headways with mean `3600/flow` and shift `min_headway`.
pub fn spawn_stream(
    flow: f64,
    duration: f64,
    seed: u64,
    min_headway: f64,
) -> Result<Vec<f64>, ConfigError> {
    if flow < 0.0 {
        return Err(ConfigError::Invalid("flow must be non-negative".into()));
    }
    if flow == 0.0 || duration <= 0.0 {
        return Ok(Vec::new());
    }
    let mean = 3600.0 / flow;
    if mean <= min_headway {
        return Err(ConfigError::Invalid(
            "flow too high for the minimum spawn headway".into(),
        ));
    }
    let scale = mean - min_headway;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrivals = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random();
        t += min_headway - scale * (1.0 - u).ln();
        if t > duration {
            break;
        }
        arrivals.push(t);
    }
    Ok(arrivals)
}

#[derive(Clone, Debug)]
struct ActivePlan {
    plan: TrajectoryPlan,
    epoch: f64,
    x0: f64,
    v0: f64,
    /// Scheduled lane switches in absolute time.
    switches: Vec<(f64, Lane, Lane)>,
    /// Pure constant-speed hold with no pending switches.
    is_hold: bool,
}

impl ActivePlan {
    fn horizon_abs(&self) -> f64 {
        self.epoch + self.plan.horizon()
    }
}

#[derive(Clone, Debug)]
struct SimVehicle {
    state: VehicleState,
    plan: Option<ActivePlan>,
    track_offset: f64,
    lc_ready_at: f64,
    replan_at: f64,
    forced_stop_logged: bool,
    emergency_active: bool,
}

impl SimVehicle {
    fn is_controlled(&self) -> bool {
        self.plan.is_some()
    }

    /// Safe to assume constant speed for projections: unplanned vehicles and
    /// vehicles merely holding their speed qualify.
    fn is_projectable(&self) -> bool {
        match &self.plan {
            None => true,
            Some(p) => p.is_hold,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct PendingSpawn {
    sched_t: f64,
    class: VehicleClass,
    lane: Lane,
}

/// Longitudinal update computed from the snapshot.
#[derive(Clone, Copy, Debug)]
struct Motion {
    x: f64,
    v: f64,
    a: f64,
    offset: f64,
    emergency: bool,
    forced_stop: bool,
}

pub struct World<'a> {
    cfg: &'a ScenarioConfig,
    catalog: ClassCatalog,
    layout: RoadLayout,
    safety: SafetyParams,
    controller: ControllerConfig,
    t: f64,
    vehicles: Vec<SimVehicle>,
    pending: [std::collections::VecDeque<PendingSpawn>; 3],
    next_id: u64,
    noise_rng: ChaCha8Rng,
    trace: TraceLog,
    /// Recent outer-lane crossings of the lane-start coordinate, for the
    /// heavy-traffic measurement.
    outer_crossings: std::collections::VecDeque<f64>,
}

fn group_of(lane: Lane) -> usize {
    match lane {
        Lane::MainlineInner => 0,
        Lane::MainlineOuter => 1,
        Lane::RampNormal | Lane::AccelLane => 2,
    }
}

fn idm_for(cfg: &ScenarioConfig, catalog: &ClassCatalog, state: &VehicleState) -> IdmParams {
    let v_des = match state.lane {
        Lane::RampNormal => cfg.ramp_entry_speed,
        _ => cfg.layout.v_lim_max,
    };
    let mut p = IdmParams::for_class(catalog.get(state.class), v_des);
    p.s0 = cfg.idm_s0;
    p.t_headway = cfg.idm_headway;
    p
}

impl<'a> World<'a> {
    pub fn new(cfg: &'a ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let safety = cfg.safety_params()?;
        let mut pending: [std::collections::VecDeque<PendingSpawn>; 3] = Default::default();
        let streams = [
            (Lane::MainlineInner, cfg.mainline_flow, 1u64),
            (Lane::MainlineOuter, cfg.mainline_flow, 2u64),
            (Lane::RampNormal, cfg.ramp_flow, 3u64),
        ];
        for (i, (lane, flow, salt)) in streams.into_iter().enumerate() {
            let arrivals =
                spawn_stream(flow, cfg.duration, cfg.seed.wrapping_add(salt), cfg.min_headway)?;
            let mut class_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(salt) ^ 0x5eed);
            for sched_t in arrivals {
                let class = if lane == Lane::MainlineInner {
                    VehicleClass::Cav
                } else if class_rng.random::<f64>() < cfg.cat_share {
                    VehicleClass::Cat
                } else {
                    VehicleClass::Cav
                };
                pending[i].push_back(PendingSpawn {
                    sched_t,
                    class,
                    lane,
                });
            }
        }
        let interval_count = ((cfg.duration / cfg.speed_interval).ceil() as usize).max(1);
        let intervals = (0..interval_count)
            .map(|i| IntervalAccum {
                start: i as f64 * cfg.speed_interval,
                ..IntervalAccum::default()
            })
            .collect();
        Ok(World {
            cfg,
            catalog: cfg.classes,
            layout: cfg.layout,
            safety,
            controller: cfg.controller,
            t: 0.0,
            vehicles: Vec::new(),
            pending,
            next_id: 1,
            noise_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e01_5e),
            trace: TraceLog {
                records: Vec::new(),
                events: Vec::new(),
                vehicles: Vec::new(),
                intervals,
                duration: cfg.duration,
                dt: cfg.dt,
                interval_len: cfg.speed_interval,
            },
            outer_crossings: std::collections::VecDeque::new(),
        })
    }

    fn log(&mut self, vehicle: VehicleId, kind: EventKind) {
        self.trace.events.push(Event {
            t: self.t,
            vehicle,
            kind,
        });
    }

    /// Per-group vehicle indices ordered front (largest x) to back.
    fn lane_order(&self) -> [Vec<usize>; 3] {
        let mut groups: [Vec<usize>; 3] = Default::default();
        for (i, v) in self.vehicles.iter().enumerate() {
            groups[group_of(v.state.lane)].push(i);
        }
        for g in &mut groups {
            g.sort_by(|&a, &b| {
                self.vehicles[b]
                    .state
                    .x
                    .partial_cmp(&self.vehicles[a].state.x)
                    .unwrap()
            });
        }
        groups
    }

    fn leader_in(&self, order: &[usize], idx: usize) -> Option<usize> {
        let pos = order.iter().position(|&i| i == idx)?;
        (pos > 0).then(|| order[pos - 1])
    }

    /// Nearest leader/follower in a group around position `x`, excluding
    /// `skip`.
    fn neighbors_at(&self, order: &[usize], x: f64, skip: usize) -> (Option<usize>, Option<usize>) {
        let mut leader = None;
        for &i in order {
            if i == skip {
                continue;
            }
            if self.vehicles[i].state.x >= x {
                leader = Some(i);
            } else {
                return (leader, Some(i));
            }
        }
        (leader, None)
    }

    /// One fixed step.
    fn step(&mut self) {
        let dt = self.cfg.dt;
        let t_next = self.t + dt;

        // Pass A: longitudinal updates from the pre-step snapshot.
        let motions = self.compute_motions(t_next);

        // Pass B: apply, count lane-start crossings, log edge events.
        let mut crossings = 0usize;
        for (idx, m) in motions.iter().enumerate() {
            let v = &mut self.vehicles[idx];
            if v.state.lane == Lane::MainlineOuter && v.state.x < 0.0 && m.x >= 0.0 {
                crossings += 1;
            }
            v.state.x = m.x;
            v.state.v = m.v;
            v.state.a = m.a;
            v.track_offset = m.offset;
        }
        self.t = t_next;
        for (idx, m) in motions.iter().enumerate() {
            let id = self.vehicles[idx].state.id;
            let was = self.vehicles[idx].emergency_active;
            self.vehicles[idx].emergency_active = m.emergency;
            if m.emergency && !was {
                self.log(id, EventKind::EmergencyBrake);
            }
            if m.forced_stop && !self.vehicles[idx].forced_stop_logged {
                self.vehicles[idx].forced_stop_logged = true;
                self.log(id, EventKind::ForcedStop);
            }
        }
        for _ in 0..crossings {
            self.outer_crossings.push_back(self.t);
        }
        let window_start = self.t - self.controller.heavy_flow_window;
        while self
            .outer_crossings
            .front()
            .is_some_and(|&t| t < window_start)
        {
            self.outer_crossings.pop_front();
        }

        // Ramp-to-acceleration-lane transition at x = 0.
        for v in &mut self.vehicles {
            if v.state.lane == Lane::RampNormal && v.state.x >= 0.0 {
                v.state.lane = Lane::AccelLane;
            }
        }

        self.apply_scheduled_switches();
        self.apply_mandatory_merges();
        if self.cfg.strategy == Strategy::Uncontrolled {
            self.apply_discretionary_changes();
        }
        self.finish_plans();
        self.process_exits();
        self.insert_arrivals();
        if self.cfg.strategy == Strategy::Preemptive {
            self.run_planning();
        }
        self.detect_collisions();
        self.record_frame();
    }

    fn compute_motions(&mut self, t_next: f64) -> Vec<Motion> {
        let states: Vec<VehicleState> = self.vehicles.iter().map(|v| v.state).collect();
        let orders = self.lane_order();
        let mut motions = Vec::with_capacity(states.len());

        for idx in 0..states.len() {
            let state = states[idx];
            let motion = if let Some(active) = &self.vehicles[idx].plan {
                let rel = t_next - active.epoch;
                let (x_nom, v_nom) = plan_state_at(&active.plan, active.x0, active.v0, rel);
                let a_nom = active
                    .plan
                    .segments
                    .iter()
                    .find(|s| rel >= s.t_start && rel < s.t_start + s.duration)
                    .map(|s| s.a)
                    .unwrap_or(0.0);
                let inj = self.cfg.error_injection;
                let (x, offset) = if inj.enabled && inj.pos_bound > 0.0 {
                    let u: f64 = self.noise_rng.random_range(-inj.pos_bound..=inj.pos_bound);
                    let offset = (self.vehicles[idx].track_offset + u)
                        .clamp(-inj.trk_bound, inj.trk_bound);
                    let jitter: f64 =
                        self.noise_rng.random_range(-inj.pos_bound..=inj.pos_bound);
                    (x_nom + offset + jitter, offset)
                } else {
                    (x_nom, self.vehicles[idx].track_offset)
                };
                Motion {
                    x,
                    v: v_nom,
                    a: a_nom,
                    offset,
                    emergency: false,
                    forced_stop: false,
                }
            } else {
                let group = &orders[group_of(state.lane)];
                let leader = self.leader_in(group, idx).map(|i| states[i]);
                let idm = idm_for(self.cfg, &self.catalog, &state);
                let (a, emergency, forced_stop) = if state.lane.is_ramp_side() {
                    let outer = &orders[group_of(Lane::MainlineOuter)];
                    let (ol, of) = self.neighbors_at(outer, state.x, idx);
                    let ramp_idm = idm_for(
                        self.cfg,
                        &self.catalog,
                        &VehicleState {
                            lane: Lane::RampNormal,
                            ..state
                        },
                    );
                    let outer_idm = idm_for(
                        self.cfg,
                        &self.catalog,
                        &VehicleState {
                            lane: Lane::MainlineOuter,
                            ..state
                        },
                    );
                    let follower_idm = of.map(|i| idm_for(self.cfg, &self.catalog, &states[i]));
                    let follower = match (of, &follower_idm) {
                        (Some(i), Some(p)) => {
                            Some((p, self.catalog.get(states[i].class).decel_max))
                        }
                        _ => None,
                    };
                    let behavior = uncontrolled_ramp_behavior(
                        &state,
                        leader.as_ref(),
                        ol.map(|i| &states[i]),
                        of.map(|i| &states[i]),
                        &self.layout,
                        &ramp_idm,
                        &outer_idm,
                        follower.map(|(p, d)| (p, d)),
                        self.catalog.get(state.class).decel_max,
                        &self.cfg.lane_change,
                    );
                    (behavior.accel, behavior.emergency, behavior.forced_stop)
                } else {
                    let gap = leader
                        .map(|l| bumper_gap(&l, &state))
                        .unwrap_or(f64::INFINITY);
                    let v_leader = leader.map(|l| l.v).unwrap_or(0.0);
                    let out = idm_acceleration(state.v, v_leader, gap, &idm);
                    (out.a, out.emergency, false)
                };
                let (x, v) = advance_constant_accel(state.x, state.v, a, self.cfg.dt);
                Motion {
                    x,
                    v,
                    a,
                    offset: self.vehicles[idx].track_offset,
                    emergency,
                    forced_stop,
                }
            };
            motions.push(motion);
        }
        motions
    }

    fn apply_scheduled_switches(&mut self) {
        let t = self.t;
        let mut moves: Vec<(usize, Lane, Lane)> = Vec::new();
        for (idx, v) in self.vehicles.iter_mut().enumerate() {
            let Some(plan) = &mut v.plan else { continue };
            while let Some(&(ts, from, to)) = plan.switches.first() {
                if ts > t {
                    break;
                }
                plan.switches.remove(0);
                moves.push((idx, from, to));
            }
        }
        for (idx, _from, to) in moves {
            let prev = self.vehicles[idx].state.lane;
            self.vehicles[idx].state.lane = to;
            let id = self.vehicles[idx].state.id;
            if to == Lane::MainlineOuter && prev.is_ramp_side() {
                let (gap_lead, gap_follow) = self.adjacent_gaps(idx);
                self.log(
                    id,
                    EventKind::Merge {
                        gap_lead,
                        gap_follow,
                        controlled: true,
                    },
                );
            } else {
                self.log(id, EventKind::LaneChange { from: prev, to });
            }
        }
    }

    /// Bumper gaps to the current same-group leader and follower.
    fn adjacent_gaps(&self, idx: usize) -> (Option<f64>, Option<f64>) {
        let state = self.vehicles[idx].state;
        let orders = self.lane_order();
        let order = &orders[group_of(state.lane)];
        let (leader, follower) = self.neighbors_at(order, state.x, idx);
        (
            leader.map(|i| bumper_gap(&self.vehicles[i].state, &state)),
            follower.map(|i| bumper_gap(&state, &self.vehicles[i].state)),
        )
    }

    fn apply_mandatory_merges(&mut self) {
        loop {
            let orders = self.lane_order();
            let outer_order = &orders[1];
            let mut accepted = None;
            for &idx in &orders[2] {
                let v = &self.vehicles[idx];
                if v.is_controlled() || v.state.lane != Lane::AccelLane {
                    continue;
                }
                let state = v.state;
                let (ol, of) = self.neighbors_at(outer_order, state.x, idx);
                let scene = LaneChangeScene {
                    cur_leader: None,
                    target_leader: ol.map(|i| &self.vehicles[i].state),
                    target_follower: of.map(|i| &self.vehicles[i].state),
                };
                let target_idm = idm_for(
                    self.cfg,
                    &self.catalog,
                    &VehicleState {
                        lane: Lane::MainlineOuter,
                        ..state
                    },
                );
                let follower_idm = of.map(|i| idm_for(self.cfg, &self.catalog, &self.vehicles[i].state));
                let follower_decel = of
                    .map(|i| self.catalog.get(self.vehicles[i].state.class).decel_max)
                    .unwrap_or(0.0);
                let choice = lane_change_decision(
                    &state,
                    &scene,
                    &idm_for(self.cfg, &self.catalog, &state),
                    &target_idm,
                    follower_idm.as_ref(),
                    self.catalog.get(state.class).decel_max,
                    follower_decel,
                    true,
                    &self.cfg.lane_change,
                );
                if choice == LaneChangeChoice::ChangeLane {
                    accepted = Some(idx);
                    break;
                }
            }
            match accepted {
                Some(idx) => {
                    self.vehicles[idx].state.lane = Lane::MainlineOuter;
                    let id = self.vehicles[idx].state.id;
                    let (gap_lead, gap_follow) = self.adjacent_gaps(idx);
                    self.log(
                        id,
                        EventKind::Merge {
                            gap_lead,
                            gap_follow,
                            controlled: false,
                        },
                    );
                }
                None => break,
            }
        }
    }

    fn apply_discretionary_changes(&mut self) {
        loop {
            let orders = self.lane_order();
            let mut accepted = None;
            'outer: for group in [0usize, 1] {
                for &idx in &orders[group] {
                    let v = &self.vehicles[idx];
                    if v.is_controlled() || self.t < v.lc_ready_at {
                        continue;
                    }
                    let state = v.state;
                    let target_lane = match state.lane {
                        Lane::MainlineInner => Lane::MainlineOuter,
                        Lane::MainlineOuter => Lane::MainlineInner,
                        _ => continue,
                    };
                    if !self.layout.lane_admits(target_lane, state.class) {
                        continue;
                    }
                    let target_order = &orders[group_of(target_lane)];
                    let cur_leader = self.leader_in(&orders[group], idx);
                    let (tl, tf) = self.neighbors_at(target_order, state.x, idx);
                    // Keep planned vehicles' surroundings stable.
                    if tl.is_some_and(|i| self.vehicles[i].is_controlled())
                        || tf.is_some_and(|i| self.vehicles[i].is_controlled())
                    {
                        continue;
                    }
                    let scene = LaneChangeScene {
                        cur_leader: cur_leader.map(|i| &self.vehicles[i].state),
                        target_leader: tl.map(|i| &self.vehicles[i].state),
                        target_follower: tf.map(|i| &self.vehicles[i].state),
                    };
                    let follower_idm =
                        tf.map(|i| idm_for(self.cfg, &self.catalog, &self.vehicles[i].state));
                    let follower_decel = tf
                        .map(|i| self.catalog.get(self.vehicles[i].state.class).decel_max)
                        .unwrap_or(0.0);
                    let choice = lane_change_decision(
                        &state,
                        &scene,
                        &idm_for(self.cfg, &self.catalog, &state),
                        &idm_for(
                            self.cfg,
                            &self.catalog,
                            &VehicleState {
                                lane: target_lane,
                                ..state
                            },
                        ),
                        follower_idm.as_ref(),
                        self.catalog.get(state.class).decel_max,
                        follower_decel,
                        false,
                        &self.cfg.lane_change,
                    );
                    if choice == LaneChangeChoice::ChangeLane {
                        accepted = Some((idx, state.lane, target_lane));
                        break 'outer;
                    }
                }
            }
            match accepted {
                Some((idx, from, to)) => {
                    self.vehicles[idx].state.lane = to;
                    self.vehicles[idx].lc_ready_at = self.t + self.cfg.lc_cooldown;
                    let id = self.vehicles[idx].state.id;
                    self.log(id, EventKind::LaneChange { from, to });
                }
                None => break,
            }
        }
    }

    fn finish_plans(&mut self) {
        for idx in 0..self.vehicles.len() {
            let done = match &self.vehicles[idx].plan {
                Some(p) => self.t >= p.horizon_abs() - 1e-9 && p.switches.is_empty(),
                None => false,
            };
            if done {
                self.vehicles[idx].plan = None;
                self.vehicles[idx].track_offset = 0.0;
                self.vehicles[idx].state.role = Role::Background;
            }
        }
    }

    fn process_exits(&mut self) {
        let exit_x = self.layout.exit_x();
        let mut exited: Vec<usize> = Vec::new();
        for (idx, v) in self.vehicles.iter().enumerate() {
            if v.state.x >= exit_x {
                exited.push(idx);
            }
        }
        for &idx in &exited {
            let v = &self.vehicles[idx];
            let id = v.state.id;
            let crossing = if v.state.v > 1e-9 {
                (self.t - (v.state.x - exit_x) / v.state.v).max(self.t - self.cfg.dt)
            } else {
                self.t
            };
            if let Some(meta) = self.trace.vehicles.iter_mut().find(|m| m.id == id) {
                meta.exit_t = Some(crossing);
            }
            self.log(id, EventKind::Exit);
        }
        let exit_ids: Vec<VehicleId> = exited
            .iter()
            .map(|&i| self.vehicles[i].state.id)
            .collect();
        self.vehicles.retain(|v| !exit_ids.contains(&v.state.id));
    }

    fn insert_arrivals(&mut self) {
        for stream in 0..3 {
            loop {
                let Some(&next) = self.pending[stream].front() else {
                    break;
                };
                if next.sched_t > self.t {
                    break;
                }
                let (entry_x, v_des) = match next.lane {
                    Lane::RampNormal => (self.layout.ramp_entry_x(), self.cfg.ramp_entry_speed),
                    _ => (self.layout.mainline_entry_x(), self.layout.v_lim_max),
                };
                // Gap to the rearmost vehicle ahead of the entry point,
                // including anything inserted earlier this step.
                let g = group_of(next.lane);
                let mut gap = f64::INFINITY;
                let mut best_x = f64::INFINITY;
                for v in &self.vehicles {
                    if group_of(v.state.lane) == g && v.state.x >= entry_x && v.state.x < best_x {
                        best_x = v.state.x;
                        gap = v.state.x - entry_x - v.state.length;
                    }
                }
                let v_insert = v_des.min((gap - self.cfg.idm_s0) / self.cfg.idm_headway);
                if v_insert < 0.5 * v_des {
                    break; // blocked; retried next step in arrival order
                }
                self.pending[stream].pop_front();
                let id = VehicleId(self.next_id);
                self.next_id += 1;
                let class_len = self.catalog.get(next.class).length;
                let state = VehicleState {
                    id,
                    class: next.class,
                    length: class_len,
                    lane: next.lane,
                    x: entry_x,
                    v: v_insert,
                    a: 0.0,
                    role: if next.lane == Lane::RampNormal {
                        Role::RampTarget
                    } else {
                        Role::Background
                    },
                };
                let v_free = self.free_flow_speed(next.lane, next.class);
                self.trace.vehicles.push(VehicleSummary {
                    id,
                    class: next.class,
                    spawn_lane: next.lane,
                    sched_t: next.sched_t,
                    enter_t: self.t,
                    exit_t: None,
                    v_free,
                });
                self.vehicles.push(SimVehicle {
                    state,
                    plan: None,
                    track_offset: 0.0,
                    lc_ready_at: self.t + self.cfg.lc_cooldown,
                    replan_at: self.t,
                    forced_stop_logged: false,
                    emergency_active: false,
                });
                self.log(id, EventKind::Spawn);
                self.log(id, EventKind::Enter);
            }
        }
    }

    /// Free-flow reference speed for the delay metric: mainline vehicles
    /// cruise at the limit; ramp vehicles follow the nominal free profile
    /// (entry speed on the ramp, then the nominal acceleration toward the
    /// limit).
    fn free_flow_speed(&self, lane: Lane, class: VehicleClass) -> f64 {
        match lane {
            Lane::RampNormal => {
                let length = self.layout.ramp_section_len();
                let v0 = self.cfg.ramp_entry_speed;
                let v_top = self.layout.v_lim_max;
                let a = self
                    .controller
                    .a_r_default
                    .min(self.catalog.get(class).accel_max);
                let ramp = self.layout.ramp_len;
                let d_acc = (v_top * v_top - v0 * v0) / (2.0 * a);
                let rest = length - ramp;
                let t = if d_acc <= rest {
                    ramp / v0 + (v_top - v0) / a + (rest - d_acc) / v_top
                } else {
                    // Still accelerating at the exit boundary.
                    let t_acc = ((v0 * v0 + 2.0 * a * rest).sqrt() - v0) / a;
                    ramp / v0 + t_acc
                };
                length / t
            }
            _ => self.layout.v_lim_max,
        }
    }

    fn heavy_traffic(&self) -> bool {
        let window = self.controller.heavy_flow_window;
        if window <= 0.0 {
            return false;
        }
        let effective = window.min(self.t.max(1.0));
        let flow = self.outer_crossings.len() as f64 * 3600.0 / effective;
        flow >= self.controller.heavy_flow_threshold
    }

    fn run_planning(&mut self) {
        let due: Vec<usize> = self
            .vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| {
                v.state.lane == Lane::RampNormal
                    && v.plan.is_none()
                    && v.state.x < 0.0
                    && self.t >= v.replan_at
            })
            .map(|(i, _)| i)
            .collect();
        for idx in due {
            self.plan_for(idx);
        }
    }

    /// One pass of the selection pipeline for ramp vehicle `idx`: pick the
    /// best-matching cooperative candidate, dispatch the strategy ladder,
    /// and on failure retry with the next candidate until none remain.
    fn plan_for(&mut self, idx: usize) {
        let r = self.vehicles[idx].state;
        let heavy = self.heavy_traffic();
        let r_accel_max = self.catalog.get(r.class).accel_max;

        let orders = self.lane_order();
        let ramp_leader_idx = self.leader_in(&orders[2], idx);

        let mut candidates: Vec<VehicleState> = self
            .vehicles
            .iter()
            .filter(|v| {
                v.state.lane == Lane::MainlineOuter && v.state.x < 0.0 && v.plan.is_none()
            })
            .map(|v| v.state)
            .collect();
        candidates.sort_by(|a, b| b.x.partial_cmp(&a.x).unwrap());

        if candidates.is_empty()
            && !self
                .vehicles
                .iter()
                .any(|v| v.state.lane == Lane::MainlineOuter)
        {
            // Genuinely empty outer lane: free merge.
            let ctx = self.build_context(r, None, ramp_leader_idx);
            let decision = plan_merge(&ctx, heavy, &self.controller, &self.catalog);
            if decision.kind != StrategyKind::Infeasible {
                self.issue(idx, &decision);
                return;
            }
        } else {
            while !candidates.is_empty() {
                let Some(choice) = select_cooperative_vehicle(
                    &r,
                    &candidates,
                    self.controller.a_r_default,
                    r_accel_max,
                    &self.layout,
                ) else {
                    break;
                };
                let p_state = candidates[choice.index];
                let ctx = self.build_context(r, Some(p_state), ramp_leader_idx);
                // Neighbours already executing an adjustment invalidate the
                // constant-speed projections; skip this candidate.
                let neighbors_ok = [&ctx.q, &ctx.q_plus1, &ctx.p_minus1, &ctx.p_plus1]
                    .into_iter()
                    .flatten()
                    .all(|n| {
                        self.vehicles
                            .iter()
                            .find(|v| v.state.id == n.id)
                            .map(|v| v.is_projectable())
                            .unwrap_or(true)
                    });
                if neighbors_ok {
                    let decision = plan_merge(&ctx, heavy, &self.controller, &self.catalog);
                    if decision.kind != StrategyKind::Infeasible {
                        self.issue(idx, &decision);
                        return;
                    }
                }
                candidates.retain(|c| c.id != p_state.id);
            }
        }
        let id = self.vehicles[idx].state.id;
        self.log(id, EventKind::PlanInfeasible);
        self.vehicles[idx].replan_at = self.t + self.controller.replan_interval;
    }

    fn build_context(
        &self,
        r: VehicleState,
        p: Option<VehicleState>,
        ramp_leader_idx: Option<usize>,
    ) -> MergeContext {
        let orders = self.lane_order();
        let inner = &orders[0];
        let outer = &orders[1];

        let (mut q, mut q_plus1, mut q_leader, mut p_minus1, mut p_plus1) =
            (None, None, None, None, None);
        if let Some(p) = &p {
            let (ql, qf) = self.neighbors_at(inner, p.x, usize::MAX);
            q = ql.map(|i| self.vehicles[i].state);
            q_plus1 = qf.map(|i| self.vehicles[i].state);
            if let Some(qi) = ql {
                q_leader = self.leader_in(inner, qi).map(|i| self.vehicles[i].state);
            }
            if let Some(pos) = outer
                .iter()
                .position(|&i| self.vehicles[i].state.id == p.id)
            {
                p_minus1 = (pos > 0).then(|| self.vehicles[outer[pos - 1]].state);
                p_plus1 = outer.get(pos + 1).map(|&i| self.vehicles[i].state);
            }
        }

        let (ramp_leader, ramp_leader_plan) = match ramp_leader_idx {
            Some(i) => {
                let v = &self.vehicles[i];
                let plan = v
                    .plan
                    .as_ref()
                    .map(|p| rebase_plan(&p.plan, self.t - p.epoch, v.state.id));
                (Some(v.state), plan)
            }
            None => (None, None),
        };

        MergeContext {
            now: self.t,
            r,
            p,
            q,
            q_plus1,
            q_leader,
            p_minus1,
            p_plus1,
            ramp_leader,
            ramp_leader_plan,
            layout: self.layout,
            safety: self.safety,
            a_r_default: self.controller.a_r_default,
        }
    }

    fn issue(&mut self, r_idx: usize, decision: &StrategyDecision) {
        let now = self.t;
        let r_id = self.vehicles[r_idx].state.id;
        for plan in &decision.plans {
            let Some(v) = self
                .vehicles
                .iter_mut()
                .find(|v| v.state.id == plan.vehicle)
            else {
                continue;
            };
            let switches: Vec<(f64, Lane, Lane)> = decision
                .lane_changes
                .iter()
                .filter(|c| c.vehicle == plan.vehicle)
                .map(|c| (now + c.t, c.from, c.to))
                .collect();
            let is_hold = plan.max_accel_magnitude() == 0.0 && switches.is_empty();
            v.plan = Some(ActivePlan {
                plan: plan.clone(),
                epoch: now,
                x0: v.state.x,
                v0: v.state.v,
                switches,
                is_hold,
            });
            v.track_offset = 0.0;
        }
        for (id, role) in &decision.roles {
            if let Some(v) = self.vehicles.iter_mut().find(|v| v.state.id == *id) {
                v.state.role = *role;
            }
        }
        self.log(
            r_id,
            EventKind::PlanIssued {
                kind: decision.kind,
            },
        );
    }

    fn detect_collisions(&mut self) {
        let orders = self.lane_order();
        let mut hits: Vec<(usize, usize)> = Vec::new();
        for order in &orders {
            for w in order.windows(2) {
                let (lead, follow) = (w[0], w[1]);
                let gap = bumper_gap(&self.vehicles[lead].state, &self.vehicles[follow].state);
                if gap < 0.0 {
                    hits.push((lead, follow));
                }
            }
        }
        let replan_at = self.t + self.controller.replan_interval;
        for (lead, follow) in hits {
            let leader_state = self.vehicles[lead].state;
            let id = self.vehicles[follow].state.id;
            let had_plan = self.vehicles[follow].plan.is_some();
            let f = &mut self.vehicles[follow];
            f.state.x = leader_state.x - leader_state.length;
            f.state.v = f.state.v.min(leader_state.v);
            f.plan = None;
            f.replan_at = replan_at;
            self.log(
                id,
                EventKind::Collision {
                    leader: leader_state.id,
                },
            );
            if had_plan {
                self.log(id, EventKind::PlanAborted);
            }
        }
    }

    fn record_frame(&mut self) {
        let interval_idx =
            ((self.t / self.cfg.speed_interval) as usize).min(self.trace.intervals.len() - 1);
        let acc = &mut self.trace.intervals[interval_idx];
        for v in &self.vehicles {
            let s = v.state;
            if s.lane.is_mainline() {
                acc.mainline_sum += s.v;
                acc.mainline_n += 1;
            } else {
                acc.ramp_sum += s.v;
                acc.ramp_n += 1;
            }
        }
        if self.cfg.record_trace {
            for v in &self.vehicles {
                let s = v.state;
                self.trace.records.push(TraceRecord {
                    t: self.t,
                    vehicle_id: s.id,
                    class: s.class,
                    lane: s.lane,
                    x: s.x,
                    v: s.v,
                    a: s.a,
                });
            }
        }
    }
}

/// Remaining portion of an active plan, re-anchored so that t = 0 is "now".
fn rebase_plan(plan: &TrajectoryPlan, elapsed: f64, vehicle: VehicleId) -> TrajectoryPlan {
    let mut segments = Vec::new();
    let mut clock = 0.0;
    for seg in &plan.segments {
        let end = seg.t_start + seg.duration;
        if end <= elapsed {
            continue;
        }
        let start = seg.t_start.max(elapsed);
        segments.push(PlanSegment {
            t_start: clock,
            duration: end - start,
            a: seg.a,
        });
        clock += end - start;
    }
    TrajectoryPlan { vehicle, segments }
}

/// Run one scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<TraceLog, ConfigError> {
    let mut world = World::new(cfg)?;
    let steps = (cfg.duration / cfg.dt).round() as u64;
    for _ in 0..steps {
        world.step();
    }
    Ok(world.trace)
}

#[cfg(test)]
mod tests;
