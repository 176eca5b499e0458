//! Per-step trajectory records, event log and per-vehicle summaries
//! produced by a simulation run.

use serde::{Deserialize, Serialize};

use crate::model::{Lane, VehicleClass, VehicleId};

/// One sampled vehicle state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub vehicle_id: VehicleId,
    pub class: VehicleClass,
    pub lane: Lane,
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// Scheduled arrival of a vehicle at its entry boundary.
    Spawn,
    /// Actual insertion into the network (may lag the spawn when the entry
    /// is blocked).
    Enter,
    Exit,
    LaneChange {
        from: Lane,
        to: Lane,
    },
    /// Merge onto the outer lane, with the bumper gaps to the new leader
    /// and follower at the merge instant.
    Merge {
        gap_lead: Option<f64>,
        gap_follow: Option<f64>,
        controlled: bool,
    },
    /// Standing at the acceleration-lane end with no accepted gap.
    ForcedStop,
    /// Car-following query with a non-positive gap.
    EmergencyBrake,
    /// Bumper overlap with the vehicle ahead.
    Collision {
        leader: VehicleId,
    },
    PlanIssued {
        kind: crate::controller::StrategyKind,
    },
    PlanInfeasible,
    PlanAborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub vehicle: VehicleId,
    pub kind: EventKind,
}

/// Spawn-to-exit summary of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub spawn_lane: Lane,
    /// Scheduled arrival time at the entry boundary.
    pub sched_t: f64,
    /// Actual insertion time.
    pub enter_t: f64,
    /// Crossing time of the exit boundary; `None` if still present at the
    /// end of the run.
    pub exit_t: Option<f64>,
    /// Free-flow reference speed used by the delay metric, m/s.
    pub v_free: f64,
}

/// Accumulated instantaneous-speed observations for one reporting interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalAccum {
    pub start: f64,
    pub mainline_sum: f64,
    pub mainline_n: u64,
    pub ramp_sum: f64,
    pub ramp_n: u64,
}

/// Complete output of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    /// Per-step records; empty when recording was disabled.
    pub records: Vec<TraceRecord>,
    pub events: Vec<Event>,
    pub vehicles: Vec<VehicleSummary>,
    pub intervals: Vec<IntervalAccum>,
    pub duration: f64,
    pub dt: f64,
    pub interval_len: f64,
}

impl TraceLog {
    pub fn collision_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Collision { .. }))
            .count()
    }

    pub fn conflict_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::Collision { .. } | EventKind::EmergencyBrake
                )
            })
            .count()
    }

    pub fn merge_events(&self) -> impl Iterator<Item = (&Event, Option<f64>, Option<f64>, bool)> {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::Merge {
                gap_lead,
                gap_follow,
                controlled,
            } => Some((e, gap_lead, gap_follow, controlled)),
            _ => None,
        })
    }
}
