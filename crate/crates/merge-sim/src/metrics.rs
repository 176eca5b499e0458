//! Delay and speed metrics over a trace, and the improvement rate between
//! paired runs.

use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, Strategy};
use crate::model::Lane;
use crate::trace::TraceLog;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no vehicles match the requested population")]
    NoVehicles,
    #[error("improvement rate undefined for a non-positive baseline delay")]
    Undefined,
}

/// Which spawn population a metric aggregates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Population {
    Mainline,
    Ramp,
}

impl Population {
    pub fn contains(self, spawn_lane: Lane) -> bool {
        match self {
            Population::Mainline => spawn_lane.is_mainline(),
            Population::Ramp => spawn_lane == Lane::RampNormal,
        }
    }
}

/// Average delay of the population: actual section travel time minus the
/// free-flow time `length / v_free`, averaged over vehicles that completed
/// the section. Waiting at a blocked entry counts as delay. Vehicles
/// scheduled during the warmup window are excluded.
pub fn average_delay(
    trace: &TraceLog,
    length: f64,
    population: Population,
    warmup: f64,
) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0u64;
    for v in &trace.vehicles {
        if !population.contains(v.spawn_lane) || v.sched_t < warmup {
            continue;
        }
        let Some(exit_t) = v.exit_t else { continue };
        let actual = exit_t - v.sched_t;
        let minimum = length / v.v_free;
        sum += actual - minimum;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoVehicles);
    }
    Ok(sum / n as f64)
}

/// Time-mean speed: the arithmetic mean of all instantaneous speeds
/// observed on the path during `[t1, t2]`.
pub fn average_speed(
    trace: &TraceLog,
    interval: (f64, f64),
    population: Population,
) -> Result<f64, MetricsError> {
    let (t1, t2) = interval;
    // Prefer raw records when they were kept; otherwise fall back to the
    // interval accumulators maintained by the engine.
    if !trace.records.is_empty() {
        let mut sum = 0.0;
        let mut n = 0u64;
        for r in &trace.records {
            if r.t < t1 || r.t > t2 {
                continue;
            }
            let on_path = match population {
                Population::Mainline => r.lane.is_mainline(),
                Population::Ramp => r.lane.is_ramp_side(),
            };
            if on_path {
                sum += r.v;
                n += 1;
            }
        }
        if n == 0 {
            return Err(MetricsError::NoVehicles);
        }
        return Ok(sum / n as f64);
    }
    let mut sum = 0.0;
    let mut n = 0u64;
    for acc in &trace.intervals {
        let end = acc.start + trace.interval_len;
        if acc.start >= t1 && end <= t2 + 1e-9 {
            match population {
                Population::Mainline => {
                    sum += acc.mainline_sum;
                    n += acc.mainline_n;
                }
                Population::Ramp => {
                    sum += acc.ramp_sum;
                    n += acc.ramp_n;
                }
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::NoVehicles);
    }
    Ok(sum / n as f64)
}

/// Mean-speed series per reporting interval, skipping the warmup and empty
/// intervals.
pub fn interval_mean_speeds(trace: &TraceLog, population: Population, warmup: f64) -> Vec<f64> {
    trace
        .intervals
        .iter()
        .filter(|acc| acc.start >= warmup)
        .filter_map(|acc| match population {
            Population::Mainline => {
                (acc.mainline_n > 0).then(|| acc.mainline_sum / acc.mainline_n as f64)
            }
            Population::Ramp => (acc.ramp_n > 0).then(|| acc.ramp_sum / acc.ramp_n as f64),
        })
        .collect()
}

/// Sample variance of a series.
pub fn sample_variance(series: &[f64]) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (series.len() - 1) as f64
}

/// Delay improvement of the controlled case over the uncontrolled one, in
/// percent.
pub fn improvement_rate(d_nc: f64, d_pc: f64) -> Result<f64, MetricsError> {
    if d_nc <= 0.0 {
        return Err(MetricsError::Undefined);
    }
    Ok((1.0 - d_pc / d_nc) * 100.0)
}

/// Aggregate report of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub avg_delay_mainline: Option<f64>,
    pub avg_delay_ramp: Option<f64>,
    pub avg_speed_mainline: Option<f64>,
    pub avg_speed_ramp: Option<f64>,
    pub mainline_speed_variance: f64,
    pub conflict_count: usize,
    pub collision_count: usize,
    pub vehicles_spawned: usize,
    pub vehicles_finished: usize,
    pub mainline_flow: f64,
    pub ramp_flow: f64,
    pub cat_share: f64,
    pub seed: u64,
    pub strategy: Strategy,
    pub duration: f64,
}

/// Fold a trace into its aggregate metrics.
pub fn summarize(trace: &TraceLog, cfg: &ScenarioConfig) -> Metrics {
    let main_len = cfg.layout.mainline_section_len();
    let ramp_len = cfg.layout.ramp_section_len();
    let window = (cfg.warmup, cfg.duration);
    Metrics {
        avg_delay_mainline: average_delay(trace, main_len, Population::Mainline, cfg.warmup).ok(),
        avg_delay_ramp: average_delay(trace, ramp_len, Population::Ramp, cfg.warmup).ok(),
        avg_speed_mainline: average_speed(trace, window, Population::Mainline).ok(),
        avg_speed_ramp: average_speed(trace, window, Population::Ramp).ok(),
        mainline_speed_variance: sample_variance(&interval_mean_speeds(
            trace,
            Population::Mainline,
            cfg.warmup,
        )),
        conflict_count: trace.conflict_count(),
        collision_count: trace.collision_count(),
        vehicles_spawned: trace.vehicles.len(),
        vehicles_finished: trace.vehicles.iter().filter(|v| v.exit_t.is_some()).count(),
        mainline_flow: cfg.mainline_flow,
        ramp_flow: cfg.ramp_flow,
        cat_share: cfg.cat_share,
        seed: cfg.seed,
        strategy: cfg.strategy,
        duration: cfg.duration,
    }
}
