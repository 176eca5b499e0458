//! Paired scenario-grid runner and its plain-text / JSON reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ScenarioConfig, Strategy};
use crate::engine::run;
use crate::metrics::{improvement_rate, summarize, Metrics};

/// One (mainline flow, ramp flow) cell aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub mainline_flow: f64,
    pub ramp_flow: f64,
    pub seeds: Vec<u64>,
    /// Uncontrolled / preemptive mainline delay, s.
    pub delay_mainline_nc: f64,
    pub delay_mainline_pc: f64,
    pub improvement_mainline: Option<f64>,
    pub delay_ramp_nc: f64,
    pub delay_ramp_pc: f64,
    pub improvement_ramp: Option<f64>,
    pub speed_mainline_nc: f64,
    pub speed_mainline_pc: f64,
    pub speed_variance_nc: f64,
    pub speed_variance_pc: f64,
    pub collisions_nc: usize,
    pub collisions_pc: usize,
    pub conflicts_nc: usize,
    pub conflicts_pc: usize,
    /// Per-run metrics in (seed, strategy) order, uncontrolled first.
    pub runs: Vec<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub cat_share: f64,
    pub duration: f64,
}

/// Run both strategies with shared seeds for every flow combination. Cells
/// evaluate in parallel; the report order is deterministic (sorted by flow
/// pair).
pub fn run_grid(
    base: &ScenarioConfig,
    mainline_flows: &[f64],
    ramp_flows: &[f64],
    seeds: &[u64],
) -> Result<GridReport, ConfigError> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for &m in mainline_flows {
        for &r in ramp_flows {
            pairs.push((m, r));
        }
    }
    // Validate eagerly so parallel workers cannot hit config errors.
    for &(m, r) in &pairs {
        let mut cfg = base.clone();
        cfg.mainline_flow = m;
        cfg.ramp_flow = r;
        cfg.validate()?;
    }

    let cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(mainline_flow, ramp_flow)| {
            let mut runs = Vec::new();
            let mut acc = CellAccum::default();
            for &seed in seeds {
                for strategy in [Strategy::Uncontrolled, Strategy::Preemptive] {
                    let mut cfg = base.clone();
                    cfg.mainline_flow = mainline_flow;
                    cfg.ramp_flow = ramp_flow;
                    cfg.seed = seed;
                    cfg.strategy = strategy;
                    let trace = run(&cfg).expect("validated config");
                    let metrics = summarize(&trace, &cfg);
                    acc.add(&metrics);
                    runs.push(metrics);
                }
            }
            acc.into_cell(mainline_flow, ramp_flow, seeds.to_vec(), runs)
        })
        .collect();

    let mut cells = cells;
    cells.sort_by(|a, b| {
        (a.mainline_flow, a.ramp_flow)
            .partial_cmp(&(b.mainline_flow, b.ramp_flow))
            .unwrap()
    });
    Ok(GridReport {
        cells,
        cat_share: base.cat_share,
        duration: base.duration,
    })
}

#[derive(Default)]
struct CellAccum {
    n: [usize; 2],
    delay_main: [f64; 2],
    delay_ramp: [f64; 2],
    speed_main: [f64; 2],
    variance: [f64; 2],
    collisions: [usize; 2],
    conflicts: [usize; 2],
}

impl CellAccum {
    fn add(&mut self, m: &Metrics) {
        let k = match m.strategy {
            Strategy::Uncontrolled => 0,
            Strategy::Preemptive => 1,
        };
        self.n[k] += 1;
        self.delay_main[k] += m.avg_delay_mainline.unwrap_or(0.0);
        self.delay_ramp[k] += m.avg_delay_ramp.unwrap_or(0.0);
        self.speed_main[k] += m.avg_speed_mainline.unwrap_or(0.0);
        self.variance[k] += m.mainline_speed_variance;
        self.collisions[k] += m.collision_count;
        self.conflicts[k] += m.conflict_count;
    }

    fn into_cell(
        self,
        mainline_flow: f64,
        ramp_flow: f64,
        seeds: Vec<u64>,
        runs: Vec<Metrics>,
    ) -> GridCell {
        let mean = |sum: f64, k: usize| sum / self.n[k].max(1) as f64;
        let delay_mainline_nc = mean(self.delay_main[0], 0);
        let delay_mainline_pc = mean(self.delay_main[1], 1);
        let delay_ramp_nc = mean(self.delay_ramp[0], 0);
        let delay_ramp_pc = mean(self.delay_ramp[1], 1);
        GridCell {
            mainline_flow,
            ramp_flow,
            seeds,
            delay_mainline_nc,
            delay_mainline_pc,
            improvement_mainline: improvement_rate(delay_mainline_nc, delay_mainline_pc).ok(),
            delay_ramp_nc,
            delay_ramp_pc,
            improvement_ramp: improvement_rate(delay_ramp_nc, delay_ramp_pc).ok(),
            speed_mainline_nc: mean(self.speed_main[0], 0),
            speed_mainline_pc: mean(self.speed_main[1], 1),
            speed_variance_nc: mean(self.variance[0], 0),
            speed_variance_pc: mean(self.variance[1], 1),
            collisions_nc: self.collisions[0],
            collisions_pc: self.collisions[1],
            conflicts_nc: self.conflicts[0],
            conflicts_pc: self.conflicts[1],
            runs,
        }
    }
}

/// Plain-text table mirroring the mainline/ramp delay comparison.
pub fn format_table(report: &GridReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>9} {:>7} | {:>10} {:>10} {:>8} | {:>10} {:>10} {:>8}\n",
        "mainline", "ramp", "d_nc main", "d_pc main", "impr %", "d_nc ramp", "d_pc ramp", "impr %"
    ));
    out.push_str(&"-".repeat(86));
    out.push('\n');
    for c in &report.cells {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:8.2}"),
            None => format!("{:>8}", "-"),
        };
        out.push_str(&format!(
            "{:>9.0} {:>7.0} | {:>10.3} {:>10.3} {} | {:>10.3} {:>10.3} {}\n",
            c.mainline_flow,
            c.ramp_flow,
            c.delay_mainline_nc,
            c.delay_mainline_pc,
            fmt(c.improvement_mainline),
            c.delay_ramp_nc,
            c.delay_ramp_pc,
            fmt(c.improvement_ramp),
        ));
    }
    out
}
