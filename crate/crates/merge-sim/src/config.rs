//! Scenario configuration: defaults, JSON loading and validation.

use serde::{Deserialize, Serialize};

use crate::baseline::LaneChangeParams;
use crate::controller::ControllerConfig;
use crate::model::{ClassCatalog, RoadLayout};
use crate::safety::SafetyParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uncontrolled,
    Preemptive,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Uncontrolled => "uncontrolled",
            Strategy::Preemptive => "preemptive",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uncontrolled" => Ok(Strategy::Uncontrolled),
            "preemptive" => Ok(Strategy::Preemptive),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Bounded trajectory-noise injection for plan-following vehicles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorInjection {
    pub enabled: bool,
    /// Fresh per-step position noise bound, m.
    pub pos_bound: f64,
    /// Clamp on the accumulated tracking offset, m.
    pub trk_bound: f64,
}

impl Default for ErrorInjection {
    fn default() -> Self {
        ErrorInjection {
            enabled: false,
            pos_bound: 0.02,
            trk_bound: 0.6,
        }
    }
}

/// Positioning/tracking error budget behind the safe-spacing derivation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyBudget {
    pub l_pos: f64,
    pub l_trk: f64,
}

impl Default for SafetyBudget {
    fn default() -> Self {
        SafetyBudget {
            l_pos: 0.02,
            l_trk: 0.6,
        }
    }
}

/// Full description of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Mainline demand per lane, veh/h.
    pub mainline_flow: f64,
    /// Ramp demand, veh/h.
    pub ramp_flow: f64,
    /// Simulated time, s.
    pub duration: f64,
    /// Fixed step, s.
    pub dt: f64,
    pub seed: u64,
    pub strategy: Strategy,
    /// Truck share on the outer lane and the ramp (the inner lane only
    /// receives cars).
    pub cat_share: f64,
    /// Ramp entry speed, m/s.
    pub ramp_entry_speed: f64,
    pub error_injection: ErrorInjection,
    pub layout: RoadLayout,
    pub safety: SafetyBudget,
    pub classes: ClassCatalog,
    pub lane_change: LaneChangeParams,
    pub controller: ControllerConfig,
    /// Car-following minimum gap, m.
    pub idm_s0: f64,
    /// Car-following time headway, s.
    pub idm_headway: f64,
    /// Spawn headway floor, s.
    pub min_headway: f64,
    /// Settling time excluded from metrics, s.
    pub warmup: f64,
    /// Keep per-step trajectory records.
    pub record_trace: bool,
    /// Reporting interval for mean-speed series, s.
    pub speed_interval: f64,
    /// Minimum time between discretionary lane changes of one vehicle, s.
    pub lc_cooldown: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mainline_flow: 1000.0,
            ramp_flow: 300.0,
            duration: 3600.0,
            dt: 0.1,
            seed: 1,
            strategy: Strategy::Uncontrolled,
            cat_share: 0.2,
            ramp_entry_speed: 60.0 / 3.6,
            error_injection: ErrorInjection::default(),
            layout: RoadLayout::default(),
            safety: SafetyBudget::default(),
            classes: ClassCatalog::default(),
            lane_change: LaneChangeParams::default(),
            controller: ControllerConfig::default(),
            idm_s0: 2.0,
            idm_headway: 1.0,
            min_headway: 1.0,
            warmup: 300.0,
            record_trace: false,
            speed_interval: 60.0,
            lc_cooldown: 5.0,
        }
    }
}

impl ScenarioConfig {
    pub fn safety_params(&self) -> Result<SafetyParams, ConfigError> {
        SafetyParams::new(self.safety.l_pos, self.safety.l_trk)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        let finite = [
            self.mainline_flow,
            self.ramp_flow,
            self.duration,
            self.dt,
            self.cat_share,
            self.ramp_entry_speed,
            self.warmup,
            self.speed_interval,
            self.min_headway,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("numeric fields must be finite");
        }
        if self.dt <= 0.0 || self.dt > 1.0 {
            return fail("dt must lie in (0, 1] s");
        }
        if self.duration < 0.0 {
            return fail("duration must be non-negative");
        }
        if self.mainline_flow < 0.0 || self.ramp_flow < 0.0 {
            return fail("flows must be non-negative");
        }
        for flow in [self.mainline_flow, self.ramp_flow] {
            if flow > 0.0 && 3600.0 / flow <= self.min_headway {
                return fail("flow too high for the minimum spawn headway");
            }
        }
        if !(0.0..=1.0).contains(&self.cat_share) {
            return fail("cat_share must lie in [0, 1]");
        }
        if self.ramp_entry_speed <= 0.0 {
            return fail("ramp entry speed must be positive");
        }
        if !(self.layout.v_lim_min > 0.0 && self.layout.v_lim_min < self.layout.v_lim_max) {
            return fail("speed limits must satisfy 0 < v_lim_min < v_lim_max");
        }
        if self.layout.accel_lane_len <= 0.0
            || self.layout.upstream_len <= 0.0
            || self.layout.downstream_len <= 0.0
            || self.layout.ramp_len <= 0.0
        {
            return fail("layout lengths must be positive");
        }
        if self.safety.l_pos < 0.0 || self.safety.l_trk < 0.0 {
            return fail("error budget terms must be non-negative");
        }
        if self.error_injection.pos_bound < 0.0 || self.error_injection.trk_bound < 0.0 {
            return fail("injection bounds must be non-negative");
        }
        if self.speed_interval <= 0.0 {
            return fail("speed interval must be positive");
        }
        if self.warmup < 0.0 {
            return fail("warmup must be non-negative");
        }
        if self.idm_s0 <= 0.0 || self.idm_headway <= 0.0 {
            return fail("car-following parameters must be positive");
        }
        let class_ok = |p: &crate::model::VehicleClassParams| {
            p.length > 0.0
                && p.accel_max > 0.0
                && p.decel_max > 0.0
                && p.accel_min >= 0.0
                && p.accel_min <= p.accel_max
        };
        if !class_ok(&self.classes.cav) || !class_ok(&self.classes.cat) {
            return fail("class parameters out of range");
        }
        Ok(())
    }
}
