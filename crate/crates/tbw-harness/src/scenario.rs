//! Scenario files: stimulus, fault plans, parameter overrides and the
//! pass/fail thresholds a run is judged against. Everything a run needs is
//! in the file plus the seed, so replays are bit-identical.

use serde::{Deserialize, Serialize};
use std::path::Path;
use tbw_core::amr::BridgeParams;
use tbw_core::plant::PlantConfig;
use tbw_core::time::SimTime;
use tbw_core::tps::TpsConfig;
use tbw_core::tva::TvaConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

/// Which nodes the run assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assembly {
    /// Sensor node, bus, actuator node, plant and engine.
    FullChain,
    /// Actuator and plant only; setpoints arrive as rest-bus frames.
    TvaRestBus,
    /// Sensor node only, in open-loop measurement mode.
    TpsOpenLoop,
}

/// Which metric set and assertions apply to the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Endurance,
    OpenLoopSweep,
    StepRamp,
    FullChain,
    FaultMatrix,
    None,
}

/// Input signal. For the full chain it drives the cable pulley, for the
/// rest-bus assembly it is the transmitted setpoint, always in percent of
/// travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stimulus {
    /// Uniformly random setpoints at a fixed rate.
    RandomSetpoints {
        rate_per_min: f64,
        #[serde(default = "default_start_s")]
        start_s: f64,
    },
    /// Step-wise sweep over the full pulley range.
    Sweep {
        step_deg: f64,
        dwell_s: f64,
        #[serde(default = "default_start_s")]
        start_s: f64,
    },
    /// Piecewise-constant levels: `(time_s, percent)`.
    Pulse { levels: Vec<(f64, f64)> },
    /// Piecewise-linear segments: `(t0_s, t1_s, from_pct, to_pct)`; the
    /// value holds between segments.
    Ramp { segments: Vec<(f64, f64, f64, f64)> },
}

fn default_start_s() -> f64 {
    1.0
}

/// Every fault hook the harness can drive, across bus, plant, Hall sensor
/// and the measuring bridges of the position sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Drop,
    CorruptPayload,
    FreezeCounter,
    KillNodeTps,
    KillNodeTva,
    BeltBreak,
    MotorStall,
    DriverDead,
    HallShortSupply,
    HallShortGround,
    HallOpen,
    BridgeDiffShortGround,
    BridgeDiffShortSupply,
    BridgeDiffOpen,
    BridgeSeShortGround,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub kind: FaultKind,
    pub start_s: f64,
    pub end_s: f64,
}

impl FaultPlan {
    pub fn window(&self) -> (SimTime, SimTime) {
        (
            SimTime::from_secs_f64(self.start_s),
            SimTime::from_secs_f64(self.end_s),
        )
    }
}

/// Thresholds the report asserts; absent fields are not checked.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Assertions {
    pub settling_time_ms: Option<f64>,
    pub overshoot_pct: Option<f64>,
    pub steady_error_pct: Option<f64>,
    pub ramp_lag_ms: Option<f64>,
    pub dead_time_ms: Option<f64>,
    pub max_deviation_pct: Option<f64>,
    pub per_setpoint_error_pct: Option<f64>,
    pub false_fault_count: Option<u32>,
    pub overall_error_pct: Option<f64>,
    pub min_accuracy_low_mid_pct: Option<f64>,
    pub min_accuracy_high_pct: Option<f64>,
    pub zero_overload_step_loss: Option<bool>,
    pub fault_detection_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusOptions {
    pub latency_us: u64,
}

impl Default for BusOptions {
    fn default() -> Self {
        BusOptions { latency_us: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceOptions {
    /// Log every 100 us plant integration step (large traces).
    pub plant_rows: bool,
}

/// Parameters of the fault matrix expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixOptions {
    pub operating_points_pct: Vec<f64>,
    /// Setpoint step commanded at injection so drivetrain faults become
    /// observable through the deviation rule.
    pub step_offset_pct: f64,
    pub inject_at_s: f64,
    pub settle_s: f64,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions {
            operating_points_pct: vec![10.0, 50.0, 90.0],
            step_offset_pct: 40.0,
            inject_at_s: 3.0,
            settle_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_s: f64,
    /// Alternative duration selected by the runner's full-duration switch.
    #[serde(default)]
    pub full_duration_s: Option<f64>,
    pub assembly: Assembly,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    /// Engine ignition at scenario start; safety latches can cut it later.
    #[serde(default)]
    pub ignition: bool,
    pub stimulus: Stimulus,
    #[serde(default)]
    pub faults: Vec<FaultPlan>,
    #[serde(default)]
    pub assertions: Assertions,
    #[serde(default)]
    pub bus: BusOptions,
    #[serde(default)]
    pub trace: TraceOptions,
    #[serde(default)]
    pub matrix: MatrixOptions,
    #[serde(default)]
    pub tps: TpsConfig,
    #[serde(default)]
    pub tva: TvaConfig,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default = "BridgeParams::differential_nominal")]
    pub amr_differential: BridgeParams,
    #[serde(default = "BridgeParams::single_ended_nominal")]
    pub amr_single_ended: BridgeParams,
}

fn default_profile() -> Profile {
    Profile::None
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_s <= 0.0 {
            return Err(ScenarioError::Invalid("duration_s must be positive".into()));
        }
        for f in &self.faults {
            if f.end_s < f.start_s {
                return Err(ScenarioError::Invalid(format!(
                    "fault {:?} window ends before it starts",
                    f.kind
                )));
            }
        }
        if let Stimulus::Sweep { step_deg, dwell_s, .. } = self.stimulus {
            if step_deg <= 0.0 || dwell_s <= 0.0 {
                return Err(ScenarioError::Invalid(
                    "sweep step and dwell must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}
