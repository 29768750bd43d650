//! Electromechanical ground truth: stepper motor with microstepping and a
//! torque-speed limit, toothed-belt transmission, throttle valve with hard
//! stops, Hall feedback sensor with an error model, and the engine whose
//! intake suction disturbs the valve.
//!
//! There is no return spring: the valve holds position when de-energized,
//! apart from suction creep above the stiction threshold. The position
//! sensor sits on the valve shaft, so a broken belt leaves the measurement
//! truthful while the motor spins free.

use crate::angle::{AngleDeg, VALVE_TRAVEL_DEG};
use crate::percent::PercentPosition;
use crate::rng::RngStream;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepperConfig {
    pub full_step_deg: f64,
    pub microstep_divisor: u32,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            full_step_deg: 1.8,
            microstep_divisor: 256,
        }
    }
}

impl StepperConfig {
    pub fn microstep_deg(&self) -> f64 {
        self.full_step_deg / self.microstep_divisor as f64
    }
}

/// Available torque over motor speed: flat up to the measured limit, then a
/// configurable linear falloff to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TorqueCurve {
    pub flat_torque_ncm: f64,
    pub flat_limit_dps: f64,
    /// Speed multiple of the flat limit at which available torque reaches zero.
    pub zero_at_multiple: f64,
}

impl Default for TorqueCurve {
    fn default() -> Self {
        TorqueCurve {
            flat_torque_ncm: 12.0,
            flat_limit_dps: 360.0,
            zero_at_multiple: 4.0,
        }
    }
}

impl TorqueCurve {
    pub fn available(&self, motor_speed_dps: f64) -> f64 {
        let speed = motor_speed_dps.abs();
        if speed <= self.flat_limit_dps {
            return self.flat_torque_ncm;
        }
        let zero_at = self.flat_limit_dps * self.zero_at_multiple;
        if speed >= zero_at {
            return 0.0;
        }
        self.flat_torque_ncm * (zero_at - speed) / (zero_at - self.flat_limit_dps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HallConfig {
    /// Smallest resolvable angle step.
    pub resolution_deg: f64,
    /// Sensor travel range; larger than the valve travel.
    pub travel_deg: f64,
    /// Linearity deviation limit as percent of travel.
    pub linearity_limit_pct: f64,
    /// Slow drift as percent of travel per simulated hour; default off.
    pub drift_pct_per_hour: f64,
    /// Fixed measurement bias, e.g. accumulated drift present at power-on.
    pub bias_deg: f64,
    /// Output voltage at zero degrees.
    pub volts_min: f64,
    /// Output voltage at full travel.
    pub volts_max: f64,
    /// Signal below this reads as shorted to ground or open.
    pub valid_min_v: f64,
    /// Signal above this reads as shorted to the supply.
    pub valid_max_v: f64,
    pub supply_v: f64,
    /// Level a broken signal line floats to.
    pub open_float_v: f64,
}

impl Default for HallConfig {
    fn default() -> Self {
        HallConfig {
            resolution_deg: 0.022,
            travel_deg: 90.0,
            linearity_limit_pct: 0.25,
            drift_pct_per_hour: 0.0,
            bias_deg: 0.0,
            volts_min: 0.5,
            volts_max: 4.5,
            valid_min_v: 0.25,
            valid_max_v: 4.75,
            supply_v: 5.0,
            open_float_v: 0.1,
        }
    }
}

impl HallConfig {
    /// Maximum linearity deviation in degrees.
    pub fn linearity_limit_deg(&self) -> f64 {
        self.linearity_limit_pct / 100.0 * self.travel_deg
    }
}

/// One realization of the sensor's linearity deviation: a smooth low-order
/// profile pinned to zero at both travel ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallProfile {
    pub amplitude_deg: f64,
    pub cycles: u32,
}

impl HallProfile {
    pub fn ideal() -> Self {
        HallProfile {
            amplitude_deg: 0.0,
            cycles: 1,
        }
    }

    /// Draws a profile within the linearity limit.
    pub fn draw(cfg: &HallConfig, rng: &mut RngStream) -> Self {
        let limit = cfg.linearity_limit_deg();
        let magnitude = rng.uniform(0.4 * limit, limit);
        let sign = if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let cycles = rng.uniform_u64(1, 3) as u32;
        HallProfile {
            amplitude_deg: sign * magnitude,
            cycles,
        }
    }

    fn error_deg(&self, angle_deg: f64, travel_deg: f64) -> f64 {
        self.amplitude_deg
            * (std::f64::consts::PI * self.cycles as f64 * angle_deg / travel_deg).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallFault {
    ShortToSupply,
    ShortToGround,
    OpenCircuit,
}

/// Hall sensor instance: quantizes to the resolution, applies the linearity
/// profile and optional drift, and produces the analog output voltage.
#[derive(Debug, Clone)]
pub struct HallSensor {
    pub cfg: HallConfig,
    pub profile: HallProfile,
    pub fault: Option<HallFault>,
}

impl HallSensor {
    pub fn new(cfg: HallConfig, profile: HallProfile) -> Self {
        HallSensor {
            cfg,
            profile,
            fault: None,
        }
    }

    fn drift_deg(&self, now: SimTime) -> f64 {
        self.cfg.drift_pct_per_hour / 100.0 * self.cfg.travel_deg * now.as_secs_f64() / 3600.0
    }

    /// Measured shaft angle including quantization, linearity, bias and drift.
    pub fn measured_angle(&self, shaft: AngleDeg, now: SimTime) -> AngleDeg {
        let with_error = shaft.deg()
            + self.profile.error_deg(shaft.deg(), self.cfg.travel_deg)
            + self.cfg.bias_deg
            + self.drift_deg(now);
        let quantized = (with_error / self.cfg.resolution_deg).floor() * self.cfg.resolution_deg;
        AngleDeg::new(quantized)
    }

    /// Analog signal line, or the rail/float level when a fault is injected.
    pub fn output_volts(&self, shaft: AngleDeg, now: SimTime) -> f64 {
        match self.fault {
            Some(HallFault::ShortToSupply) => self.cfg.supply_v,
            Some(HallFault::ShortToGround) => 0.0,
            Some(HallFault::OpenCircuit) => self.cfg.open_float_v,
            None => {
                let angle = self.measured_angle(shaft, now).deg();
                let span = self.cfg.volts_max - self.cfg.volts_min;
                (self.cfg.volts_min + angle / self.cfg.travel_deg * span)
                    .clamp(0.0, self.cfg.supply_v)
            }
        }
    }

    /// Valve position in percent of travel, before rounding to tenths.
    pub fn percent_raw(&self, shaft: AngleDeg, now: SimTime) -> f64 {
        self.measured_angle(shaft, now).deg() / VALVE_TRAVEL_DEG * 100.0
    }

    /// Measured position with one decimal place, as the firmware carries it.
    pub fn measure(&self, shaft: AngleDeg, now: SimTime) -> PercentPosition {
        PercentPosition::from_percent_clamped(self.percent_raw(shaft, now))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub idle_rpm: f64,
    pub max_rpm: f64,
    /// First-order lag from valve position to speed.
    pub tau_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            idle_rpm: 2000.0,
            max_rpm: 9000.0,
            tau_s: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuctionConfig {
    /// Torque cap; stays below the motor's margin so suction can never
    /// falsify a held position.
    pub cap_ncm: f64,
    pub ref_rpm: f64,
}

impl Default for SuctionConfig {
    fn default() -> Self {
        SuctionConfig {
            cap_ncm: 4.0,
            ref_rpm: 9000.0,
        }
    }
}

/// Engine-speed-dependent intake suction torque on the valve: quadratic in
/// speed and capped.
pub fn suction_disturbance(rpm: f64, cfg: &SuctionConfig) -> f64 {
    debug_assert!(rpm >= 0.0);
    let x = (rpm / cfg.ref_rpm).min(1.0);
    cfg.cap_ncm * x * x
}

/// Motor angle through the belt transmission.
pub fn transmission(motor_angle: AngleDeg, ratio: f64) -> AngleDeg {
    AngleDeg::new(motor_angle.deg() / ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Open,
    Close,
}

/// Drive interface as the stepper driver sees it: step frequency, rotation
/// direction and the enable line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveCommand {
    pub step_rate_microsteps_per_s: f64,
    pub direction: Direction,
    pub enabled: bool,
}

impl DriveCommand {
    pub fn idle() -> Self {
        DriveCommand {
            step_rate_microsteps_per_s: 0.0,
            direction: Direction::Open,
            enabled: false,
        }
    }

    /// Builds a command from a signed microstep rate.
    pub fn from_signed_rate(rate: f64, enabled: bool) -> Self {
        DriveCommand {
            step_rate_microsteps_per_s: rate.abs(),
            direction: if rate >= 0.0 {
                Direction::Open
            } else {
                Direction::Close
            },
            enabled,
        }
    }
}

/// Plant-side fault hooks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantFault {
    BeltBreak,
    MotorStall,
    DriverDead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepLossCounters {
    /// Steps lost because load torque exceeded the curve.
    pub overload_microsteps: u64,
    /// Steps slipped against a hard stop.
    pub stall_microsteps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub stepper: StepperConfig,
    pub torque: TorqueCurve,
    pub hall: HallConfig,
    pub engine: EngineConfig,
    pub suction: SuctionConfig,
    pub transmission_ratio: f64,
    pub valve_travel_deg: f64,
    /// Static friction load on the drivetrain while moving.
    pub friction_ncm: f64,
    /// Holding threshold of the de-energized drivetrain.
    pub stiction_ncm: f64,
    /// Creep speed per N cm of suction above stiction when unheld.
    pub creep_dps_per_ncm: f64,
    pub initial_valve_deg: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            stepper: StepperConfig::default(),
            torque: TorqueCurve::default(),
            hall: HallConfig::default(),
            engine: EngineConfig::default(),
            suction: SuctionConfig::default(),
            transmission_ratio: 1.5,
            valve_travel_deg: VALVE_TRAVEL_DEG,
            friction_ncm: 1.0,
            stiction_ncm: 0.5,
            creep_dps_per_ncm: 0.5,
            initial_valve_deg: 2.0,
        }
    }
}

impl PlantConfig {
    /// Valve angle advance of one microstep through the transmission.
    pub fn valve_deg_per_microstep(&self) -> f64 {
        self.stepper.microstep_deg() / self.transmission_ratio
    }

    /// Microstep rate corresponding to a valve speed in degrees per second.
    pub fn microstep_rate_for_valve_dps(&self, valve_dps: f64) -> f64 {
        valve_dps / self.valve_deg_per_microstep()
    }
}

/// The integrated plant, advanced by fixed 100 us steps in the event loop.
#[derive(Debug, Clone)]
pub struct ValvePlant {
    pub cfg: PlantConfig,
    pub hall: HallSensor,
    command: DriveCommand,
    commanded_microsteps: i64,
    executed_microsteps: i64,
    step_accum: f64,
    shaft_deg: f64,
    engine_rpm: f64,
    belt_broken: bool,
    motor_stalled: bool,
    driver_dead: bool,
    step_loss: StepLossCounters,
    stall_flag: bool,
}

impl ValvePlant {
    pub fn new(cfg: PlantConfig, hall_profile: HallProfile) -> Self {
        let hall = HallSensor::new(cfg.hall, hall_profile);
        let shaft_deg = cfg.initial_valve_deg.clamp(0.0, cfg.valve_travel_deg);
        ValvePlant {
            cfg,
            hall,
            command: DriveCommand::idle(),
            commanded_microsteps: 0,
            executed_microsteps: 0,
            step_accum: 0.0,
            shaft_deg,
            engine_rpm: 0.0,
            belt_broken: false,
            motor_stalled: false,
            driver_dead: false,
            step_loss: StepLossCounters::default(),
            stall_flag: false,
        }
    }

    pub fn set_command(&mut self, command: DriveCommand) {
        self.command = command;
    }

    pub fn command(&self) -> DriveCommand {
        self.command
    }

    pub fn set_fault(&mut self, fault: PlantFault, active: bool) {
        match fault {
            PlantFault::BeltBreak => self.belt_broken = active,
            PlantFault::MotorStall => self.motor_stalled = active,
            PlantFault::DriverDead => self.driver_dead = active,
        }
    }

    /// Advances the plant by `dt_us`. The drive command executes unless load
    /// torque exceeds the curve; step loss freezes the executed count while
    /// the commanded count keeps advancing.
    pub fn step(&mut self, dt_us: u64, ignition_on: bool) {
        let dt = dt_us as f64 / 1e6;
        self.stall_flag = false;

        // Engine speed: first-order lag toward the valve-determined target.
        let target_rpm = if ignition_on {
            self.cfg.engine.idle_rpm
                + (self.cfg.engine.max_rpm - self.cfg.engine.idle_rpm) * self.valve_percent() / 100.0
        } else {
            0.0
        };
        self.engine_rpm += (target_rpm - self.engine_rpm) * (dt / self.cfg.engine.tau_s).min(1.0);
        let dvac = suction_disturbance(self.engine_rpm, &self.cfg.suction);

        let driving = self.command.enabled && !self.driver_dead;
        if driving && self.command.step_rate_microsteps_per_s > 0.0 {
            self.step_accum += self.command.step_rate_microsteps_per_s * dt;
            let n = self.step_accum.floor() as i64;
            self.step_accum -= n as f64;
            if n > 0 {
                let sign = match self.command.direction {
                    Direction::Open => 1i64,
                    Direction::Close => -1i64,
                };
                self.commanded_microsteps += sign * n;
                let motor_speed_dps =
                    self.command.step_rate_microsteps_per_s * self.cfg.stepper.microstep_deg();
                let load_ncm = self.cfg.friction_ncm + dvac;
                if self.motor_stalled {
                    // A dead motor executes nothing.
                } else if load_ncm > self.cfg.torque.available(motor_speed_dps) {
                    self.step_loss.overload_microsteps += n as u64;
                } else {
                    self.executed_microsteps += sign * n;
                    if !self.belt_broken {
                        let delta = sign as f64 * n as f64 * self.cfg.valve_deg_per_microstep();
                        let unclamped = self.shaft_deg + delta;
                        let clamped = unclamped.clamp(0.0, self.cfg.valve_travel_deg);
                        if (unclamped - clamped).abs() > 1e-12 {
                            let slipped =
                                (unclamped - clamped).abs() / self.cfg.valve_deg_per_microstep();
                            self.step_loss.stall_microsteps += slipped.round() as u64;
                            self.stall_flag = true;
                        }
                        self.shaft_deg = clamped;
                    }
                }
            }
        }

        // Suction creep: only when nothing holds the valve. A broken belt
        // freezes the shaft by definition of that fault hook.
        let held = self.command.enabled && !self.driver_dead && !self.motor_stalled;
        if !self.belt_broken && !held && dvac > self.cfg.stiction_ncm {
            let creep = self.cfg.creep_dps_per_ncm * (dvac - self.cfg.stiction_ncm) * dt;
            self.shaft_deg = (self.shaft_deg - creep).clamp(0.0, self.cfg.valve_travel_deg);
        }
    }

    pub fn motor_angle(&self) -> AngleDeg {
        AngleDeg::new(self.executed_microsteps as f64 * self.cfg.stepper.microstep_deg())
    }

    pub fn valve_angle(&self) -> AngleDeg {
        AngleDeg::new(self.shaft_deg)
    }

    pub fn valve_percent(&self) -> f64 {
        self.shaft_deg / self.cfg.valve_travel_deg * 100.0
    }

    pub fn engine_rpm(&self) -> f64 {
        self.engine_rpm
    }

    pub fn suction_ncm(&self) -> f64 {
        suction_disturbance(self.engine_rpm, &self.cfg.suction)
    }

    pub fn step_loss(&self) -> StepLossCounters {
        self.step_loss
    }

    pub fn stalled_this_step(&self) -> bool {
        self.stall_flag
    }

    pub fn commanded_microsteps(&self) -> i64 {
        self.commanded_microsteps
    }

    pub fn executed_microsteps(&self) -> i64 {
        self.executed_microsteps
    }

    pub fn hall_volts(&self, now: SimTime) -> f64 {
        self.hall.output_volts(self.valve_angle(), now)
    }

    /// Convenience sampling path used by tests; the firmware reads the
    /// analog line through its own converter instead.
    pub fn hall_measure(&self, now: SimTime, _rng: &mut RngStream) -> PercentPosition {
        self.hall.measure(self.valve_angle(), now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant_with(cfg: PlantConfig) -> ValvePlant {
        ValvePlant::new(cfg, HallProfile::ideal())
    }

    fn run(plant: &mut ValvePlant, ms: u64, ignition: bool) {
        for _ in 0..ms * 10 {
            plant.step(100, ignition);
        }
    }

    #[test]
    fn rated_speed_with_rated_load_is_step_loss_free() {
        let mut cfg = PlantConfig::default();
        cfg.friction_ncm = 5.0;
        cfg.initial_valve_deg = 0.0;
        let rate = cfg.microstep_rate_for_valve_dps(345.0);
        let mut plant = plant_with(cfg);
        plant.set_command(DriveCommand {
            step_rate_microsteps_per_s: rate,
            direction: Direction::Open,
            enabled: true,
        });
        run(&mut plant, 100, false);
        assert_eq!(plant.step_loss().overload_microsteps, 0);
        assert_eq!(plant.commanded_microsteps(), plant.executed_microsteps());
        assert!((plant.valve_angle().deg() - 34.5).abs() < 0.01);
    }

    #[test]
    fn overload_freezes_executed_count() {
        let mut cfg = PlantConfig::default();
        cfg.friction_ncm = 13.0;
        cfg.initial_valve_deg = 10.0;
        let rate = cfg.microstep_rate_for_valve_dps(100.0);
        let mut plant = plant_with(cfg);
        plant.set_command(DriveCommand {
            step_rate_microsteps_per_s: rate,
            direction: Direction::Open,
            enabled: true,
        });
        run(&mut plant, 50, false);
        assert!(plant.step_loss().overload_microsteps > 0);
        assert_eq!(plant.executed_microsteps(), 0);
        assert!(plant.commanded_microsteps() > 0);
        assert!((plant.valve_angle().deg() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn disabled_driver_means_no_motion() {
        let mut plant = plant_with(PlantConfig::default());
        plant.set_command(DriveCommand {
            step_rate_microsteps_per_s: 10_000.0,
            direction: Direction::Open,
            enabled: false,
        });
        run(&mut plant, 50, false);
        assert_eq!(plant.executed_microsteps(), 0);
        assert_eq!(plant.commanded_microsteps(), 0);
    }

    #[test]
    fn transmission_ratio_examples() {
        assert!((transmission(AngleDeg::new(103.5), 1.5).deg() - 69.0).abs() < 1e-12);
        assert_eq!(transmission(AngleDeg::ZERO, 1.5).deg(), 0.0);
    }

    #[test]
    fn belt_break_freezes_shaft_while_motor_moves() {
        let mut cfg = PlantConfig::default();
        cfg.initial_valve_deg = 30.0;
        let rate = cfg.microstep_rate_for_valve_dps(100.0);
        let mut plant = plant_with(cfg);
        plant.set_fault(PlantFault::BeltBreak, true);
        plant.set_command(DriveCommand {
            step_rate_microsteps_per_s: rate,
            direction: Direction::Open,
            enabled: true,
        });
        run(&mut plant, 100, false);
        assert!((plant.valve_angle().deg() - 30.0).abs() < 1e-9);
        assert!(plant.motor_angle().deg() > 5.0);
    }

    #[test]
    fn hard_stop_causes_stall_step_loss() {
        let mut cfg = PlantConfig::default();
        cfg.initial_valve_deg = 1.0;
        let rate = cfg.microstep_rate_for_valve_dps(150.0);
        let mut plant = plant_with(cfg);
        plant.set_command(DriveCommand {
            step_rate_microsteps_per_s: rate,
            direction: Direction::Close,
            enabled: true,
        });
        run(&mut plant, 50, false);
        assert_eq!(plant.valve_angle().deg(), 0.0);
        assert!(plant.step_loss().stall_microsteps > 0);
    }

    #[test]
    fn hall_reads_zero_at_zero() {
        let mut cfg = PlantConfig::default();
        cfg.initial_valve_deg = 0.0;
        let plant = plant_with(cfg);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(plant.hall_measure(SimTime::ZERO, &mut rng).tenths(), 0);
    }

    /// Monte-Carlo over linearity profiles: the measurement error never
    /// exceeds the derived bound of 0.36% of travel (drift off), checked on
    /// the pre-rounding percent output.
    #[test]
    fn hall_error_bound_holds_over_profiles() {
        let cfg = HallConfig::default();
        let mut rng = RngStream::new(11, crate::rng::streams::HALL_PROFILE);
        for _ in 0..300 {
            let sensor = HallSensor::new(cfg, HallProfile::draw(&cfg, &mut rng));
            let mut shaft = 0.0;
            while shaft <= VALVE_TRAVEL_DEG {
                let truth = shaft / VALVE_TRAVEL_DEG * 100.0;
                let measured = sensor.percent_raw(AngleDeg::new(shaft), SimTime::ZERO);
                let err = (measured - truth).abs();
                assert!(err <= 0.36, "error {err:.4}% at {shaft} deg");
                shaft += 1.1;
            }
            // Mid-travel example: 34.5 deg reads 50% within the bound.
            let mid = sensor.percent_raw(AngleDeg::new(34.5), SimTime::ZERO);
            assert!((mid - 50.0).abs() <= 0.36);
        }
    }

    #[test]
    fn hall_rail_faults_leave_valid_window() {
        let cfg = HallConfig::default();
        let mut sensor = HallSensor::new(cfg, HallProfile::ideal());
        sensor.fault = Some(HallFault::ShortToSupply);
        let v = sensor.output_volts(AngleDeg::new(30.0), SimTime::ZERO);
        assert!(v > cfg.valid_max_v);
        sensor.fault = Some(HallFault::ShortToGround);
        assert!(sensor.output_volts(AngleDeg::new(30.0), SimTime::ZERO) < cfg.valid_min_v);
        sensor.fault = Some(HallFault::OpenCircuit);
        assert!(sensor.output_volts(AngleDeg::new(30.0), SimTime::ZERO) < cfg.valid_min_v);
    }

    #[test]
    fn suction_is_zero_capped_and_monotone() {
        let cfg = SuctionConfig::default();
        assert_eq!(suction_disturbance(0.0, &cfg), 0.0);
        assert!(suction_disturbance(20_000.0, &cfg) <= cfg.cap_ncm);
        let mid = suction_disturbance(4_500.0, &cfg);
        assert!(mid > 0.0 && mid < cfg.cap_ncm);
        let mut last = 0.0;
        for rpm in (0..=9000).step_by(500) {
            let d = suction_disturbance(rpm as f64, &cfg);
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn engine_settles_at_idle_with_closed_valve() {
        let mut cfg = PlantConfig::default();
        cfg.initial_valve_deg = 0.0;
        let mut plant = plant_with(cfg);
        run(&mut plant, 3000, true);
        assert!((plant.engine_rpm() - 2000.0).abs() < 1.0);
    }

    #[test]
    fn ignition_cut_decays_to_standstill() {
        let mut plant = plant_with(PlantConfig::default());
        run(&mut plant, 2000, true);
        assert!(plant.engine_rpm() > 1000.0);
        run(&mut plant, 4000, false);
        assert!(plant.engine_rpm() < 10.0);
    }

    /// First-order response: opening the valve raises speed with lag and
    /// without overshoot beyond the target.
    #[test]
    fn engine_ramp_has_no_overshoot() {
        let mut cfg = PlantConfig::default();
        cfg.initial_valve_deg = cfg.valve_travel_deg;
        let mut plant = plant_with(cfg);
        // Energized standstill holds the valve open against suction.
        plant.set_command(DriveCommand {
            step_rate_microsteps_per_s: 0.0,
            direction: Direction::Open,
            enabled: true,
        });
        let mut last = plant.engine_rpm();
        for _ in 0..40_000 {
            plant.step(100, true);
            let rpm = plant.engine_rpm();
            assert!(rpm >= last - 1e-9, "speed fell during a pure ramp");
            assert!(rpm <= 9000.0 + 1e-9);
            last = rpm;
        }
        assert!((last - 9000.0).abs() < 5.0);
    }

    #[test]
    fn suction_creep_only_when_unheld() {
        let mut cfg = PlantConfig::default();
        cfg.initial_valve_deg = 40.0;
        let mut plant = plant_with(cfg);
        plant.engine_rpm = 9000.0;
        // Held: enabled driver, zero rate.
        plant.set_command(DriveCommand {
            step_rate_microsteps_per_s: 0.0,
            direction: Direction::Open,
            enabled: true,
        });
        run(&mut plant, 200, true);
        assert!((plant.valve_angle().deg() - 40.0).abs() < 0.2);
        // Parked: creep toward closed under full suction.
        plant.set_command(DriveCommand::idle());
        run(&mut plant, 500, true);
        assert!(plant.valve_angle().deg() < 40.0 - 0.2);
    }
}
