//! Scenario execution: assembles the configured nodes, runs the
//! deterministic event loop and records the trace.

use crate::scenario::{Assembly, FaultKind, Scenario, Stimulus};
use crate::trace::{RecordKind, TraceRow};
use tbw_core::adc::{adc_sample, AdcConfig};
use tbw_core::amr::{acquire_bridge, AmrBridge, BridgeFault, BridgeId};
use tbw_core::bus::{
    BusFaultKind, BusFaultPlan, CanBus, FrameFields, NodeId, TransmitOutcome, BusFrame,
    TPS_POSITION_ID, TVA_ERROR_REPORT_ID, TVA_STATUS_ID,
};
use tbw_core::percent::PercentPosition;
use tbw_core::plant::{
    DriveCommand, HallFault, HallProfile, PlantFault, StepLossCounters, ValvePlant,
};
use tbw_core::rng::{streams, RngStream};
use tbw_core::sched::Scheduler;
use tbw_core::time::{SimTime, BUS_PERIOD_US, CONTROL_PERIOD_US, PLANT_STEP_US};
use tbw_core::tps::{CalibrationRecord, TpsAcquisition, TpsFirmware};
use tbw_core::tva::{CalPhase, FailSafeKind, FaultCause, TvaFirmware};

/// Completed run: the full trace plus plant-side summary counters.
#[derive(Debug)]
pub struct SimOutput {
    pub rows: Vec<TraceRow>,
    pub step_loss: StepLossCounters,
    /// Step losses accumulated before end-stop calibration finished;
    /// deliberate stall against the stop is part of that procedure.
    pub step_loss_during_cal: StepLossCounters,
}

/// Resolved stimulus: piecewise-constant points or linear segments.
enum Curve {
    Steps(Vec<(u64, f64)>),
    Segments(Vec<(u64, u64, f64, f64)>),
}

impl Curve {
    fn value_at(&self, t_us: u64) -> f64 {
        match self {
            Curve::Steps(points) => {
                let mut v = 0.0;
                for &(t, pct) in points {
                    if t <= t_us {
                        v = pct;
                    } else {
                        break;
                    }
                }
                v
            }
            Curve::Segments(segs) => {
                if segs.is_empty() {
                    return 0.0;
                }
                let mut v = segs[0].2;
                for &(t0, t1, from, to) in segs {
                    if t_us < t0 {
                        break;
                    }
                    if t_us >= t1 {
                        v = to;
                    } else {
                        let f = (t_us - t0) as f64 / (t1 - t0).max(1) as f64;
                        v = from + (to - from) * f;
                        break;
                    }
                }
                v
            }
        }
    }

    /// Times at which a stim row is logged: every step, or segment edges.
    fn change_points(&self) -> Vec<u64> {
        match self {
            Curve::Steps(points) => points.iter().map(|&(t, _)| t).collect(),
            Curve::Segments(segs) => {
                let mut out = Vec::new();
                for &(t0, t1, _, _) in segs {
                    out.push(t0);
                    out.push(t1);
                }
                out.sort_unstable();
                out.dedup();
                out
            }
        }
    }
}

fn resolve_stimulus(sc: &Scenario) -> Curve {
    match &sc.stimulus {
        Stimulus::Pulse { levels } => Curve::Steps(
            levels
                .iter()
                .map(|&(t_s, pct)| (SimTime::from_secs_f64(t_s).micros(), pct))
                .collect(),
        ),
        Stimulus::Ramp { segments } => Curve::Segments(
            segments
                .iter()
                .map(|&(t0, t1, from, to)| {
                    (
                        SimTime::from_secs_f64(t0).micros(),
                        SimTime::from_secs_f64(t1).micros(),
                        from,
                        to,
                    )
                })
                .collect(),
        ),
        Stimulus::Sweep {
            step_deg,
            dwell_s,
            start_s,
        } => {
            let start = SimTime::from_secs_f64(*start_s).micros();
            let dwell = SimTime::from_secs_f64(*dwell_s).micros();
            let mut points = Vec::new();
            let mut k = 0u64;
            loop {
                let deg = *step_deg * k as f64;
                if deg > tbw_core::angle::TPS_USABLE_RANGE_DEG {
                    break;
                }
                points.push((start + k * dwell, deg / tbw_core::angle::TPS_USABLE_RANGE_DEG * 100.0));
                k += 1;
            }
            Curve::Steps(points)
        }
        Stimulus::RandomSetpoints { rate_per_min, start_s } => {
            let mut rng = RngStream::new(sc.seed, streams::STIMULUS);
            let start = SimTime::from_secs_f64(*start_s).micros();
            let duration = sc.duration().micros();
            let mut points = Vec::new();
            let mut k = 0u64;
            loop {
                // Exact spacing without cumulative drift.
                let t = start + (k as f64 * 60e6 / rate_per_min).round() as u64;
                if t > duration {
                    break;
                }
                points.push((t, rng.uniform_u64(0, 1000) as f64 / 10.0));
                k += 1;
            }
            Curve::Steps(points)
        }
    }
}

#[derive(Clone)]
enum Ev {
    TpsTick,
    TvaControl,
    TvaStatus,
    PlantStep,
    RestBusEmit,
    Deliver {
        frame: BusFrame,
        tps_raw: Option<f64>,
        touched: bool,
    },
    StimPoint,
    FaultEdge { index: usize, on: bool },
}

struct TpsNode {
    fw: TpsFirmware,
    diff: AmrBridge,
    se: AmrBridge,
    adc_diff: AdcConfig,
    adc_se: AdcConfig,
    rng_diff: RngStream,
    rng_se: RngStream,
}

struct TvaNode {
    fw: TvaFirmware,
    rng_adc: RngStream,
}

struct RestBus {
    counter: u8,
    ignition: bool,
}

fn bus_fault_kind(kind: FaultKind) -> Option<BusFaultKind> {
    match kind {
        FaultKind::Drop => Some(BusFaultKind::Drop),
        FaultKind::CorruptPayload => Some(BusFaultKind::CorruptPayload),
        FaultKind::FreezeCounter => Some(BusFaultKind::FreezeCounter),
        FaultKind::KillNodeTps => Some(BusFaultKind::KillNodeTps),
        FaultKind::KillNodeTva => Some(BusFaultKind::KillNodeTva),
        _ => None,
    }
}

struct Rig {
    duration: SimTime,
    assembly: Assembly,
    ignition_cfg: bool,
    plant_rows: bool,
    sched: Scheduler<Ev>,
    bus: CanBus,
    stim: Curve,
    rows: Vec<TraceRow>,
    tps: Option<TpsNode>,
    tva: Option<TvaNode>,
    plant: ValvePlant,
    restbus: Option<RestBus>,
    faults: Vec<crate::scenario::FaultPlan>,
    ignition_was_on: bool,
    cal_done_loss_snapshot: Option<StepLossCounters>,
}

impl Rig {
    fn ignition_on(&self) -> bool {
        if !self.ignition_cfg {
            return false;
        }
        match self.assembly {
            Assembly::FullChain => self
                .tps
                .as_ref()
                .map(|n| n.fw.ignition_enabled())
                .unwrap_or(true),
            Assembly::TvaRestBus => self.restbus.as_ref().map(|r| r.ignition).unwrap_or(true),
            Assembly::TpsOpenLoop => true,
        }
    }

    fn mark(&mut self, now: SimTime, text: String) {
        let mut row = TraceRow::new(now.micros(), RecordKind::Mark);
        row.mark = Some(text);
        self.rows.push(row);
    }

    fn check_ignition_mark(&mut self, now: SimTime) {
        if matches!(self.assembly, Assembly::TpsOpenLoop) {
            return;
        }
        let on = self.ignition_on();
        if self.ignition_was_on && !on {
            self.mark(now, "ignition:off".to_string());
        }
        self.ignition_was_on = on;
    }

    fn log_frame(
        &mut self,
        now: SimTime,
        frame: &BusFrame,
        touched: bool,
        tps_raw: Option<f64>,
    ) {
        let fields = FrameFields::decode(&frame.payload);
        let mut row = TraceRow::new(now.micros(), RecordKind::Frame);
        row.id = Some(frame.id);
        row.pos = Some(fields.position_wire);
        row.counter = Some(fields.counter);
        row.err = Some(fields.error);
        row.fault_active = Some(touched as u8);
        row.tps_pct_raw = tps_raw;
        self.rows.push(row);
    }

    fn transmit(&mut self, frame: BusFrame, now: SimTime, tps_raw: Option<f64>) {
        let touched_window = self.bus.fault_active(now);
        match self.bus.transmit(frame, now) {
            TransmitOutcome::Delivered { at, frame, mangled } => {
                self.sched
                    .schedule(
                        at,
                        Ev::Deliver {
                            frame,
                            tps_raw,
                            touched: mangled || touched_window,
                        },
                    )
                    .expect("delivery is never in the past");
            }
            TransmitOutcome::Consumed => {
                self.log_frame(now, &frame, true, tps_raw);
            }
        }
    }

    fn tps_tick(&mut self, now: SimTime) {
        if !self.bus.node_alive(NodeId::Tps, now) {
            return;
        }
        let Some(node) = self.tps.as_mut() else { return };
        let pct = self.stim.value_at(now.micros());
        let alpha = node.fw.config().window.angle_from_percent(pct);
        let (diff_pair, sat_d) = acquire_bridge(&node.diff, alpha, &node.adc_diff, &mut node.rng_diff);
        let (se_pair, sat_s) = acquire_bridge(&node.se, alpha, &node.adc_se, &mut node.rng_se);
        let acq = TpsAcquisition {
            differential: diff_pair,
            single_ended: se_pair,
            saturated: sat_d || sat_s,
        };
        let msg = node.fw.tick(now, &acq);
        let raw = node.fw.last_percent_raw();
        let frame = FrameFields {
            position_wire: msg.position_wire,
            counter: msg.counter,
            error: msg.error_status,
        }
        .into_frame(TPS_POSITION_ID, now);
        self.transmit(frame, now, Some(raw));
        self.check_ignition_mark(now);
    }

    fn restbus_emit(&mut self, now: SimTime) {
        if !self.bus.node_alive(NodeId::Tps, now) {
            return;
        }
        let pct = self.stim.value_at(now.micros());
        let Some(rb) = self.restbus.as_mut() else { return };
        let counter = rb.counter;
        rb.counter = (rb.counter + 1) % 16;
        let frame = FrameFields {
            position_wire: PercentPosition::from_percent_clamped(pct).encode(),
            counter,
            error: 0,
        }
        .into_frame(TPS_POSITION_ID, now);
        self.transmit(frame, now, None);
    }

    fn tva_control(&mut self, now: SimTime) {
        if !self.bus.node_alive(NodeId::Tva, now) {
            // Dead controller: the driver enable line drops.
            self.plant.set_command(DriveCommand::idle());
            return;
        }
        let volts = self.plant.hall_volts(now);
        let Some(node) = self.tva.as_mut() else { return };
        let adc_cfg = node.fw.config().hall_adc.clone();
        let reading = adc_sample(volts, &adc_cfg, &mut node.rng_adc);
        let cmd = node.fw.control_tick(now, reading);
        let w_pct = node.fw.setpoint_pct();
        let y_pct = node.fw.feedback_pct();
        let u = node.fw.last_output_microsteps_per_s();
        let energy = node.fw.energy_save_active();
        let failsafe = failsafe_str(node.fw.failsafe_kind());
        let cause = cause_str(node.fw.fault_cause());
        let phase = node.fw.cal_phase();
        self.plant.set_command(cmd);

        if self.cal_done_loss_snapshot.is_none() && phase == CalPhase::Done {
            self.cal_done_loss_snapshot = Some(self.plant.step_loss());
        }

        let mut row = TraceRow::new(now.micros(), RecordKind::Ctrl);
        row.stimulus_pct = Some(self.stim.value_at(now.micros()));
        row.w_pct = Some(w_pct);
        row.y_pct = Some(y_pct);
        row.u_steps_s = Some(u);
        row.enabled = Some(cmd.enabled as u8);
        row.energy_save = Some(energy as u8);
        row.failsafe = Some(failsafe.to_string());
        row.cause = Some(cause.to_string());
        row.cal_phase = Some(cal_str(phase).to_string());
        row.valve_pct = Some(self.plant.valve_percent());
        row.valve_deg = Some(self.plant.valve_angle().deg());
        row.rpm = Some(self.plant.engine_rpm());
        row.ignition = Some(self.ignition_on() as u8);
        let loss = self.plant.step_loss();
        row.step_loss_overload = Some(loss.overload_microsteps);
        row.step_loss_stall = Some(loss.stall_microsteps);
        self.rows.push(row);
    }

    fn tva_status(&mut self, now: SimTime) {
        if !self.bus.node_alive(NodeId::Tva, now) {
            return;
        }
        let Some(node) = self.tva.as_mut() else { return };
        let (status, report) = node.fw.status_tick();
        let frame = status.into_frame(TVA_STATUS_ID, now);
        self.transmit(frame, now, None);
        if let Some(report) = report {
            let frame = report.into_frame(TVA_ERROR_REPORT_ID, now);
            self.transmit(frame, now, None);
        }
    }

    fn plant_step(&mut self, now: SimTime) {
        let ignition = self.ignition_on();
        self.plant.step(PLANT_STEP_US, ignition);
        if self.plant_rows {
            let mut row = TraceRow::new(now.micros(), RecordKind::Plant);
            row.valve_pct = Some(self.plant.valve_percent());
            row.valve_deg = Some(self.plant.valve_angle().deg());
            row.motor_deg = Some(self.plant.motor_angle().deg());
            row.rpm = Some(self.plant.engine_rpm());
            row.dvac_ncm = Some(self.plant.suction_ncm());
            self.rows.push(row);
        }
    }

    fn deliver(&mut self, now: SimTime, frame: BusFrame, tps_raw: Option<f64>, touched: bool) {
        self.log_frame(now, &frame, touched, tps_raw);
        let fields = FrameFields::decode(&frame.payload);
        match frame.id {
            TPS_POSITION_ID => {
                if self.bus.node_alive(NodeId::Tva, now) {
                    if let Some(node) = self.tva.as_mut() {
                        node.fw.receive_setpoint(&fields, now);
                    }
                }
            }
            TVA_STATUS_ID => {
                if self.bus.node_alive(NodeId::Tps, now) {
                    if let Some(node) = self.tps.as_mut() {
                        node.fw.on_tva_status(fields.counter, now);
                    }
                }
            }
            TVA_ERROR_REPORT_ID => {
                if let Some(node) = self.tps.as_mut() {
                    node.fw.on_tva_error_report();
                }
                if let Some(rb) = self.restbus.as_mut() {
                    rb.ignition = false;
                }
                self.check_ignition_mark(now);
            }
            _ => {}
        }
    }

    fn fault_edge(&mut self, now: SimTime, index: usize, on: bool) {
        let kind = self.faults[index].kind;
        match kind {
            FaultKind::BeltBreak => self.plant.set_fault(PlantFault::BeltBreak, on),
            FaultKind::MotorStall => self.plant.set_fault(PlantFault::MotorStall, on),
            FaultKind::DriverDead => self.plant.set_fault(PlantFault::DriverDead, on),
            FaultKind::HallShortSupply => {
                self.plant.hall.fault = on.then_some(HallFault::ShortToSupply)
            }
            FaultKind::HallShortGround => {
                self.plant.hall.fault = on.then_some(HallFault::ShortToGround)
            }
            FaultKind::HallOpen => self.plant.hall.fault = on.then_some(HallFault::OpenCircuit),
            FaultKind::BridgeDiffShortGround => {
                if let Some(node) = self.tps.as_mut() {
                    node.diff.fault = on.then_some(BridgeFault::ShortToGround);
                }
            }
            FaultKind::BridgeDiffShortSupply => {
                if let Some(node) = self.tps.as_mut() {
                    node.diff.fault = on.then_some(BridgeFault::ShortToSupply { rail_v: 3.3 });
                }
            }
            FaultKind::BridgeDiffOpen => {
                if let Some(node) = self.tps.as_mut() {
                    node.diff.fault = on.then_some(BridgeFault::OpenCircuit { float_v: 0.0 });
                }
            }
            FaultKind::BridgeSeShortGround => {
                if let Some(node) = self.tps.as_mut() {
                    node.se.fault = on.then_some(BridgeFault::ShortToGround);
                }
            }
            // Bus faults act inside CanBus through their window.
            FaultKind::Drop
            | FaultKind::CorruptPayload
            | FaultKind::FreezeCounter
            | FaultKind::KillNodeTps
            | FaultKind::KillNodeTva => {}
        }
        self.mark(
            now,
            format!("fault:{}:{}", fault_name(kind), if on { "on" } else { "off" }),
        );
    }
}

pub fn fault_name(kind: FaultKind) -> &'static str {
    match kind {
        FaultKind::Drop => "drop",
        FaultKind::CorruptPayload => "corrupt_payload",
        FaultKind::FreezeCounter => "freeze_counter",
        FaultKind::KillNodeTps => "kill_node_tps",
        FaultKind::KillNodeTva => "kill_node_tva",
        FaultKind::BeltBreak => "belt_break",
        FaultKind::MotorStall => "motor_stall",
        FaultKind::DriverDead => "driver_dead",
        FaultKind::HallShortSupply => "hall_short_supply",
        FaultKind::HallShortGround => "hall_short_ground",
        FaultKind::HallOpen => "hall_open",
        FaultKind::BridgeDiffShortGround => "bridge_diff_short_ground",
        FaultKind::BridgeDiffShortSupply => "bridge_diff_short_supply",
        FaultKind::BridgeDiffOpen => "bridge_diff_open",
        FaultKind::BridgeSeShortGround => "bridge_se_short_ground",
    }
}

fn failsafe_str(kind: FailSafeKind) -> &'static str {
    match kind {
        FailSafeKind::Ok => "ok",
        FailSafeKind::Degraded => "degraded",
        FailSafeKind::Failed => "failed",
    }
}

fn cause_str(cause: FaultCause) -> &'static str {
    match cause {
        FaultCause::None => "none",
        FaultCause::Drivetrain => "drivetrain",
        FaultCause::Sensor => "sensor",
        FaultCause::TpsStale => "tps_stale",
        FaultCause::TpsError => "tps_error",
        FaultCause::Command => "command",
        FaultCause::Calibration => "calibration",
    }
}

fn cal_str(phase: CalPhase) -> &'static str {
    match phase {
        CalPhase::Startup => "startup",
        CalPhase::Seeking => "seeking",
        CalPhase::Done => "done",
    }
}

/// Runs one scenario to completion.
pub fn run_scenario(sc: &Scenario) -> SimOutput {
    let duration = sc.duration();
    let t0 = SimTime::ZERO;
    let mut sched: Scheduler<Ev> = Scheduler::new();
    let mut bus = CanBus::new(SimTime::from_micros(sc.bus.latency_us));
    for f in &sc.faults {
        if let Some(kind) = bus_fault_kind(f.kind) {
            let (start, end) = f.window();
            bus.plans.push(BusFaultPlan { kind, start, end });
        }
    }

    let has_tps = matches!(sc.assembly, Assembly::FullChain | Assembly::TpsOpenLoop);
    let has_tva = matches!(sc.assembly, Assembly::FullChain | Assembly::TvaRestBus);
    let has_plant = has_tva;

    let tps = has_tps.then(|| {
        let cal = CalibrationRecord::from_params(&sc.amr_differential, &sc.amr_single_ended);
        TpsNode {
            fw: TpsFirmware::new(sc.tps.clone(), Some(cal), t0),
            diff: AmrBridge::new(sc.amr_differential, BridgeId::Differential),
            se: AmrBridge::new(sc.amr_single_ended, BridgeId::SingleEnded),
            adc_diff: AdcConfig::tps_differential(),
            adc_se: AdcConfig::tps_single_ended(),
            rng_diff: RngStream::new(sc.seed, streams::AMR_DIFFERENTIAL),
            rng_se: RngStream::new(sc.seed, streams::AMR_SINGLE_ENDED),
        }
    });
    let tva = has_tva.then(|| TvaNode {
        fw: TvaFirmware::new(sc.tva.clone(), t0),
        rng_adc: RngStream::new(sc.seed, streams::ADC_TVA),
    });
    let restbus = matches!(sc.assembly, Assembly::TvaRestBus).then(|| RestBus {
        counter: 0,
        ignition: true,
    });

    let mut rng_hall = RngStream::new(sc.seed, streams::HALL_PROFILE);
    let hall_profile = HallProfile::draw(&sc.plant.hall, &mut rng_hall);
    let plant = ValvePlant::new(sc.plant.clone(), hall_profile);

    let stim = resolve_stimulus(sc);

    // Initial schedule; insertion order fixes same-timestamp execution
    // order: control before status before plant integration.
    if has_tps {
        sched.schedule(t0, Ev::TpsTick).unwrap();
    }
    if restbus.is_some() {
        sched.schedule(t0, Ev::RestBusEmit).unwrap();
    }
    if has_tva {
        sched.schedule(t0, Ev::TvaControl).unwrap();
        sched.schedule(t0, Ev::TvaStatus).unwrap();
    }
    if has_plant {
        sched.schedule(t0, Ev::PlantStep).unwrap();
    }
    for t in stim.change_points() {
        if t <= duration.micros() {
            sched.schedule(SimTime::from_micros(t), Ev::StimPoint).unwrap();
        }
    }
    for (index, f) in sc.faults.iter().enumerate() {
        let (start, end) = f.window();
        if start <= duration {
            sched.schedule(start, Ev::FaultEdge { index, on: true }).unwrap();
        }
        if end <= duration {
            sched.schedule(end, Ev::FaultEdge { index, on: false }).unwrap();
        }
    }

    let mut rig = Rig {
        duration,
        assembly: sc.assembly,
        ignition_cfg: sc.ignition,
        plant_rows: sc.trace.plant_rows,
        sched,
        bus,
        stim,
        rows: Vec::new(),
        tps,
        tva,
        plant,
        restbus,
        faults: sc.faults.clone(),
        ignition_was_on: sc.ignition,
        cal_done_loss_snapshot: None,
    };

    while let Some((now, _, ev)) = rig.sched.pop() {
        if now > rig.duration {
            break;
        }
        match ev {
            Ev::TpsTick => {
                rig.tps_tick(now);
                rig.sched.schedule(now + BUS_PERIOD_US, Ev::TpsTick).unwrap();
            }
            Ev::RestBusEmit => {
                rig.restbus_emit(now);
                rig.sched.schedule(now + BUS_PERIOD_US, Ev::RestBusEmit).unwrap();
            }
            Ev::TvaControl => {
                rig.tva_control(now);
                rig.sched
                    .schedule(now + CONTROL_PERIOD_US, Ev::TvaControl)
                    .unwrap();
            }
            Ev::TvaStatus => {
                rig.tva_status(now);
                rig.sched.schedule(now + BUS_PERIOD_US, Ev::TvaStatus).unwrap();
            }
            Ev::PlantStep => {
                rig.plant_step(now);
                rig.sched.schedule(now + PLANT_STEP_US, Ev::PlantStep).unwrap();
            }
            Ev::Deliver {
                frame,
                tps_raw,
                touched,
            } => rig.deliver(now, frame, tps_raw, touched),
            Ev::StimPoint => {
                let mut row = TraceRow::new(now.micros(), RecordKind::Stim);
                row.stimulus_pct = Some(rig.stim.value_at(now.micros()));
                rig.rows.push(row);
            }
            Ev::FaultEdge { index, on } => rig.fault_edge(now, index, on),
        }
    }

    let total_loss = rig.plant.step_loss();
    let during_cal = rig.cal_done_loss_snapshot.unwrap_or(total_loss);
    SimOutput {
        rows: rig.rows,
        step_loss: total_loss,
        step_loss_during_cal: during_cal,
    }
}
