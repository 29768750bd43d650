//! Runs scenarios, applies the scenario's assertions and renders reports.

use crate::metrics;
use crate::scenario::{Assertions, FaultKind, Profile, Scenario, Stimulus};
use crate::sim::{fault_name, run_scenario, SimOutput};
use crate::trace::TraceRow;
use serde::Serialize;

/// Everything a profile can measure; fields stay `None` when they do not
/// apply to the scenario kind.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricsReport {
    pub settling_time_ms: Option<f64>,
    pub overshoot_pct: Option<f64>,
    pub steady_error_pct: Option<f64>,
    pub ramp_lag_ms: Option<f64>,
    pub dead_time_ms: Option<f64>,
    pub max_deviation_pct: Option<f64>,
    pub per_setpoint_error_pct: Option<f64>,
    pub false_fault_count: u32,
    pub overall_error_pct: Option<f64>,
    pub accuracy_low_pct: Option<f64>,
    pub accuracy_mid_pct: Option<f64>,
    pub accuracy_high_pct: Option<f64>,
    pub fault_detection_latency_ms: Option<f64>,
    pub step_loss_overload: u64,
    pub step_loss_stall: u64,
    pub setpoint_count: usize,
}

/// Smoothing window for the sweep deviation series.
pub const SWEEP_MA_WINDOW: usize = 9;

/// Computes the metric set for a profile; pure function of the trace.
pub fn compute_metrics(profile: Profile, rows: &[TraceRow]) -> MetricsReport {
    let mut report = MetricsReport::default();
    let (overload, stall) = metrics::final_step_loss(rows);
    report.step_loss_overload = overload;
    report.step_loss_stall = stall;
    report.setpoint_count = metrics::stim_points(rows).len();
    match profile {
        Profile::Endurance => {
            report.per_setpoint_error_pct = metrics::per_setpoint_error_pct(rows);
            report.false_fault_count = metrics::false_fault_count(rows);
        }
        Profile::OpenLoopSweep => {
            report.max_deviation_pct = metrics::sweep_deviation_pct(rows, SWEEP_MA_WINDOW);
            report.false_fault_count = metrics::false_fault_count(rows);
        }
        Profile::StepRamp => {
            let edges = metrics::step_metrics(rows);
            let (settling, overshoot, steady) = metrics::worst_step_metrics(&edges);
            report.settling_time_ms = settling;
            report.overshoot_pct = overshoot;
            report.steady_error_pct = steady;
            report.ramp_lag_ms = metrics::ramp_lag_ms(rows);
            report.false_fault_count = metrics::false_fault_count(rows);
        }
        Profile::FullChain => {
            report.dead_time_ms = metrics::dead_time_ms(rows);
            report.ramp_lag_ms = metrics::ramp_lag_ms(rows);
            report.overall_error_pct = metrics::overall_error_pct(rows);
            if let Some((low, mid, high)) = metrics::banded_accuracy_pct(rows) {
                report.accuracy_low_pct = Some(low);
                report.accuracy_mid_pct = Some(mid);
                report.accuracy_high_pct = Some(high);
            }
            report.false_fault_count = metrics::false_fault_count(rows);
        }
        Profile::FaultMatrix => {
            let detections = metrics::fault_detections(rows);
            report.fault_detection_latency_ms = detections
                .iter()
                .filter_map(|d| d.latency_ms)
                .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.max(l))));
        }
        Profile::None => {
            report.false_fault_count = metrics::false_fault_count(rows);
        }
    }
    report
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportLine {
    pub label: String,
    pub value: String,
    pub requirement: String,
    /// `None` marks an informational line.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub lines: Vec<ReportLine>,
    pub passed: bool,
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario: {}\n", self.scenario));
        out.push_str(&format!(
            "result: {}\n",
            if self.passed { "PASS" } else { "FAIL" }
        ));
        for line in &self.lines {
            let verdict = match line.pass {
                Some(true) => "  PASS",
                Some(false) => "  FAIL",
                None => "",
            };
            if line.requirement.is_empty() {
                out.push_str(&format!("  {} = {}{}\n", line.label, line.value, verdict));
            } else {
                out.push_str(&format!(
                    "  {} = {} (require {}){}\n",
                    line.label, line.value, line.requirement, verdict
                ));
            }
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.3}"),
        Some(_) => "unsettled".to_string(),
        None => "n/a".to_string(),
    }
}

struct ReportBuilder {
    lines: Vec<ReportLine>,
    passed: bool,
}

impl ReportBuilder {
    fn new() -> Self {
        ReportBuilder {
            lines: Vec::new(),
            passed: true,
        }
    }

    fn info(&mut self, label: &str, value: String) {
        self.lines.push(ReportLine {
            label: label.to_string(),
            value,
            requirement: String::new(),
            pass: None,
        });
    }

    /// Upper bound check; a missing measurement fails a present requirement.
    fn le(&mut self, label: &str, value: Option<f64>, bound: Option<f64>) {
        let Some(bound) = bound else {
            if value.is_some() {
                self.info(label, fmt_opt(value));
            }
            return;
        };
        let pass = value.is_some_and(|v| v.is_finite() && v <= bound);
        self.passed &= pass;
        self.lines.push(ReportLine {
            label: label.to_string(),
            value: fmt_opt(value),
            requirement: format!("<= {bound}"),
            pass: Some(pass),
        });
    }

    /// Strict upper bound.
    fn lt(&mut self, label: &str, value: Option<f64>, bound: Option<f64>) {
        let Some(bound) = bound else {
            if value.is_some() {
                self.info(label, fmt_opt(value));
            }
            return;
        };
        let pass = value.is_some_and(|v| v.is_finite() && v < bound);
        self.passed &= pass;
        self.lines.push(ReportLine {
            label: label.to_string(),
            value: fmt_opt(value),
            requirement: format!("< {bound}"),
            pass: Some(pass),
        });
    }

    fn ge(&mut self, label: &str, value: Option<f64>, bound: Option<f64>) {
        let Some(bound) = bound else {
            if value.is_some() {
                self.info(label, fmt_opt(value));
            }
            return;
        };
        let pass = value.is_some_and(|v| v >= bound);
        self.passed &= pass;
        self.lines.push(ReportLine {
            label: label.to_string(),
            value: fmt_opt(value),
            requirement: format!(">= {bound}"),
            pass: Some(pass),
        });
    }

    fn eq_u32(&mut self, label: &str, value: u32, expected: Option<u32>) {
        let Some(expected) = expected else {
            self.info(label, value.to_string());
            return;
        };
        let pass = value == expected;
        self.passed &= pass;
        self.lines.push(ReportLine {
            label: label.to_string(),
            value: value.to_string(),
            requirement: format!("== {expected}"),
            pass: Some(pass),
        });
    }

    fn finish(self, scenario: String) -> Report {
        Report {
            scenario,
            passed: self.passed,
            lines: self.lines,
        }
    }
}

/// Applies the scenario's assertions to a metric set.
pub fn evaluate(sc: &Scenario, report: &MetricsReport) -> Report {
    let a: &Assertions = &sc.assertions;
    let mut b = ReportBuilder::new();
    b.info("setpoints", report.setpoint_count.to_string());
    b.le("settling_time_ms", report.settling_time_ms, a.settling_time_ms);
    b.lt("overshoot_pct", report.overshoot_pct, a.overshoot_pct);
    b.le("steady_error_pct", report.steady_error_pct, a.steady_error_pct);
    b.le("ramp_lag_ms", report.ramp_lag_ms, a.ramp_lag_ms);
    b.le("dead_time_ms", report.dead_time_ms, a.dead_time_ms);
    b.le("max_deviation_pct", report.max_deviation_pct, a.max_deviation_pct);
    b.le(
        "per_setpoint_error_pct",
        report.per_setpoint_error_pct,
        a.per_setpoint_error_pct,
    );
    b.le("overall_error_pct", report.overall_error_pct, a.overall_error_pct);
    b.ge(
        "accuracy_low_pct",
        report.accuracy_low_pct,
        a.min_accuracy_low_mid_pct,
    );
    b.ge(
        "accuracy_mid_pct",
        report.accuracy_mid_pct,
        a.min_accuracy_low_mid_pct,
    );
    b.ge(
        "accuracy_high_pct",
        report.accuracy_high_pct,
        a.min_accuracy_high_pct,
    );
    b.le(
        "fault_detection_latency_ms",
        report.fault_detection_latency_ms,
        a.fault_detection_latency_ms,
    );
    b.eq_u32("false_fault_count", report.false_fault_count, a.false_fault_count);
    if a.zero_overload_step_loss == Some(true) {
        let pass = report.step_loss_overload == 0;
        b.passed &= pass;
        b.lines.push(ReportLine {
            label: "step_loss_overload".into(),
            value: report.step_loss_overload.to_string(),
            requirement: "== 0".into(),
            pass: Some(pass),
        });
    } else {
        b.info("step_loss_overload", report.step_loss_overload.to_string());
    }
    b.info("step_loss_stall", report.step_loss_stall.to_string());
    b.finish(sc.name.clone())
}

/// Runs a scenario and evaluates it against its own assertions.
pub fn run_and_evaluate(sc: &Scenario) -> (SimOutput, MetricsReport, Report) {
    if sc.profile == Profile::FaultMatrix {
        let (report, _) = run_fault_matrix(sc);
        let out = SimOutput {
            rows: Vec::new(),
            step_loss: Default::default(),
            step_loss_during_cal: Default::default(),
        };
        return (out, MetricsReport::default(), report);
    }
    let out = run_scenario(sc);
    let m = compute_metrics(sc.profile, &out.rows);
    let report = evaluate(sc, &m);
    (out, m, report)
}

/// The five monitored failure classes of the actuator path.
pub const MATRIX_CLASSES: [FaultKind; 5] = [
    FaultKind::BeltBreak,
    FaultKind::MotorStall,
    FaultKind::DriverDead,
    FaultKind::HallShortSupply,
    FaultKind::KillNodeTps,
];

#[derive(Debug, Clone, Serialize)]
pub struct MatrixOutcome {
    pub fault: String,
    pub operating_point_pct: f64,
    pub detected: bool,
    pub latency_ms: Option<f64>,
    pub driver_disabled: bool,
    pub safe_action: String,
    pub pass: bool,
}

/// Aligns the injection instant one control period before a bus emission,
/// so the post-injection setpoint arrives with minimal phase delay.
fn align_injection(t_s: f64) -> f64 {
    let period = 0.02;
    ((t_s / period).floor() * period - 0.001).max(period)
}

fn matrix_sub_scenario(base: &Scenario, kind: FaultKind, op_pct: f64) -> Scenario {
    let mut sc = base.clone();
    let inject = align_injection(base.matrix.inject_at_s);
    let target = if op_pct < 50.0 {
        op_pct + base.matrix.step_offset_pct
    } else {
        op_pct - base.matrix.step_offset_pct
    };
    sc.name = format!("{}..{}_{}pct", base.name, fault_name(kind), op_pct as i64);
    sc.stimulus = Stimulus::Pulse {
        levels: vec![(base.matrix.settle_s, op_pct), (inject, target)],
    };
    sc.faults = vec![crate::scenario::FaultPlan {
        kind,
        start_s: inject,
        end_s: inject + 3600.0,
    }];
    sc.duration_s = inject + 1.5;
    sc.profile = Profile::FaultMatrix;
    sc
}

fn latency_bound_ms(base: &Scenario, kind: FaultKind) -> f64 {
    match kind {
        // Dual moving-average rule: fail-safe timer plus one bus period.
        FaultKind::BeltBreak | FaultKind::MotorStall | FaultKind::DriverDead => {
            base.tva.failsafe.timer.as_millis_f64() + 20.0
        }
        // Sensor monitor reacts within one control tick.
        FaultKind::HallShortSupply | FaultKind::HallShortGround | FaultKind::HallOpen => 2.0,
        // Counter staleness: window plus one period plus a tick.
        _ => base.tva.staleness.as_millis_f64() + 21.0,
    }
}

/// Runs the 5 fault classes x operating points matrix and aggregates one
/// report line per cell.
pub fn run_fault_matrix(base: &Scenario) -> (Report, Vec<MatrixOutcome>) {
    let mut outcomes = Vec::new();
    let mut b = ReportBuilder::new();
    for &kind in &MATRIX_CLASSES {
        for &op in &base.matrix.operating_points_pct {
            let sc = matrix_sub_scenario(base, kind, op);
            let out = run_scenario(&sc);
            let detections = metrics::fault_detections(&out.rows);
            let det = detections.iter().find(|d| d.fault == fault_name(kind));
            let detected = det.is_some_and(|d| d.detected_us.is_some());
            let latency_ms = det.and_then(|d| d.latency_ms);
            let bound = latency_bound_ms(base, kind);

            let ctrl = metrics::ctrl_samples(&out.rows);
            let tail_start = sc.duration().micros().saturating_sub(100_000);
            let tail: Vec<_> = ctrl.iter().filter(|c| c.t >= tail_start).collect();
            let driver_disabled = !tail.is_empty() && tail.iter().all(|c| !c.enabled);
            let (safe_action, safe_ok) = if kind == FaultKind::KillNodeTps {
                let at_idle = tail.iter().all(|c| c.valve_pct < 1.5);
                (
                    "idle return".to_string(),
                    at_idle && tail.iter().all(|c| c.tps_stale),
                )
            } else {
                let ignition_cut = metrics::marks(&out.rows)
                    .iter()
                    .any(|(_, m)| m == "ignition:off");
                ("ignition interrupt".to_string(), ignition_cut)
            };

            let pass = detected
                && latency_ms.is_some_and(|l| l <= bound)
                && driver_disabled
                && safe_ok;
            b.passed &= pass;
            b.lines.push(ReportLine {
                label: format!("{} @ {:.0}%", fault_name(kind), op),
                value: format!(
                    "detected={} latency={} driver_off={} action={}",
                    detected,
                    fmt_opt(latency_ms),
                    driver_disabled,
                    safe_action
                ),
                requirement: format!("latency <= {bound} ms, driver off, safe action"),
                pass: Some(pass),
            });
            outcomes.push(MatrixOutcome {
                fault: fault_name(kind).to_string(),
                operating_point_pct: op,
                detected,
                latency_ms,
                driver_disabled,
                safe_action,
                pass,
            });
        }
    }
    let detected_count = outcomes.iter().filter(|o| o.pass).count();
    b.info(
        "matrix",
        format!("{}/{} cells detected and safe", detected_count, outcomes.len()),
    );
    (b.finish(base.name.clone()), outcomes)
}
