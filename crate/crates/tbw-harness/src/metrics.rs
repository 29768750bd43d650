//! Metric computation. Every function here is a pure function of the trace
//! rows, so recomputing from an exported CSV reproduces the report exactly.
//!
//! Definitions:
//! - settling time: stimulus edge until the feedback enters the +-0.5%
//!   band around the target and stays inside it for the rest of the hold.
//! - overshoot: worst feedback excursion beyond the target, in the step
//!   direction, in percent points.
//! - steady error: worst |target - feedback| over the last 100 ms of a hold.
//! - dead time: stimulus edge until the true valve has moved at least one
//!   Hall resolution step (0.022 deg) away from its pre-edge position.
//! - ramp lag: worst time shift between the received setpoint and the
//!   feedback crossing the same level inside a ramp region.
//! - sweep deviation: measured minus reference position over the sweep,
//!   smoothed with a centered moving average, worst magnitude.

use crate::trace::{RecordKind, TraceRow};
use serde::Serialize;
use tbw_core::bus::{TPS_POSITION_ID, TVA_STATUS_ID};

/// One Hall resolution step expressed in percent of valve travel.
pub const HALL_LSB_PCT: f64 = 0.022 / 69.0 * 100.0;
/// Settling band around the target.
pub const SETTLING_BAND_PCT: f64 = 0.5;
/// Hold tail used for the steady-state error.
const STEADY_TAIL_US: u64 = 100_000;
/// Samples closer than this to a stimulus change do not count as settled.
const SETTLED_EXCLUSION_US: u64 = 300_000;
/// Endurance accuracy window after each setpoint, chosen to end before the
/// energy-save dwell can park the driver.
const ACCURACY_WINDOW_US: (u64, u64) = (350_000, 500_000);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtrlSample {
    pub t: u64,
    pub stim: f64,
    pub w: f64,
    pub y: f64,
    pub valve_pct: f64,
    pub rpm: f64,
    pub failed: bool,
    pub ok: bool,
    pub tps_stale: bool,
    pub enabled: bool,
}

pub fn ctrl_samples(rows: &[TraceRow]) -> Vec<CtrlSample> {
    rows.iter()
        .filter(|r| r.record == RecordKind::Ctrl)
        .map(|r| CtrlSample {
            t: r.time_us,
            stim: r.stimulus_pct.unwrap_or(0.0),
            w: r.w_pct.unwrap_or(0.0),
            y: r.y_pct.unwrap_or(0.0),
            valve_pct: r.valve_pct.unwrap_or(0.0),
            rpm: r.rpm.unwrap_or(0.0),
            failed: r.failsafe.as_deref() == Some("failed"),
            ok: r.failsafe.as_deref() == Some("ok"),
            tps_stale: r.cause.as_deref() == Some("tps_stale"),
            enabled: r.enabled == Some(1),
        })
        .collect()
}

/// Stimulus change points `(time_us, value)`.
pub fn stim_points(rows: &[TraceRow]) -> Vec<(u64, f64)> {
    rows.iter()
        .filter(|r| r.record == RecordKind::Stim)
        .map(|r| (r.time_us, r.stimulus_pct.unwrap_or(0.0)))
        .collect()
}

pub fn marks(rows: &[TraceRow]) -> Vec<(u64, String)> {
    rows.iter()
        .filter(|r| r.record == RecordKind::Mark)
        .filter_map(|r| r.mark.as_ref().map(|m| (r.time_us, m.clone())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeMetrics {
    pub edge_us: u64,
    pub target_pct: f64,
    pub settling_ms: Option<f64>,
    pub overshoot_pct: f64,
    pub steady_error_pct: f64,
}

/// Per-edge step metrics over all piecewise-constant stimulus edges with a
/// hold long enough to judge (at least 300 ms).
pub fn step_metrics(rows: &[TraceRow]) -> Vec<EdgeMetrics> {
    let ctrl = ctrl_samples(rows);
    let points = stim_points(rows);
    let end = ctrl.last().map(|c| c.t).unwrap_or(0);
    let mut out = Vec::new();
    let mut previous_value = 0.0f64;
    for (i, &(t_edge, target)) in points.iter().enumerate() {
        let window_end = points.get(i + 1).map(|&(t, _)| t).unwrap_or(end);
        let value_changed = (target - previous_value).abs() > 1e-9;
        previous_value = target;
        if !value_changed || window_end.saturating_sub(t_edge) < 300_000 {
            continue;
        }
        let window: Vec<&CtrlSample> = ctrl
            .iter()
            .filter(|c| c.t >= t_edge && c.t < window_end)
            .collect();
        if window.is_empty() {
            continue;
        }
        let start_y = window[0].y;
        let direction = if target >= start_y { 1.0 } else { -1.0 };
        let mut overshoot = 0.0f64;
        let mut last_out_of_band: Option<u64> = None;
        for c in &window {
            overshoot = overshoot.max((c.y - target) * direction);
            if (c.y - target).abs() > SETTLING_BAND_PCT {
                last_out_of_band = Some(c.t);
            }
        }
        let settling_ms = match last_out_of_band {
            None => Some(0.0),
            Some(t_out) => {
                let entered = window.iter().find(|c| c.t > t_out).map(|c| c.t);
                entered.map(|t| (t - t_edge) as f64 / 1e3)
            }
        };
        let tail_start = window_end.saturating_sub(STEADY_TAIL_US);
        let steady_error_pct = window
            .iter()
            .filter(|c| c.t >= tail_start)
            .map(|c| (target - c.y).abs())
            .fold(0.0f64, f64::max);
        out.push(EdgeMetrics {
            edge_us: t_edge,
            target_pct: target,
            settling_ms,
            overshoot_pct: overshoot,
            steady_error_pct,
        });
    }
    out
}

/// Worst-case fold over the per-edge step metrics. Unsettled edges map to
/// an infinite settling time so they can never pass an assertion silently.
pub fn worst_step_metrics(edges: &[EdgeMetrics]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if edges.is_empty() {
        return (None, None, None);
    }
    let settling = edges
        .iter()
        .map(|e| e.settling_ms.unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    let overshoot = edges.iter().map(|e| e.overshoot_pct).fold(0.0f64, f64::max);
    let steady = edges
        .iter()
        .map(|e| e.steady_error_pct)
        .fold(0.0f64, f64::max);
    (Some(settling), Some(overshoot), Some(steady))
}

/// Ramp regions: intervals between consecutive stim rows during which the
/// per-sample stimulus actually moves.
fn ramp_regions(rows: &[TraceRow]) -> Vec<(u64, u64, f64, f64)> {
    let ctrl = ctrl_samples(rows);
    let points = stim_points(rows);
    let mut out = Vec::new();
    for pair in points.windows(2) {
        let (t0, v0) = pair[0];
        let (t1, v1) = pair[1];
        if (v1 - v0).abs() < 0.5 || t1 <= t0 {
            continue;
        }
        let mid = t0 + (t1 - t0) / 2;
        let mid_val = ctrl
            .iter()
            .find(|c| c.t >= mid)
            .map(|c| c.stim)
            .unwrap_or(v0);
        // Piecewise-constant stimulus keeps its value between stim rows; a
        // moving value mid-interval means this interval is a ramp.
        if (mid_val - v0).abs() > 0.2 && (mid_val - v1).abs() > 0.2 {
            out.push((t0, t1, v0, v1));
        }
    }
    out
}

/// Worst level-crossing lag between the received setpoint and the feedback
/// inside ramp regions.
pub fn ramp_lag_ms(rows: &[TraceRow]) -> Option<f64> {
    let ctrl = ctrl_samples(rows);
    let regions = ramp_regions(rows);
    if regions.is_empty() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (t0, t1, from, to) in regions {
        let rising = to > from;
        let span = (to - from).abs();
        // Interior levels, away from the segment ends.
        for k in 1..=8 {
            let level = from + (to - from) * (0.1 + 0.1 * k as f64);
            let _ = span;
            let search_end = t1 + 200_000;
            let crosses = |v: f64| if rising { v >= level } else { v <= level };
            let t_w = ctrl
                .iter()
                .find(|c| c.t >= t0 && c.t <= search_end && crosses(c.w))
                .map(|c| c.t);
            let t_y = ctrl
                .iter()
                .find(|c| c.t >= t0 && c.t <= search_end && crosses(c.y))
                .map(|c| c.t);
            if let (Some(tw), Some(ty)) = (t_w, t_y) {
                if ty > tw {
                    worst = worst.max((ty - tw) as f64 / 1e3);
                }
            }
        }
    }
    Some(worst)
}

/// Worst dead time over stimulus edges: edge until the true valve moved one
/// Hall resolution step from its pre-edge position.
pub fn dead_time_ms(rows: &[TraceRow]) -> Option<f64> {
    let ctrl = ctrl_samples(rows);
    let points = stim_points(rows);
    let mut worst: Option<f64> = None;
    for (i, &(t_edge, _)) in points.iter().enumerate() {
        // The stimulus must move meaningfully after this edge (covers both
        // steps and ramp starts).
        let after = ctrl.iter().find(|c| c.t >= t_edge + 100_000);
        let before = ctrl.iter().rev().find(|c| c.t < t_edge);
        let (Some(after), Some(before)) = (after, before) else {
            continue;
        };
        if (after.stim - before.stim).abs() < 0.5 {
            continue;
        }
        // Skip edges while the valve is already moving from a previous edge.
        if i > 0 {
            let (prev_t, _) = points[i - 1];
            if t_edge.saturating_sub(prev_t) < 300_000 {
                continue;
            }
        }
        let baseline = before.valve_pct;
        let moved = ctrl
            .iter()
            .find(|c| c.t >= t_edge && (c.valve_pct - baseline).abs() >= HALL_LSB_PCT);
        if let Some(m) = moved {
            let dt = (m.t - t_edge) as f64 / 1e3;
            worst = Some(worst.map_or(dt, |w: f64| w.max(dt)));
        }
    }
    worst
}

/// Open-loop sweep deviation: per dwell position, the last unquantized
/// sensor decode against the reference, smoothed with a centered moving
/// average, worst magnitude. Returns percent of range.
pub fn sweep_deviation_pct(rows: &[TraceRow], ma_window: usize) -> Option<f64> {
    let points = stim_points(rows);
    if points.len() < 3 {
        return None;
    }
    let frames: Vec<(u64, f64)> = rows
        .iter()
        .filter(|r| {
            r.record == RecordKind::Frame && r.id == Some(TPS_POSITION_ID) && r.tps_pct_raw.is_some()
        })
        .map(|r| (r.time_us, r.tps_pct_raw.unwrap()))
        .collect();
    let mut deviations = Vec::new();
    for (i, &(t_pos, reference)) in points.iter().enumerate() {
        let t_next = points.get(i + 1).map(|&(t, _)| t).unwrap_or(u64::MAX);
        let last = frames
            .iter()
            .rev()
            .find(|&&(t, _)| t >= t_pos && t < t_next);
        if let Some(&(_, measured)) = last {
            deviations.push(measured - reference);
        }
    }
    if deviations.is_empty() {
        return None;
    }
    let half = ma_window / 2;
    let mut worst: f64 = 0.0;
    for i in 0..deviations.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(deviations.len());
        let mean = deviations[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        worst = worst.max(mean.abs());
    }
    Some(worst)
}

/// Endurance: worst per-setpoint tracking error, measured inside a window
/// after each setpoint that ends before energy save can park the driver.
pub fn per_setpoint_error_pct(rows: &[TraceRow]) -> Option<f64> {
    let ctrl = ctrl_samples(rows);
    let points = stim_points(rows);
    let mut worst: Option<f64> = None;
    for &(t_set, _) in &points {
        let (lo, hi) = (t_set + ACCURACY_WINDOW_US.0, t_set + ACCURACY_WINDOW_US.1);
        let samples: Vec<f64> = ctrl
            .iter()
            .filter(|c| c.t >= lo && c.t < hi)
            .map(|c| (c.w - c.y).abs())
            .collect();
        if samples.is_empty() {
            continue;
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        worst = Some(worst.map_or(mean, |w: f64| w.max(mean)));
    }
    worst
}

/// Counts spurious fault indications: frames carrying a nonzero error
/// status plus fail-safe transitions away from the healthy state.
pub fn false_fault_count(rows: &[TraceRow]) -> u32 {
    let mut count = 0u32;
    for r in rows {
        if r.record == RecordKind::Frame
            && matches!(r.id, Some(TPS_POSITION_ID) | Some(TVA_STATUS_ID))
            && r.err.unwrap_or(0) != 0
        {
            count += 1;
        }
    }
    let ctrl = ctrl_samples(rows);
    let mut was_ok = true;
    for c in &ctrl {
        if was_ok && !c.ok {
            count += 1;
        }
        was_ok = c.ok;
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub fault: String,
    pub injected_us: u64,
    pub detected_us: Option<u64>,
    pub latency_ms: Option<f64>,
}

/// Detection of injected faults: first fail-safe `failed` state, refused
/// commands after sensor-node death, or the ignition latch, whichever the
/// trace shows first after the injection mark.
pub fn fault_detections(rows: &[TraceRow]) -> Vec<Detection> {
    let ctrl = ctrl_samples(rows);
    let all_marks = marks(rows);
    let mut out = Vec::new();
    for (t_inj, mark) in &all_marks {
        let Some(name) = mark.strip_prefix("fault:").and_then(|m| m.strip_suffix(":on")) else {
            continue;
        };
        let by_state = ctrl
            .iter()
            .find(|c| c.t >= *t_inj && (c.failed || c.tps_stale))
            .map(|c| c.t);
        let by_ignition = all_marks
            .iter()
            .find(|(t, m)| *t >= *t_inj && m == "ignition:off")
            .map(|(t, _)| *t);
        let detected_us = match (by_state, by_ignition) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        out.push(Detection {
            fault: name.to_string(),
            injected_us: *t_inj,
            detected_us,
            latency_ms: detected_us.map(|t| (t - t_inj) as f64 / 1e3),
        });
    }
    out
}

/// Settled control samples: excludes everything close after a stimulus
/// change, fail-safe reactions and parked-from-stale intervals.
fn settled_samples(rows: &[TraceRow]) -> Vec<CtrlSample> {
    let ctrl = ctrl_samples(rows);
    let points = stim_points(rows);
    ctrl.into_iter()
        .filter(|c| {
            c.ok && points
                .iter()
                .all(|&(t, _)| c.t < t || c.t >= t + SETTLED_EXCLUSION_US)
        })
        .collect()
}

/// Worst end-to-end error between the stimulus and the true valve position
/// over settled samples.
pub fn overall_error_pct(rows: &[TraceRow]) -> Option<f64> {
    let settled = settled_samples(rows);
    if settled.is_empty() {
        return None;
    }
    Some(
        settled
            .iter()
            .map(|c| (c.stim - c.valve_pct).abs())
            .fold(0.0, f64::max),
    )
}

/// Actuator tracking accuracy per engine-speed band: the observed speed
/// range is split in thirds and the worst |w - y| inside each band is
/// converted to an accuracy percentage.
pub fn banded_accuracy_pct(rows: &[TraceRow]) -> Option<(f64, f64, f64)> {
    let settled = settled_samples(rows);
    if settled.is_empty() {
        return None;
    }
    let min_rpm = settled.iter().map(|c| c.rpm).fold(f64::MAX, f64::min);
    let max_rpm = settled.iter().map(|c| c.rpm).fold(0.0f64, f64::max);
    if max_rpm - min_rpm < 1.0 {
        return None;
    }
    let edge1 = min_rpm + (max_rpm - min_rpm) / 3.0;
    let edge2 = min_rpm + 2.0 * (max_rpm - min_rpm) / 3.0;
    let mut worst = [0.0f64; 3];
    for c in &settled {
        let band = if c.rpm < edge1 {
            0
        } else if c.rpm < edge2 {
            1
        } else {
            2
        };
        worst[band] = worst[band].max((c.w - c.y).abs());
    }
    Some((100.0 - worst[0], 100.0 - worst[1], 100.0 - worst[2]))
}

/// Final step-loss counters from the trace.
pub fn final_step_loss(rows: &[TraceRow]) -> (u64, u64) {
    let ctrl: Vec<&TraceRow> = rows
        .iter()
        .filter(|r| r.record == RecordKind::Ctrl)
        .collect();
    ctrl.last()
        .map(|r| {
            (
                r.step_loss_overload.unwrap_or(0),
                r.step_loss_stall.unwrap_or(0),
            )
        })
        .unwrap_or((0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRow;

    fn ctrl(t_ms: u64, stim: f64, w: f64, y: f64, valve: f64) -> TraceRow {
        let mut r = TraceRow::new(t_ms * 1000, RecordKind::Ctrl);
        r.stimulus_pct = Some(stim);
        r.w_pct = Some(w);
        r.y_pct = Some(y);
        r.valve_pct = Some(valve);
        r.valve_deg = Some(valve * 0.69);
        r.rpm = Some(0.0);
        r.failsafe = Some("ok".into());
        r.cause = Some("none".into());
        r.enabled = Some(1);
        r
    }

    fn stim(t_ms: u64, pct: f64) -> TraceRow {
        let mut r = TraceRow::new(t_ms * 1000, RecordKind::Stim);
        r.stimulus_pct = Some(pct);
        r
    }

    /// Synthetic first-order step: settles when it stays inside the band.
    #[test]
    fn step_metrics_on_synthetic_trace() {
        let mut rows = vec![stim(0, 0.0), stim(500, 50.0)];
        for t in 0..2000u64 {
            let y = if t < 500 {
                0.0
            } else {
                50.0 * (1.0 - (-((t - 500) as f64) / 40.0).exp())
            };
            let w = if t < 500 { 0.0 } else { 50.0 };
            rows.push(ctrl(t, w, w, (y * 10.0).round() / 10.0, y));
        }
        rows.sort_by_key(|r| r.time_us);
        let edges = step_metrics(&rows);
        assert_eq!(edges.len(), 1);
        let e = &edges[0];
        // Band entry for a first-order response: t = tau * ln(A/band).
        let expected = 40.0 * (50.0f64 / 0.5).ln();
        let got = e.settling_ms.unwrap();
        assert!(
            (got - expected).abs() < 6.0,
            "settling {got} vs expected {expected}"
        );
        assert!(e.overshoot_pct < 0.1);
        assert!(e.steady_error_pct <= 0.1);
    }

    #[test]
    fn dead_time_sees_first_motion() {
        let mut rows = vec![stim(0, 0.0), stim(1000, 60.0)];
        for t in 0..2000u64 {
            let valve = if t < 1012 {
                10.0
            } else {
                10.0 + (t - 1012) as f64 * 0.1
            };
            rows.push(ctrl(t, if t < 1000 { 0.0 } else { 60.0 }, 60.0, valve, valve));
        }
        rows.sort_by_key(|r| r.time_us);
        let dt = dead_time_ms(&rows).unwrap();
        assert!((dt - 12.0).abs() <= 1.5, "dead time {dt}");
    }

    #[test]
    fn false_faults_count_transitions_not_rows() {
        let mut rows = Vec::new();
        for t in 0..100u64 {
            let mut r = ctrl(t, 0.0, 0.0, 0.0, 0.0);
            if (40..60).contains(&t) {
                r.failsafe = Some("degraded".into());
            }
            rows.push(r);
        }
        assert_eq!(false_fault_count(&rows), 1);
    }

    #[test]
    fn sweep_deviation_smooths_noise() {
        let mut rows = Vec::new();
        for k in 0..100u64 {
            rows.push(stim(k * 100, k as f64));
            let mut f = TraceRow::new(k * 100_000 + 50_000, RecordKind::Frame);
            f.id = Some(TPS_POSITION_ID);
            f.pos = Some((k * 10) as u16);
            f.counter = Some((k % 16) as u8);
            f.err = Some(0);
            f.fault_active = Some(0);
            // Alternating +-0.1 noise around a +0.05 bias.
            f.tps_pct_raw = Some(k as f64 + 0.05 + if k % 2 == 0 { 0.1 } else { -0.1 });
            rows.push(f);
        }
        rows.sort_by_key(|r| r.time_us);
        let dev = sweep_deviation_pct(&rows, 9).unwrap();
        assert!(dev < 0.12, "smoothed deviation {dev}");
        assert!(dev > 0.03);
    }
}
