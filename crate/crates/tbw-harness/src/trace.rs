//! Trace recording: one fixed-schema CSV per run.
//!
//! Every metric is a pure function of these rows, so recomputing a report
//! from an exported file reproduces it exactly. The column set is documented
//! in `docs/trace-format.md`.

use serde::{Deserialize, Serialize};
use std::io;
use std::path::Path;
use thiserror::Error;

/// Row type discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// A frame on the bus, at delivery time (consumed frames at emission
    /// time with `fault_active` set).
    Frame,
    /// One 1 kHz control cycle of the actuator node.
    Ctrl,
    /// One 100 us plant integration step (opt-in).
    Plant,
    /// Stimulus value change.
    Stim,
    /// Point annotation, e.g. fault activation.
    Mark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_us: u64,
    pub record: RecordKind,
    // Frame rows.
    pub id: Option<u16>,
    pub pos: Option<u16>,
    pub counter: Option<u8>,
    pub err: Option<u8>,
    pub fault_active: Option<u8>,
    /// Unquantized sensor-node decode, the measurement-mode readout.
    pub tps_pct_raw: Option<f64>,
    // Stimulus reference, also carried on ctrl rows.
    pub stimulus_pct: Option<f64>,
    // Ctrl rows.
    pub w_pct: Option<f64>,
    pub y_pct: Option<f64>,
    pub u_steps_s: Option<f64>,
    pub enabled: Option<u8>,
    pub energy_save: Option<u8>,
    pub failsafe: Option<String>,
    pub cause: Option<String>,
    pub cal_phase: Option<String>,
    pub valve_pct: Option<f64>,
    pub valve_deg: Option<f64>,
    pub rpm: Option<f64>,
    pub ignition: Option<u8>,
    pub step_loss_overload: Option<u64>,
    pub step_loss_stall: Option<u64>,
    // Plant rows.
    pub motor_deg: Option<f64>,
    pub dvac_ncm: Option<f64>,
    // Mark rows.
    pub mark: Option<String>,
}

impl TraceRow {
    pub fn new(time_us: u64, record: RecordKind) -> Self {
        TraceRow {
            time_us,
            record,
            id: None,
            pos: None,
            counter: None,
            err: None,
            fault_active: None,
            tps_pct_raw: None,
            stimulus_pct: None,
            w_pct: None,
            y_pct: None,
            u_steps_s: None,
            enabled: None,
            energy_save: None,
            failsafe: None,
            cause: None,
            cal_phase: None,
            valve_pct: None,
            valve_deg: None,
            rpm: None,
            ignition: None,
            step_loss_overload: None,
            step_loss_stall: None,
            motor_deg: None,
            dvac_ncm: None,
            mark: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io error: {0}")]
    Io(#[from] io::Error),
    #[error("trace format error: {0}")]
    Csv(#[from] csv::Error),
}

/// Writes the full trace; byte-identical for identical runs.
pub fn write_csv(path: &Path, rows: &[TraceRow]) -> Result<(), TraceError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<TraceRow>, TraceError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_lossless() {
        let mut a = TraceRow::new(12_345, RecordKind::Ctrl);
        a.w_pct = Some(45.3);
        a.y_pct = Some(44.9);
        a.failsafe = Some("ok".into());
        a.valve_pct = Some(44.871_234_567);
        let mut b = TraceRow::new(20_000, RecordKind::Frame);
        b.id = Some(0x101);
        b.pos = Some(453);
        b.counter = Some(7);
        b.err = Some(0);
        b.fault_active = Some(0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_csv(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, vec![a, b]);
    }
}
