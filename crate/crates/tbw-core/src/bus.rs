//! Simulated CAN segment between the two ECUs.
//!
//! No arbitration or bit stuffing is modeled: at two messages per 20 ms the
//! bus is uncontended and latency is a scalar. Fault plans consume or mangle
//! frames inside their window; everything else is delivered in order.

use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Message id of the position frames from the sensor unit.
pub const TPS_POSITION_ID: u16 = 0x101;
/// Message id of the actuator's diagnostic status frames.
pub const TVA_STATUS_ID: u16 = 0x102;
/// Message id of the actuator's error report to the sensor unit.
pub const TVA_ERROR_REPORT_ID: u16 = 0x103;

/// The two nodes on the segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    Tps,
    Tva,
}

impl NodeId {
    /// Sender of a frame, derived from the message id.
    pub fn sender_of(frame_id: u16) -> NodeId {
        match frame_id {
            TPS_POSITION_ID => NodeId::Tps,
            _ => NodeId::Tva,
        }
    }
}

/// A frame on the segment: 11 bit id, 4 byte payload, emission timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusFrame {
    pub id: u16,
    pub payload: [u8; 4],
    pub timestamp: SimTime,
}

/// Decoded payload fields, shared by all three message ids.
///
/// Wire layout: bytes 0-1 are a little-endian 16 bit word with the 10 bit
/// position in bits 0-9, the 4 bit rolling counter in bits 10-13 and bits
/// 14-15 reserved zero. Byte 2 carries the error flags, byte 3 is reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameFields {
    pub position_wire: u16,
    pub counter: u8,
    pub error: u8,
}

impl FrameFields {
    pub fn encode(&self) -> [u8; 4] {
        debug_assert!(self.position_wire < 1 << 10);
        debug_assert!(self.counter < 1 << 4);
        let word = (self.position_wire & 0x03FF) | ((self.counter as u16 & 0x0F) << 10);
        let [b0, b1] = word.to_le_bytes();
        [b0, b1, self.error, 0]
    }

    pub fn decode(payload: &[u8; 4]) -> FrameFields {
        let word = u16::from_le_bytes([payload[0], payload[1]]);
        FrameFields {
            position_wire: word & 0x03FF,
            counter: ((word >> 10) & 0x0F) as u8,
            error: payload[2],
        }
    }

    pub fn into_frame(self, id: u16, timestamp: SimTime) -> BusFrame {
        BusFrame {
            id,
            payload: self.encode(),
            timestamp,
        }
    }
}

/// Fault classes injectable on the segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusFaultKind {
    /// Frames transmitted inside the window are consumed.
    Drop,
    /// Whole-field corruption: position and counter bits are inverted.
    CorruptPayload,
    /// The counter field repeats the last value seen before the window.
    FreezeCounter,
    /// The sensor node is dead: emits nothing, receives nothing.
    KillNodeTps,
    /// The actuator node is dead: emits nothing, receives nothing.
    KillNodeTva,
}

/// One fault, active inside `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusFaultPlan {
    pub kind: BusFaultKind,
    pub start: SimTime,
    pub end: SimTime,
}

impl BusFaultPlan {
    pub fn active_at(&self, now: SimTime) -> bool {
        now >= self.start && now < self.end
    }
}

/// Outcome of handing a frame to the bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransmitOutcome {
    /// Frame (possibly mangled) reaches the other node at the given time.
    Delivered { at: SimTime, frame: BusFrame, mangled: bool },
    /// A fault consumed the frame.
    Consumed,
}

/// The bus instance owned by a scenario's event loop.
#[derive(Debug, Clone)]
pub struct CanBus {
    pub latency: SimTime,
    pub plans: Vec<BusFaultPlan>,
    frozen_counters: [Option<u8>; 2],
}

impl CanBus {
    pub fn new(latency: SimTime) -> Self {
        CanBus {
            latency,
            plans: Vec::new(),
            frozen_counters: [None, None],
        }
    }

    fn plan_active(&self, kind: BusFaultKind, now: SimTime) -> bool {
        self.plans.iter().any(|p| p.kind == kind && p.active_at(now))
    }

    /// True while the node is not killed by a fault plan.
    pub fn node_alive(&self, node: NodeId, now: SimTime) -> bool {
        let kind = match node {
            NodeId::Tps => BusFaultKind::KillNodeTps,
            NodeId::Tva => BusFaultKind::KillNodeTva,
        };
        !self.plan_active(kind, now)
    }

    pub fn fault_active(&self, now: SimTime) -> bool {
        self.plans.iter().any(|p| p.active_at(now))
    }

    /// Applies fault plans and computes the delivery. Dead senders and dead
    /// receivers both suppress delivery.
    pub fn transmit(&mut self, frame: BusFrame, now: SimTime) -> TransmitOutcome {
        let sender = NodeId::sender_of(frame.id);
        let receiver = match sender {
            NodeId::Tps => NodeId::Tva,
            NodeId::Tva => NodeId::Tps,
        };
        if !self.node_alive(sender, now) || !self.node_alive(receiver, now) {
            return TransmitOutcome::Consumed;
        }
        if self.plan_active(BusFaultKind::Drop, now) {
            return TransmitOutcome::Consumed;
        }

        let mut fields = FrameFields::decode(&frame.payload);
        let mut mangled = false;
        let slot = match sender {
            NodeId::Tps => 0,
            NodeId::Tva => 1,
        };
        if self.plan_active(BusFaultKind::FreezeCounter, now) {
            let frozen = *self.frozen_counters[slot].get_or_insert(fields.counter);
            if frozen != fields.counter {
                fields.counter = frozen;
                mangled = true;
            }
        } else {
            self.frozen_counters[slot] = None;
        }
        if self.plan_active(BusFaultKind::CorruptPayload, now) {
            fields.position_wire ^= 0x03FF;
            fields.counter ^= 0x0F;
            mangled = true;
        }

        let delivered = if mangled {
            fields.into_frame(frame.id, frame.timestamp)
        } else {
            frame
        };
        TransmitOutcome::Delivered {
            at: now + self.latency.micros(),
            frame: delivered,
            mangled,
        }
    }
}

/// Receiver-side freshness classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    /// No frame inside the staleness window.
    Stale,
    /// The rolling counter repeated or skipped beyond the tolerated single
    /// dropped frame.
    CounterError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("freshness monitor saw no frame yet")]
pub struct NoFrameSeen;

/// Tracks the rolling counter and arrival times of one message id.
///
/// One counter skip (a single dropped frame) is tolerated; a repeat or a
/// larger skip is an anomaly and two consecutive anomalies latch a counter
/// error. The latch clears after two consecutive clean increments.
#[derive(Debug, Clone)]
pub struct FreshnessMonitor {
    staleness_window: SimTime,
    startup_grace: SimTime,
    power_on: SimTime,
    last_counter: Option<u8>,
    last_seen: Option<SimTime>,
    pending_anomaly: bool,
    counter_error: bool,
    clean_streak: u32,
}

impl FreshnessMonitor {
    pub fn new(staleness_window: SimTime, startup_grace: SimTime, power_on: SimTime) -> Self {
        FreshnessMonitor {
            staleness_window,
            startup_grace,
            power_on,
            last_counter: None,
            last_seen: None,
            pending_anomaly: false,
            counter_error: false,
            clean_streak: 0,
        }
    }

    pub fn on_frame(&mut self, counter: u8, now: SimTime) {
        if let Some(last) = self.last_counter {
            let delta = (16 + counter as i16 - last as i16) as u8 % 16;
            match delta {
                1 | 2 => {
                    // 2 covers exactly one dropped frame.
                    self.pending_anomaly = false;
                    self.clean_streak += 1;
                    if self.clean_streak >= 2 {
                        self.counter_error = false;
                    }
                }
                _ => {
                    self.clean_streak = 0;
                    if self.pending_anomaly {
                        self.counter_error = true;
                    }
                    self.pending_anomaly = true;
                }
            }
        }
        self.last_counter = Some(counter);
        self.last_seen = Some(now);
    }

    pub fn check(&self, now: SimTime) -> Freshness {
        if self.counter_error {
            return Freshness::CounterError;
        }
        let reference = match self.last_seen {
            Some(t) => t,
            None => {
                // Nothing received yet: only stale once the startup grace
                // period has elapsed.
                return if now.saturating_sub(self.power_on) > self.startup_grace {
                    Freshness::Stale
                } else {
                    Freshness::Fresh
                };
            }
        };
        if now.saturating_sub(reference) > self.staleness_window {
            Freshness::Stale
        } else {
            Freshness::Fresh
        }
    }

    pub fn last_seen(&self) -> Option<SimTime> {
        self.last_seen
    }
}
