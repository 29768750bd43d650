//! Throttle position as a percentage with one decimal place.
//!
//! Positions travel the firmware path as integer tenths of a percent
//! (0..=1000), which is exactly the 10 bit quantity carried on the bus.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Highest wire value that decodes to a valid position (100.0%).
pub const WIRE_MAX_VALID: u16 = 1000;
/// Number of payload bits reserved for the position field.
pub const WIRE_POSITION_BITS: u32 = 10;

/// Throttle position in tenths of a percent, 0..=1000.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PercentPosition(u16);

/// Raised when a received 10 bit quantity is outside the valid 0..=1000 range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("wire value {0} exceeds maximum valid position encoding {WIRE_MAX_VALID}")]
pub struct WireDecodeError(pub u16);

impl PercentPosition {
    pub const ZERO: PercentPosition = PercentPosition(0);
    pub const FULL: PercentPosition = PercentPosition(WIRE_MAX_VALID);

    /// Builds a position from integer tenths; `None` if above 100.0%.
    pub const fn from_tenths(tenths: u16) -> Option<Self> {
        if tenths <= WIRE_MAX_VALID {
            Some(PercentPosition(tenths))
        } else {
            None
        }
    }

    /// Rounds a real-valued percentage to tenths, clamping into 0.0..=100.0.
    pub fn from_percent_clamped(pct: f64) -> Self {
        let tenths = (pct * 10.0).round().clamp(0.0, WIRE_MAX_VALID as f64);
        PercentPosition(tenths as u16)
    }

    pub const fn tenths(self) -> u16 {
        self.0
    }

    pub fn as_percent(self) -> f64 {
        self.0 as f64 / 10.0
    }

    /// 10 bit wire encoding; the identity on tenths, 0..=1000 fits in 10 bits.
    pub const fn encode(self) -> u16 {
        self.0
    }

    /// Inverse of [`encode`](Self::encode). Values above 1000 are a decode
    /// fault, which feeds the receiver's plausibility handling.
    pub const fn decode(wire: u16) -> Result<Self, WireDecodeError> {
        if wire <= WIRE_MAX_VALID {
            Ok(PercentPosition(wire))
        } else {
            Err(WireDecodeError(wire))
        }
    }
}

impl fmt::Display for PercentPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}%", self.0 / 10, self.0 % 10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        assert_eq!(PercentPosition::ZERO.encode(), 0);
        assert_eq!(PercentPosition::FULL.encode(), 1000);
        assert_eq!(PercentPosition::from_tenths(453).unwrap().encode(), 453);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(PercentPosition::decode(1000), Ok(PercentPosition::FULL));
        assert_eq!(PercentPosition::decode(1023), Err(WireDecodeError(1023)));
        // 0 on the wire is the idle state.
        assert_eq!(PercentPosition::decode(0), Ok(PercentPosition::ZERO));
    }

    /// Exhaustive over the whole 10 bit space: 0..=1000 round-trips
    /// losslessly, everything above is a decode fault.
    #[test]
    fn exhaustive_wire_round_trip() {
        for wire in 0u16..1024 {
            match PercentPosition::decode(wire) {
                Ok(p) => {
                    assert!(wire <= WIRE_MAX_VALID);
                    assert_eq!(p.encode(), wire);
                }
                Err(WireDecodeError(w)) => {
                    assert_eq!(w, wire);
                    assert!(wire > WIRE_MAX_VALID);
                }
            }
        }
    }

    #[test]
    fn rounding_and_clamping() {
        assert_eq!(PercentPosition::from_percent_clamped(45.34).tenths(), 453);
        assert_eq!(PercentPosition::from_percent_clamped(-2.0).tenths(), 0);
        assert_eq!(PercentPosition::from_percent_clamped(104.0).tenths(), 1000);
        assert_eq!(PercentPosition::from_percent_clamped(100.0).to_string(), "100.0%");
    }
}
