//! Physical angles in degrees and the travel ranges of the mechanism.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Unambiguous measuring range of the magnetoresistive angle sensor.
pub const SENSOR_RANGE_DEG: f64 = 180.0;
/// Effectively usable pulley range after tolerance and error-band margins.
pub const TPS_USABLE_RANGE_DEG: f64 = 148.0;
/// Throttle valve travel between the hard stops.
pub const VALVE_TRAVEL_DEG: f64 = 69.0;

/// A physical shaft or valve angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngleDeg(pub f64);

impl AngleDeg {
    pub const ZERO: AngleDeg = AngleDeg(0.0);

    pub const fn new(degrees: f64) -> Self {
        AngleDeg(degrees)
    }

    pub const fn deg(self) -> f64 {
        self.0
    }

    pub fn rad(self) -> f64 {
        self.0.to_radians()
    }

    pub fn abs(self) -> AngleDeg {
        AngleDeg(self.0.abs())
    }

    pub fn clamp(self, lo: f64, hi: f64) -> AngleDeg {
        AngleDeg(self.0.clamp(lo, hi))
    }
}

impl Add for AngleDeg {
    type Output = AngleDeg;
    fn add(self, rhs: AngleDeg) -> AngleDeg {
        AngleDeg(self.0 + rhs.0)
    }
}

impl Sub for AngleDeg {
    type Output = AngleDeg;
    fn sub(self, rhs: AngleDeg) -> AngleDeg {
        AngleDeg(self.0 - rhs.0)
    }
}

impl Mul<f64> for AngleDeg {
    type Output = AngleDeg;
    fn mul(self, rhs: f64) -> AngleDeg {
        AngleDeg(self.0 * rhs)
    }
}

impl Neg for AngleDeg {
    type Output = AngleDeg;
    fn neg(self) -> AngleDeg {
        AngleDeg(-self.0)
    }
}

impl fmt::Display for AngleDeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}deg", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_constants() {
        assert!(TPS_USABLE_RANGE_DEG < SENSOR_RANGE_DEG);
        assert_eq!(VALVE_TRAVEL_DEG, 69.0);
    }

    #[test]
    fn arithmetic() {
        let a = AngleDeg::new(34.5) + AngleDeg::new(0.5) - AngleDeg::new(5.0);
        assert!((a.deg() - 30.0).abs() < 1e-12);
        assert!(((-a).deg() + 30.0).abs() < 1e-12);
    }
}
