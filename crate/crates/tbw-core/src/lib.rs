//! Deterministic simulation of a low-cost two-wheeler throttle-by-wire
//! system: the magnetoresistive throttle position sensor ECU, the stepper
//! driven throttle valve actuator ECU, the CAN segment between them and the
//! electromechanical plant they act on.
//!
//! Everything is built for bit-identical replay: integer-microsecond event
//! scheduling, named random streams and integer tenths for every position
//! that crosses a firmware boundary. Real-valued math lives only inside the
//! sensor and plant physics.

pub mod adc;
pub mod amr;
pub mod angle;
pub mod bus;
pub mod percent;
pub mod plant;
pub mod rng;
pub mod sched;
pub mod time;
pub mod tps;
pub mod tva;

pub use angle::AngleDeg;
pub use percent::PercentPosition;
pub use rng::RngStream;
pub use sched::Scheduler;
pub use time::SimTime;
