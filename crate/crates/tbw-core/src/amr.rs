//! Physical model of the redundant magnetoresistive angle sensor IC.
//!
//! Each measuring bridge outputs a sine and a cosine channel over twice the
//! mechanical angle. One bridge is read differentially, the second
//! single-ended as the plausibility reference. Faults replace the outputs of
//! exactly one bridge, so redundancy failures can be injected per bridge.

use crate::angle::AngleDeg;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// The two electrically isolated measuring bridges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeId {
    Differential,
    SingleEnded,
}

/// Amplitude, offset and noise bound of one output channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub amplitude_v: f64,
    pub offset_v: f64,
    /// Datasheet noise bound; draws are Gaussian with sigma = noise_v / 3,
    /// truncated at the bound.
    pub noise_v: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            amplitude_v: 2.6,
            offset_v: 0.2,
            noise_v: 5.0e-3,
        }
    }
}

impl ChannelParams {
    pub fn noise_sigma(&self) -> f64 {
        self.noise_v / 3.0
    }
}

/// Per-channel parameters of one bridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeParams {
    pub sin: ChannelParams,
    pub cos: ChannelParams,
}

impl Default for BridgeParams {
    fn default() -> Self {
        Self::differential_nominal()
    }
}

impl BridgeParams {
    /// Manufacturer envelope values of the differentially read bridge.
    pub fn differential_nominal() -> Self {
        BridgeParams {
            sin: ChannelParams::default(),
            cos: ChannelParams::default(),
        }
    }

    /// Single-ended reference bridge, biased to the middle of the 3.3 V rail.
    pub fn single_ended_nominal() -> Self {
        let ch = ChannelParams {
            amplitude_v: 1.0,
            offset_v: 1.65,
            noise_v: 5.0e-3,
        };
        BridgeParams { sin: ch, cos: ch }
    }

    /// Noise-free copy, for calibration sweeps and analytic tests.
    pub fn noiseless(&self) -> Self {
        let mut p = *self;
        p.sin.noise_v = 0.0;
        p.cos.noise_v = 0.0;
        p
    }
}

/// One sine/cosine voltage pair as it leaves a bridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgePair {
    pub sin_v: f64,
    pub cos_v: f64,
    pub bridge: BridgeId,
}

/// Electrical faults injectable on a single bridge. A fault replaces both
/// channel outputs of that bridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeFault {
    ShortToGround,
    ShortToSupply { rail_v: f64 },
    OpenCircuit { float_v: f64 },
}

impl BridgeFault {
    fn level(&self) -> f64 {
        match *self {
            BridgeFault::ShortToGround => 0.0,
            BridgeFault::ShortToSupply { rail_v } => rail_v,
            BridgeFault::OpenCircuit { float_v } => float_v,
        }
    }
}

/// Bridge output voltages for the mechanical angle `alpha`:
/// sin channel A_Y * sin(2a) + O_Y, cos channel A_X * cos(2a) + O_X,
/// each with an independent truncated-Gaussian noise draw.
pub fn bridge_outputs(
    alpha: AngleDeg,
    params: &BridgeParams,
    bridge: BridgeId,
    rng: &mut RngStream,
) -> BridgePair {
    let two_alpha = 2.0 * alpha.rad();
    let sin_v = params.sin.amplitude_v * two_alpha.sin()
        + params.sin.offset_v
        + rng.gauss_bounded(params.sin.noise_sigma(), params.sin.noise_v);
    let cos_v = params.cos.amplitude_v * two_alpha.cos()
        + params.cos.offset_v
        + rng.gauss_bounded(params.cos.noise_sigma(), params.cos.noise_v);
    BridgePair { sin_v, cos_v, bridge }
}

/// One measuring bridge instance with an optional injected fault.
#[derive(Debug, Clone)]
pub struct AmrBridge {
    pub params: BridgeParams,
    pub id: BridgeId,
    pub fault: Option<BridgeFault>,
}

impl AmrBridge {
    pub fn new(params: BridgeParams, id: BridgeId) -> Self {
        AmrBridge {
            params,
            id,
            fault: None,
        }
    }

    pub fn output(&self, alpha: AngleDeg, rng: &mut RngStream) -> BridgePair {
        match self.fault {
            None => bridge_outputs(alpha, &self.params, self.id, rng),
            Some(fault) => {
                // Keep the draw sequence identical with and without fault so
                // injection never perturbs later samples on this stream.
                let _ = bridge_outputs(alpha, &self.params, self.id, rng);
                let level = fault.level();
                BridgePair {
                    sin_v: level,
                    cos_v: level,
                    bridge: self.id,
                }
            }
        }
    }
}

/// Oversampled acquisition of one bridge: both channels are converted
/// `oversampling` times with fresh signal noise per conversion, then
/// averaged. Returns the averaged pair in volts plus a saturation flag set
/// when either channel sat on a converter rail for the whole burst.
pub fn acquire_bridge(
    bridge: &AmrBridge,
    alpha: AngleDeg,
    adc: &crate::adc::AdcConfig,
    rng: &mut RngStream,
) -> (BridgePair, bool) {
    let mut sum_sin = 0u64;
    let mut sum_cos = 0u64;
    for _ in 0..adc.oversampling {
        let pair = bridge.output(alpha, rng);
        sum_sin += adc.quantize_to_code(pair.sin_v) as u64;
        sum_cos += adc.quantize_to_code(pair.cos_v) as u64;
    }
    let n = adc.oversampling as f64;
    let sin_counts = sum_sin as f64 / n;
    let cos_counts = sum_cos as f64 / n;
    let rail = |counts: f64| counts <= 0.0 || counts >= adc.max_code() as f64;
    let pair = BridgePair {
        sin_v: adc.counts_to_volts(sin_counts),
        cos_v: adc.counts_to_volts(cos_counts),
        bridge: bridge.id,
    };
    (pair, rail(sin_counts) || rail(cos_counts))
}
