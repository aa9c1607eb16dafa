use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ProtocolConfig;
use crate::error::{Error, Result};
use crate::model::HumanAction;

/// Handle force sampled at a fixed rate; `go_index` is the first sample at
/// or after the Go signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTrace {
    pub sample_rate_hz: f64,
    pub go_index: usize,
    pub samples: Vec<f64>,
}

impl ForceTrace {
    /// A trace holding `newtons` for `seconds` before Go.
    pub fn constant(newtons: f64, seconds: f64, sample_rate_hz: f64) -> Self {
        let n = (seconds * sample_rate_hz).round() as usize;
        ForceTrace { sample_rate_hz, go_index: n, samples: vec![newtons; n] }
    }
}

/// HA2 iff the mean force over the pre-Go window is strictly above the
/// threshold.
pub fn classify_action(trace: &ForceTrace, config: &ProtocolConfig) -> Result<HumanAction> {
    let window = (config.pre_go_window_s * trace.sample_rate_hz).round() as usize;
    let available = trace.go_index.min(trace.samples.len());
    if window == 0 || available < window {
        return Err(Error::TraceTooShort {
            available_s: available as f64 / trace.sample_rate_hz,
            needed_s: config.pre_go_window_s,
        });
    }
    let slice = &trace.samples[available - window..available];
    let mean = slice.iter().sum::<f64>() / window as f64;
    Ok(if mean > config.force_threshold_n { HumanAction::Compensate } else { HumanAction::Relax })
}

/// Disturbance force for a participant whose sustainable hold is
/// `max_sustained_force` newtons.
pub fn calibrate_disturbance(max_sustained_force: f64, config: &ProtocolConfig) -> Result<f64> {
    if !(max_sustained_force > 0.0 && max_sustained_force.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "maximum sustained force must be positive, got {max_sustained_force}"
        )));
    }
    Ok(config.calibration_factor * max_sustained_force)
}

/// Synthetic trace for `action`: half a second of lead-in, the pre-Go
/// window, then the movement window. Compensation holds 1.5x the threshold,
/// relaxing stays near zero; both carry Gaussian noise.
pub fn synthesize_force_trace(action: HumanAction, config: &ProtocolConfig, seed: u64) -> ForceTrace {
    let rate = config.force_sample_rate_hz;
    let pre = ((0.5 + config.pre_go_window_s) * rate).round() as usize;
    let post = (config.movement_window_s * rate).round() as usize;
    let threshold = config.force_threshold_n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1 * threshold.max(1.0)).expect("finite sd");

    let samples = (0..pre + post)
        .map(|i| {
            let e = noise.sample(&mut rng);
            match action {
                HumanAction::Compensate if i < pre => 1.5 * threshold + e,
                // After Go the hand moves; the reading falls back toward zero.
                HumanAction::Compensate => 0.5 * threshold + e,
                HumanAction::Relax => 0.05 * e.abs(),
            }
        })
        .collect();
    ForceTrace { sample_rate_hz: rate, go_index: pre, samples }
}
