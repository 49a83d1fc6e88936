//! Perturbation sampling in the epsilon-ball with reproducible per-worker
//! randomness.
//!
//! Streams are keyed by `(global_seed, step, worker_id)` rather than split
//! sequentially, so worker scheduling order can never change the draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ParameterVector;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; bijective on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based pseudo-random stream (SplitMix64 over a mixed key).
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    gauss_cache: Option<f64>,
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        RngStream {
            state: mix64(seed),
            gauss_cache: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64) / DEN
    }

    /// Standard normal draw (Box-Muller, second value cached).
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.gauss_cache.take() {
            return v;
        }
        // u1 in (0, 1] to keep ln finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gauss_cache = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Unique deterministic stream for one worker at one step.
///
/// The key chains the SplitMix64 finalizer over the three components, so any
/// change to `global_seed`, `step`, or `worker_id` yields an unrelated stream.
pub fn worker_rng(global_seed: u64, step: u64, worker_id: u64) -> RngStream {
    let mut h = mix64(global_seed);
    h = mix64(h ^ step);
    h = mix64(h ^ worker_id);
    RngStream {
        state: h,
        gauss_cache: None,
    }
}

/// Draw a perturbation uniformly on the sphere of radius `epsilon`.
///
/// A Gaussian direction rescaled to norm exactly `epsilon`; see
/// [`sample_perturbation_in_ball`] for interior sampling.
pub fn sample_perturbation(dim: usize, epsilon: f64, rng: &mut RngStream) -> Result<ParameterVector> {
    sample_with_radius(dim, epsilon, rng, false)
}

/// Draw uniformly from the interior of the ball: radius `epsilon * u^(1/dim)`.
pub fn sample_perturbation_in_ball(
    dim: usize,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<ParameterVector> {
    sample_with_radius(dim, epsilon, rng, true)
}

fn sample_with_radius(
    dim: usize,
    epsilon: f64,
    rng: &mut RngStream,
    ball_interior: bool,
) -> Result<ParameterVector> {
    if dim == 0 {
        return Err(Error::Contract("sample_perturbation: dim must be >= 1".into()));
    }
    if epsilon < 0.0 {
        return Err(Error::Config(format!(
            "sample_perturbation: epsilon must be >= 0, got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(ParameterVector::zeros(dim));
    }
    let mut v: Vec<f64>;
    let mut norm;
    loop {
        v = (0..dim).map(|_| rng.next_gaussian()).collect();
        norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            break;
        }
    }
    let radius = if ball_interior {
        epsilon * rng.next_f64().powf(1.0 / dim as f64)
    } else {
        epsilon
    };
    let s = radius / norm;
    for x in &mut v {
        *x *= s;
    }
    Ok(ParameterVector::new(v))
}

/// How the raw perturbation is rescaled against the current parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `delta / ||theta||_2` — the literal published rule; the default.
    #[default]
    Divide,
    /// `delta * ||theta||_2` — the scale-adaptive alternative.
    Multiply,
    /// Use `delta` as drawn.
    None,
}

/// Rescale `delta` by the parameter norm: `delta / ||theta||_2`.
pub fn normalize_perturbation(
    delta: &ParameterVector,
    theta: &ParameterVector,
) -> Result<ParameterVector> {
    apply_scale_mode(delta, theta, ScaleMode::Divide)
}

/// [`normalize_perturbation`] generalized over [`ScaleMode`].
pub fn apply_scale_mode(
    delta: &ParameterVector,
    theta: &ParameterVector,
    mode: ScaleMode,
) -> Result<ParameterVector> {
    if delta.len() != theta.len() {
        return Err(Error::Contract(format!(
            "normalize_perturbation: delta has {} entries, theta has {}",
            delta.len(),
            theta.len()
        )));
    }
    match mode {
        ScaleMode::None => Ok(delta.clone()),
        ScaleMode::Divide | ScaleMode::Multiply => {
            let norm = crate::network::l2_norm(theta);
            if norm == 0.0 {
                return Err(Error::Numeric(
                    "normalize_perturbation: ||theta||_2 is zero".into(),
                ));
            }
            let s = match mode {
                ScaleMode::Divide => 1.0 / norm,
                _ => norm,
            };
            Ok(delta.scaled(s))
        }
    }
}
