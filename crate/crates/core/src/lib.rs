//! Desk-scale laboratory for flat-minima regularization by neighborhood
//! region smoothing.
//!
//! The crate trains small MLP classifiers under three strategies — plain
//! empirical loss, random-perturbation training, and the three-term smoothing
//! objective (empirical loss + KL model divergence to a perturbed twin + the
//! twin's empirical loss) — on a simulated data-parallel loop with unique
//! per-worker randomness, and verifies curvature claims through Hessian
//! spectral analysis.
//!
//! Module map:
//! - [`tensor`]: dense `f64` tensors and the reverse-mode tape.
//! - [`network`]: MLP specs, flat parameter vectors, checkpoints.
//! - [`objective`]: cross-entropy, model divergence, the composite loss.
//! - [`perturb`]: keyed random streams and ball perturbation sampling.
//! - [`trainer`]: sharded data-parallel SGD with momentum and cosine schedule.
//! - [`hessian`]: Hessian-vector products, power iteration, last-layer block.
//! - [`data`]: synthetic generators, IDX parsing, batching.

pub mod data;
pub mod error;
pub mod hessian;
pub mod network;
pub mod objective;
pub mod perturb;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
