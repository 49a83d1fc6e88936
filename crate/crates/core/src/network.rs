//! Multilayer perceptrons over a flat parameter vector.
//!
//! Parameters live in one canonical flat layout (per layer: weight matrix
//! row-major, then bias) so perturbation sampling and norm computation are
//! single-pass; per-layer views are derived on the fly, never stored.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::RngStream;
use crate::tensor::{Graph, GradientMap, NodeId, Tensor};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Architecture description: layer widths from input dim to class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "MlpSpec needs at least [input, output] widths, got {layer_widths:?}"
            )));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "MlpSpec widths must be positive, got {layer_widths:?}"
            )));
        }
        if *layer_widths.last().unwrap() < 2 {
            return Err(Error::Config(
                "MlpSpec output width (class count) must be >= 2".into(),
            ));
        }
        Ok(MlpSpec {
            layer_widths,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_widths.windows(2).map(|w| (w[0], w[1]))
    }

    /// Total parameter count: sum of `w_l * w_{l+1} + w_{l+1}`.
    pub fn num_params(&self) -> usize {
        self.layer_dims().map(|(i, o)| i * o + o).sum()
    }

    /// Flat range of the last layer's weights and bias.
    pub fn last_layer_range(&self) -> std::ops::Range<usize> {
        let total = self.num_params();
        let (i, o) = self.layer_dims().last().unwrap();
        total - (i * o + o)..total
    }
}

/// Flat view of all model weights: the domain of parameters, perturbations,
/// gradients and momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParameterVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, s: f64) -> ParameterVector {
        ParameterVector(self.0.iter().map(|x| s * x).collect())
    }

    /// Elementwise `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ParameterVector) -> ParameterVector {
        debug_assert_eq!(self.len(), other.len());
        ParameterVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    pub fn add(&self, other: &ParameterVector) -> ParameterVector {
        self.axpy(1.0, other)
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Euclidean norm of the flat vector.
pub fn l2_norm(params: &ParameterVector) -> f64 {
    params.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// He-initialized parameters: weights ~ N(0, 2/fan_in), biases zero.
/// Deterministic for a given seed.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParameterVector {
    let mut rng = RngStream::from_seed(seed);
    let mut values = Vec::with_capacity(spec.num_params());
    for (fan_in, fan_out) in spec.layer_dims() {
        let sd = (2.0 / fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(sd * rng.next_gaussian());
        }
        values.extend(std::iter::repeat(0.0).take(fan_out));
    }
    ParameterVector(values)
}

/// Node ids of one model's per-layer weights and biases inside a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<(NodeId, NodeId)>,
}

fn layer_tensors(spec: &MlpSpec, params: &ParameterVector) -> Result<Vec<(Tensor, Tensor)>> {
    if params.len() != spec.num_params() {
        return Err(Error::Contract(format!(
            "parameter vector has {} entries, spec wants {}",
            params.len(),
            spec.num_params()
        )));
    }
    let mut out = Vec::with_capacity(spec.num_layers());
    let mut off = 0;
    for (fan_in, fan_out) in spec.layer_dims() {
        let w = Tensor::new(
            vec![fan_in, fan_out],
            params.as_slice()[off..off + fan_in * fan_out].to_vec(),
        )?;
        off += fan_in * fan_out;
        let b = Tensor::new(vec![fan_out], params.as_slice()[off..off + fan_out].to_vec())?;
        off += fan_out;
        out.push((w, b));
    }
    Ok(out)
}

/// Register `params` as differentiation roots in `g`.
pub fn bind_parameters(g: &mut Graph, spec: &MlpSpec, params: &ParameterVector) -> Result<BoundMlp> {
    let layers = layer_tensors(spec, params)?
        .into_iter()
        .map(|(w, b)| (g.parameter(w), g.parameter(b)))
        .collect();
    Ok(BoundMlp { layers })
}

/// Build the neighborhood model `base + delta` with `delta` held constant,
/// so gradients w.r.t. the sum flow back to `base` unchanged.
pub fn offset_model(
    g: &mut Graph,
    spec: &MlpSpec,
    base: &BoundMlp,
    delta: &ParameterVector,
) -> Result<BoundMlp> {
    let delta_layers = layer_tensors(spec, delta)?;
    let mut layers = Vec::with_capacity(base.layers.len());
    for ((w_id, b_id), (dw, db)) in base.layers.iter().zip(delta_layers) {
        let dw_id = g.constant(dw);
        let db_id = g.constant(db);
        layers.push((g.add(*w_id, dw_id)?, g.add(*b_id, db_id)?));
    }
    Ok(BoundMlp { layers })
}

/// Forward pass through bound layer nodes; returns the logits node.
pub fn forward_bound(g: &mut Graph, spec: &MlpSpec, model: &BoundMlp, x: NodeId) -> Result<NodeId> {
    if g.value(x).shape().len() != 2 || g.value(x).cols() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "forward: input {:?} vs spec input dim [{}]",
            g.value(x).shape(),
            spec.input_dim()
        )));
    }
    let mut h = x;
    let n_layers = model.layers.len();
    for (l, (w, b)) in model.layers.iter().enumerate() {
        let z = g.matmul(h, *w)?;
        let z = g.add_row(z, *b)?;
        h = if l + 1 < n_layers {
            match spec.activation {
                Activation::Relu => g.relu(z),
                Activation::Tanh => g.tanh(z),
            }
        } else {
            z
        };
    }
    Ok(h)
}

/// Pure forward pass: logits of the MLP for a `[batch, input_dim]` input.
pub fn forward(spec: &MlpSpec, params: &ParameterVector, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x_id = g.constant(x.clone());
    let model = bind_parameters(&mut g, spec, params)?;
    let logits = forward_bound(&mut g, spec, &model, x_id)?;
    Ok(g.value(logits).clone())
}

/// Forward pass that also returns the penultimate activations (the input to
/// the last layer), needed for the closed-form last-layer Hessian.
pub fn forward_with_penultimate(
    spec: &MlpSpec,
    params: &ParameterVector,
    x: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let x_id = g.constant(x.clone());
    let model = bind_parameters(&mut g, spec, params)?;
    if g.value(x_id).shape().len() != 2 || g.value(x_id).cols() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "forward: input {:?} vs spec input dim [{}]",
            g.value(x_id).shape(),
            spec.input_dim()
        )));
    }
    let mut h = x_id;
    let n_layers = model.layers.len();
    for (l, (w, b)) in model.layers.iter().enumerate().take(n_layers - 1) {
        let z = g.matmul(h, *w)?;
        let z = g.add_row(z, *b)?;
        h = match spec.activation {
            Activation::Relu => g.relu(z),
            Activation::Tanh => g.tanh(z),
        };
        let _ = l;
    }
    let penultimate = g.value(h).clone();
    let (w, b) = model.layers[n_layers - 1];
    let z = g.matmul(h, w)?;
    let logits = g.add_row(z, b)?;
    Ok((g.value(logits).clone(), penultimate))
}

/// Gather per-layer gradients back into the canonical flat layout.
pub fn collect_gradients(
    spec: &MlpSpec,
    model: &BoundMlp,
    grads: &GradientMap,
) -> Result<ParameterVector> {
    let mut out = Vec::with_capacity(spec.num_params());
    for (w_id, b_id) in &model.layers {
        for id in [w_id, b_id] {
            let g = grads.wrt(*id).ok_or_else(|| {
                Error::Contract("collect_gradients: node is not a parameter of this graph".into())
            })?;
            out.extend_from_slice(g.data());
        }
    }
    Ok(ParameterVector(out))
}

// ---------------------------------------------------------------------------
// Checkpoint format (see README for the byte layout):
//   magic "MLPC" | version u32 LE | activation u8 | width count u32 LE |
//   widths u32 LE each | parameter values f64 LE each
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"MLPC";
const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint_bytes(spec: &MlpSpec, params: &ParameterVector) -> Result<Vec<u8>> {
    if params.len() != spec.num_params() {
        return Err(Error::Contract(format!(
            "checkpoint: {} values for a spec of {} parameters",
            params.len(),
            spec.num_params()
        )));
    }
    let mut out = Vec::with_capacity(13 + 4 * spec.layer_widths.len() + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(match spec.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    out.extend_from_slice(&(spec.layer_widths.len() as u32).to_le_bytes());
    for &w in &spec.layer_widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<(MlpSpec, ParameterVector)> {
    let err = |offset: usize, message: &str| Error::Parse {
        offset,
        message: message.into(),
    };
    if bytes.len() < 4 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(err(0, "bad checkpoint magic"));
    }
    if bytes.len() < 8 {
        return Err(err(bytes.len(), "truncated version field"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(err(4, "unsupported checkpoint version"));
    }
    if bytes.len() < 13 {
        return Err(err(bytes.len(), "truncated header"));
    }
    let activation = match bytes[8] {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        _ => return Err(err(8, "unknown activation tag")),
    };
    let n_widths = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let mut off = 13;
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        if bytes.len() < off + 4 {
            return Err(err(bytes.len(), "truncated width table"));
        }
        widths.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
        off += 4;
    }
    let spec = MlpSpec::new(widths, activation)?;
    let expected = spec.num_params();
    if bytes.len() != off + 8 * expected {
        return Err(err(
            bytes.len().min(off + 8 * expected),
            "parameter payload length mismatch",
        ));
    }
    let mut values = Vec::with_capacity(expected);
    for _ in 0..expected {
        values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        off += 8;
    }
    Ok((spec, ParameterVector(values)))
}

pub fn save_checkpoint(path: &Path, spec: &MlpSpec, params: &ParameterVector) -> Result<()> {
    let bytes = write_checkpoint_bytes(spec, params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpSpec, ParameterVector)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint_bytes(&bytes)
}
