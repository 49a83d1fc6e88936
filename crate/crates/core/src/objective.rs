//! Empirical loss, model divergence, and the composite smoothing objective.
//!
//! The model divergence between two parameter points is the batch-mean KL
//! divergence between their output distributions, computed in log space from
//! the fused log-softmax. The composite objective is
//!
//! ```text
//! L(theta) = L_S(theta) + alpha * d_p(theta, theta + delta) + L_S(theta + delta)
//! ```
//!
//! with `delta` held constant; both models are evaluated in one graph so a
//! single backward sweep yields the full gradient w.r.t. `theta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    bind_parameters, collect_gradients, forward_bound, offset_model, MlpSpec, ParameterVector,
};
use crate::tensor::{Graph, NodeId, Tensor};

/// Probabilities are floored at this value inside the KL log-difference only,
/// so saturated outputs cannot produce non-finite terms.
const PROB_FLOOR: f64 = 1e-12;

/// Per-term view of the composite loss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `L_S(theta)`.
    pub empirical: f64,
    /// `d_p(theta, theta + delta)`.
    pub divergence: f64,
    /// `L_S(theta + delta)`.
    pub neighbor_empirical: f64,
    pub total: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    /// Breakdown of a run that optimizes only the plain empirical loss.
    pub fn empirical_only(loss: f64) -> Self {
        LossBreakdown {
            empirical: loss,
            divergence: 0.0,
            neighbor_empirical: 0.0,
            total: loss,
            alpha: 0.0,
        }
    }

    /// Breakdown of a run that optimizes only the perturbed model's loss.
    pub fn neighbor_only(loss: f64) -> Self {
        LossBreakdown {
            empirical: 0.0,
            divergence: 0.0,
            neighbor_empirical: loss,
            total: loss,
            alpha: 0.0,
        }
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Smoothed one-hot target matrix: `(1 - s) * onehot + s / K`.
fn smoothed_targets(labels: &[usize], k: usize, smoothing: f64) -> Tensor {
    let b = labels.len();
    let off = smoothing / k as f64;
    let on = 1.0 - smoothing + off;
    let mut data = vec![off; b * k];
    for (r, &l) in labels.iter().enumerate() {
        data[r * k + l] = on;
    }
    Tensor::new(vec![b, k], data).expect("target shape is consistent by construction")
}

/// Mean categorical cross-entropy with optional label smoothing, as a graph
/// node differentiable w.r.t. the logits.
pub fn cross_entropy_node(
    g: &mut Graph,
    logits: NodeId,
    labels: &[usize],
    smoothing: f64,
) -> Result<NodeId> {
    let t = g.value(logits);
    if !t.is_2d() || t.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "cross_entropy: logits {:?} vs {} labels",
            t.shape(),
            labels.len()
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!(
            "cross_entropy: smoothing must be in [0,1), got {smoothing}"
        )));
    }
    let k = t.cols();
    check_labels(labels, k)?;
    let b = labels.len();
    let targets = g.constant(smoothed_targets(labels, k, smoothing));
    let lsm = g.log_softmax(logits)?;
    let weighted = g.mul(targets, lsm)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -1.0 / b as f64))
}

/// Mean cross-entropy of fixed logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize], smoothing: f64) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let node = cross_entropy_node(&mut g, l, labels, smoothing)?;
    g.value(node).item()
}

/// Batch-mean KL divergence between the output distributions induced by two
/// logit tensors, differentiable w.r.t. both arguments.
pub fn model_divergence_node(g: &mut Graph, logits_p: NodeId, logits_q: NodeId) -> Result<NodeId> {
    let (tp, tq) = (g.value(logits_p), g.value(logits_q));
    if tp.shape() != tq.shape() {
        return Err(Error::Shape(format!(
            "model_divergence: {:?} vs {:?}",
            tp.shape(),
            tq.shape()
        )));
    }
    let b = tp.rows();
    let lp = g.log_softmax(logits_p)?;
    let lq = g.log_softmax(logits_q)?;
    let p = g.exp(lp);
    let lp_floored = g.clamp_min(lp, PROB_FLOOR.ln());
    let lq_floored = g.clamp_min(lq, PROB_FLOOR.ln());
    let diff = g.sub(lp_floored, lq_floored)?;
    let terms = g.mul(p, diff)?;
    let total = g.sum(terms);
    Ok(g.scale(total, 1.0 / b as f64))
}

/// Model divergence of fixed logits.
pub fn model_divergence(logits_p: &Tensor, logits_q: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(logits_p.clone());
    let q = g.constant(logits_q.clone());
    let node = model_divergence_node(&mut g, p, q)?;
    g.value(node).item()
}

/// Evaluate the three-term objective and its gradient w.r.t. `params`.
///
/// Both the base model and the `params + delta` neighborhood model run in a
/// single graph; `delta` is a constant, so the neighbor term contributes the
/// empirical gradient evaluated at the shifted point.
pub fn nrs_loss(
    spec: &MlpSpec,
    params: &ParameterVector,
    delta: &ParameterVector,
    inputs: &Tensor,
    labels: &[usize],
    alpha: f64,
    smoothing: f64,
) -> Result<(LossBreakdown, ParameterVector)> {
    if delta.len() != params.len() {
        return Err(Error::Contract(format!(
            "nrs_loss: delta has {} entries, params have {}",
            delta.len(),
            params.len()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(inputs.clone());
    let base = bind_parameters(&mut g, spec, params)?;
    let neighbor = offset_model(&mut g, spec, &base, delta)?;

    let logits = forward_bound(&mut g, spec, &base, x)?;
    let neighbor_logits = forward_bound(&mut g, spec, &neighbor, x)?;

    let empirical = cross_entropy_node(&mut g, logits, labels, smoothing)?;
    let divergence = model_divergence_node(&mut g, logits, neighbor_logits)?;
    let neighbor_empirical = cross_entropy_node(&mut g, neighbor_logits, labels, smoothing)?;

    let scaled_div = g.scale(divergence, alpha);
    let partial = g.add(empirical, scaled_div)?;
    let total = g.add(partial, neighbor_empirical)?;

    let grads = g.backward(total)?;
    let grad = collect_gradients(spec, &base, &grads)?;

    let breakdown = LossBreakdown {
        empirical: g.value(empirical).item()?,
        divergence: g.value(divergence).item()?,
        neighbor_empirical: g.value(neighbor_empirical).item()?,
        total: g.value(total).item()?,
        alpha,
    };
    Ok((breakdown, grad))
}

/// Empirical loss and gradient of a single model (no perturbation terms).
pub fn empirical_loss_grad(
    spec: &MlpSpec,
    params: &ParameterVector,
    inputs: &Tensor,
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, ParameterVector)> {
    let mut g = Graph::new();
    let x = g.constant(inputs.clone());
    let model = bind_parameters(&mut g, spec, params)?;
    let logits = forward_bound(&mut g, spec, &model, x)?;
    let loss = cross_entropy_node(&mut g, logits, labels, smoothing)?;
    let grads = g.backward(loss)?;
    let grad = collect_gradients(spec, &model, &grads)?;
    Ok((g.value(loss).item()?, grad))
}

/// Loss and gradient of the perturbed model alone: `L_S(theta + delta)`,
/// differentiated w.r.t. `theta` with `delta` constant.
pub fn neighbor_loss_grad(
    spec: &MlpSpec,
    params: &ParameterVector,
    delta: &ParameterVector,
    inputs: &Tensor,
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, ParameterVector)> {
    if delta.len() != params.len() {
        return Err(Error::Contract(format!(
            "neighbor_loss_grad: delta has {} entries, params have {}",
            delta.len(),
            params.len()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(inputs.clone());
    let base = bind_parameters(&mut g, spec, params)?;
    let neighbor = offset_model(&mut g, spec, &base, delta)?;
    let logits = forward_bound(&mut g, spec, &neighbor, x)?;
    let loss = cross_entropy_node(&mut g, logits, labels, smoothing)?;
    let grads = g.backward(loss)?;
    let grad = collect_gradients(spec, &base, &grads)?;
    Ok((g.value(loss).item()?, grad))
}

/// Fraction of rows whose argmax matches the label; ties break to the lowest
/// index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if !logits.is_2d() || logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "accuracy: logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    check_labels(labels, logits.cols())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}
