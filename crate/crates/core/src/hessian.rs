//! Curvature verification: largest Hessian eigenvalue via power iteration on
//! Hessian-vector products, plus the closed-form last-layer Hessian block of
//! the softmax cross-entropy loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward_with_penultimate, l2_norm, MlpSpec, ParameterVector};
use crate::perturb::RngStream;
use crate::tensor::Tensor;

/// Central-difference step for Hessian-vector products. At 64-bit this
/// balances truncation (O(h^2)) against gradient roundoff (O(eps/h)).
pub const DEFAULT_HVP_STEP: f64 = 1e-4;

/// Largest matrix side for the dense last-layer block before the caller is
/// redirected to the hvp route.
pub const DEFAULT_MAX_LAST_LAYER_DIM: usize = 5000;

/// Which parameter block the spectrum describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianScope {
    FullModel,
    LastLayer,
}

impl std::fmt::Display for HessianScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HessianScope::FullModel => "full_model",
            HessianScope::LastLayer => "last_layer",
        })
    }
}

/// Outcome of a power-iteration run.
///
/// `lambda_max` is the dominant (largest-magnitude) eigenvalue as a signed
/// Rayleigh quotient. A run converged iff `iterations < max_iter` was reached
/// with both the estimate stable and `residual <= tol * max(|lambda|, 1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub lambda_max: f64,
    pub iterations: usize,
    /// `||H v - lambda v||_2` for the final unit vector `v`.
    pub residual: f64,
    pub scope: HessianScope,
}

/// Hessian-vector product by central differences of the gradient:
/// `[grad(theta + h*u) - grad(theta - h*u)] / (2h) * ||v||` with `u = v/||v||`.
pub fn hvp<F>(grad_fn: F, params: &ParameterVector, v: &ParameterVector, h: f64) -> Result<ParameterVector>
where
    F: Fn(&ParameterVector) -> Result<ParameterVector>,
{
    if v.len() != params.len() {
        return Err(Error::Contract(format!(
            "hvp: v has {} entries, params have {}",
            v.len(),
            params.len()
        )));
    }
    if h <= 0.0 {
        return Err(Error::Config(format!("hvp: step h must be > 0, got {h}")));
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(Error::Contract("hvp: v must be nonzero".into()));
    }
    let unit = v.scaled(1.0 / norm);
    let plus = grad_fn(&params.axpy(h, &unit))?;
    let minus = grad_fn(&params.axpy(-h, &unit))?;
    if plus.len() != params.len() || minus.len() != params.len() {
        return Err(Error::Contract("hvp: grad_fn changed dimensionality".into()));
    }
    let scale = norm / (2.0 * h);
    let out: Vec<f64> = plus
        .as_slice()
        .iter()
        .zip(minus.as_slice())
        .map(|(p, m)| (p - m) * scale)
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("hvp: non-finite gradient difference".into()));
    }
    Ok(ParameterVector::new(out))
}

/// Power iteration for the dominant eigenvalue of a symmetric operator.
///
/// Starts from a seeded random unit vector; reports the Rayleigh quotient.
/// Converged when successive estimates differ by less than `tol` relatively
/// and the residual drops below `tol * max(|lambda|, 1)`; hitting `max_iter`
/// first is flagged by `iterations == max_iter`.
pub fn lambda_max<F>(
    op: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
    scope: HessianScope,
) -> Result<SpectrumResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 {
        return Err(Error::Contract("lambda_max: dim must be >= 1".into()));
    }
    if tol <= 0.0 {
        return Err(Error::Config(format!("lambda_max: tol must be > 0, got {tol}")));
    }
    let mut rng = RngStream::from_seed(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
    normalize(&mut v);

    let mut lambda = 0.0;
    let mut residual = 0.0;
    for it in 1..=max_iter {
        let w = op(&v)?;
        if w.len() != dim {
            return Err(Error::Contract("lambda_max: operator changed dimension".into()));
        }
        let w_norm = norm2(&w);
        // Rayleigh quotient with unit v
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        residual = v
            .iter()
            .zip(&w)
            .map(|(vi, wi)| (wi - rq * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if w_norm == 0.0 {
            // operator annihilated the iterate: zero spectrum along this path
            return Ok(SpectrumResult {
                lambda_max: 0.0,
                iterations: it,
                residual: 0.0,
                scope,
            });
        }
        let stable = (rq - lambda).abs() <= tol * rq.abs().max(1e-300);
        lambda = rq;
        if stable && residual <= tol * rq.abs().max(1.0) {
            return Ok(SpectrumResult {
                lambda_max: lambda,
                iterations: it,
                residual,
                scope,
            });
        }
        v = w;
        let inv = 1.0 / w_norm;
        for x in &mut v {
            *x *= inv;
        }
    }
    Ok(SpectrumResult {
        lambda_max: lambda,
        iterations: max_iter,
        residual,
        scope,
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    } else {
        v[0] = 1.0;
    }
}

/// Dense symmetric matrix in row-major order.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }
}

/// Exact last-layer Hessian block of the mean softmax cross-entropy loss.
///
/// For each sample the block is `(diag(p) - p p^T)` Kronecker the outer
/// product of the augmented penultimate activation `[h; 1]`; entries are laid
/// out in the canonical parameter order (weights row-major, then bias), so
/// the matrix lines up with finite differences over the flat layout.
pub fn last_layer_hessian(
    spec: &MlpSpec,
    params: &ParameterVector,
    inputs: &Tensor,
) -> Result<DenseMatrix> {
    last_layer_hessian_with_limit(spec, params, inputs, DEFAULT_MAX_LAST_LAYER_DIM)
}

pub fn last_layer_hessian_with_limit(
    spec: &MlpSpec,
    params: &ParameterVector,
    inputs: &Tensor,
    max_dim: usize,
) -> Result<DenseMatrix> {
    if !inputs.is_2d() || inputs.rows() == 0 {
        return Err(Error::Data("last_layer_hessian: empty batch".into()));
    }
    let k = spec.output_dim();
    let d_h = spec.layer_widths[spec.layer_widths.len() - 2];
    let dim = k * (d_h + 1);
    if dim > max_dim {
        return Err(Error::Scope(format!(
            "last-layer block is {dim} x {dim} (> {max_dim}); use the hvp-based full-model analysis instead"
        )));
    }
    let (logits, penult) = forward_with_penultimate(spec, params, inputs)?;
    let b = inputs.rows();
    let mut h = vec![0.0; dim * dim];
    let inv_b = 1.0 / b as f64;

    // flat index -> (class column c, augmented activation row r); r == d_h is the bias slot
    let coords: Vec<(usize, usize)> = (0..dim)
        .map(|u| {
            if u < d_h * k {
                (u % k, u / k)
            } else {
                (u - d_h * k, d_h)
            }
        })
        .collect();

    let mut p = vec![0.0; k];
    let mut aug = vec![0.0; d_h + 1];
    for s in 0..b {
        let row = logits.row(s);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &x) in row.iter().enumerate() {
            p[j] = (x - m).exp();
            z += p[j];
        }
        for x in &mut p {
            *x /= z;
        }
        aug[..d_h].copy_from_slice(penult.row(s));
        aug[d_h] = 1.0;

        for u in 0..dim {
            let (cu, ru) = coords[u];
            let base = p[cu] * aug[ru] * inv_b;
            if base == 0.0 {
                continue;
            }
            for v in u..dim {
                let (cv, rv) = coords[v];
                let a = if cu == cv { 1.0 - p[cv] } else { -p[cv] };
                let val = base * a * aug[rv];
                h[u * dim + v] += val;
                if u != v {
                    h[v * dim + u] += val;
                }
            }
        }
    }
    Ok(DenseMatrix { dim, data: h })
}

/// Dominant eigenvalue of the last-layer block via power iteration on the
/// dense matvec.
pub fn last_layer_lambda_max(
    spec: &MlpSpec,
    params: &ParameterVector,
    inputs: &Tensor,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SpectrumResult> {
    let h = last_layer_hessian(spec, params, inputs)?;
    lambda_max(
        |v| Ok(h.matvec(v)),
        h.dim,
        tol,
        max_iter,
        seed,
        HessianScope::LastLayer,
    )
}

/// Dominant eigenvalue of the full-model training-loss Hessian through the
/// finite-difference hvp route.
pub fn full_model_lambda_max(
    spec: &MlpSpec,
    params: &ParameterVector,
    inputs: &Tensor,
    labels: &[usize],
    smoothing: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SpectrumResult> {
    let grad_fn = |p: &ParameterVector| {
        crate::objective::empirical_loss_grad(spec, p, inputs, labels, smoothing).map(|(_, g)| g)
    };
    let dim = params.len();
    lambda_max(
        |v| {
            hvp(grad_fn, params, &ParameterVector::new(v.to_vec()), DEFAULT_HVP_STEP)
                .map(|p| p.into_vec())
        },
        dim,
        tol,
        max_iter,
        seed,
        HessianScope::FullModel,
    )
}
