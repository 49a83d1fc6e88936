//! Oracle checks for the curvature machinery: dense finite-difference
//! Hessians, Jacobi eigendecomposition, and the closed-form last-layer block.

mod common;

use common::{fd_hessian_restricted, jacobi_eigenvalues, random_symmetric};
use nrs_core::hessian::{
    hvp, lambda_max, last_layer_hessian, HessianScope, DEFAULT_HVP_STEP,
};
use nrs_core::network::{forward, init_params, Activation, MlpSpec, ParameterVector};
use nrs_core::objective::{cross_entropy, empirical_loss_grad};
use nrs_core::perturb::RngStream;
use nrs_core::tensor::Tensor;

#[test]
fn hvp_matches_dense_finite_difference_hessian() {
    // 2-8-2 net, 42 parameters: materialize H by FD on the gradient-free loss
    let spec = MlpSpec::new(vec![2, 8, 2], Activation::Tanh).unwrap();
    let params = init_params(&spec, 77);
    let dim = params.len();
    assert!(dim <= 200);
    let x = Tensor::from_rows(&[vec![0.4, -0.9], vec![1.1, 0.3], vec![-0.5, -0.2]]).unwrap();
    let labels = vec![0usize, 1, 0];

    let loss = |p: &ParameterVector| {
        let logits = forward(&spec, p, &x).unwrap();
        cross_entropy(&logits, &labels, 0.0).unwrap()
    };
    let dense = fd_hessian_restricted(loss, &params, 0..dim, 2e-4);

    let grad_fn =
        |p: &ParameterVector| empirical_loss_grad(&spec, p, &x, &labels, 0.0).map(|(_, g)| g);
    let mut rng = RngStream::from_seed(3);
    for _ in 0..4 {
        let v: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
        let hv = hvp(
            grad_fn,
            &params,
            &ParameterVector::new(v.clone()),
            DEFAULT_HVP_STEP,
        )
        .unwrap();
        // dense H times v, entrywise
        let mut want = vec![0.0; dim];
        for i in 0..dim {
            want[i] = (0..dim).map(|j| dense[i * dim + j] * v[j]).sum();
        }
        let scale = want.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3);
        for (a, b) in hv.as_slice().iter().zip(&want) {
            assert!((a - b).abs() / scale < 1e-4, "{a} vs {b}");
        }
    }
}

#[test]
fn power_iteration_matches_jacobi_on_random_symmetric_matrices() {
    let mut rng = RngStream::from_seed(2024);
    for trial in 0..10 {
        let n = 20;
        let m = random_symmetric(n, &mut rng);
        let eigs = jacobi_eigenvalues(&m, n);
        let dominant = eigs
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap();
        let r = lambda_max(
            |v| {
                Ok((0..n)
                    .map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum())
                    .collect())
            },
            n,
            1e-10,
            200_000,
            trial as u64,
            HessianScope::FullModel,
        )
        .unwrap();
        let rel = (r.lambda_max - dominant).abs() / dominant.abs();
        assert!(rel < 1e-6, "trial {trial}: {} vs {dominant}", r.lambda_max);
    }
}

#[test]
fn last_layer_block_matches_restricted_finite_differences() {
    // last layer 8 -> 3: 27 parameters, well under the 200-param budget
    let spec = MlpSpec::new(vec![2, 8, 3], Activation::Tanh).unwrap();
    let params = init_params(&spec, 11);
    let x = Tensor::from_rows(&[
        vec![0.3, -0.6],
        vec![-1.0, 0.8],
        vec![0.9, 0.1],
        vec![0.2, 0.4],
    ])
    .unwrap();
    let labels = vec![0usize, 2, 1, 1];

    let h = last_layer_hessian(&spec, &params, &x).unwrap();
    let range = spec.last_layer_range();
    assert_eq!(h.dim, range.len());

    let loss = |p: &ParameterVector| {
        let logits = forward(&spec, p, &x).unwrap();
        cross_entropy(&logits, &labels, 0.0).unwrap()
    };
    let dense = fd_hessian_restricted(loss, &params, range, 2e-4);
    let scale = dense.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
    for (a, b) in h.data.iter().zip(&dense) {
        assert!((a - b).abs() / scale < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn last_layer_lambda_matches_jacobi_on_its_own_block() {
    let spec = MlpSpec::new(vec![2, 6, 2], Activation::Relu).unwrap();
    let params = init_params(&spec, 8);
    let x = Tensor::from_rows(&[vec![1.0, 0.5], vec![-0.7, 0.2], vec![0.1, -1.3]]).unwrap();
    let h = last_layer_hessian(&spec, &params, &x).unwrap();
    let eigs = jacobi_eigenvalues(&h.data, h.dim);
    let top = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let r = lambda_max(
        |v| Ok(h.matvec(v)),
        h.dim,
        1e-10,
        200_000,
        0,
        HessianScope::LastLayer,
    )
    .unwrap();
    assert!(
        (r.lambda_max - top).abs() <= 1e-6 * top.abs().max(1e-8),
        "{} vs {top}",
        r.lambda_max
    );
}
