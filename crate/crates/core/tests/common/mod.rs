//! Shared oracles for the integration suites. These stay independent of the
//! implementation paths they check: finite differences only ever call the
//! loss value, and the Jacobi solver is a plain textbook sweep.

use nrs_core::network::ParameterVector;
use nrs_core::perturb::RngStream;

/// Central finite-difference gradient of a scalar function of the parameters.
pub fn fd_gradient<F>(f: F, params: &ParameterVector, h: f64) -> Vec<f64>
where
    F: Fn(&ParameterVector) -> f64,
{
    let mut grad = Vec::with_capacity(params.len());
    let mut work = params.clone();
    for i in 0..params.len() {
        let orig = work.as_slice()[i];
        work.as_mut_slice()[i] = orig + h;
        let up = f(&work);
        work.as_mut_slice()[i] = orig - h;
        let down = f(&work);
        work.as_mut_slice()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Max relative error between an analytic gradient and the FD oracle,
/// with an absolute floor so near-zero entries do not blow up the ratio.
pub fn max_rel_error(analytic: &[f64], oracle: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(oracle)
        .map(|(a, o)| (a - o).abs() / o.abs().max(1e-3))
        .fold(0.0, f64::max)
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    assert_eq!(a.len(), n * n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Random symmetric matrix with entries in roughly [-1, 1].
pub fn random_symmetric(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = 2.0 * rng.next_f64() - 1.0;
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    m
}

/// Dense Hessian of a scalar function by second-order central differences,
/// restricted to the flat index range `range`.
pub fn fd_hessian_restricted<F>(
    f: F,
    params: &ParameterVector,
    range: std::ops::Range<usize>,
    h: f64,
) -> Vec<f64>
where
    F: Fn(&ParameterVector) -> f64,
{
    let dim = range.len();
    let mut out = vec![0.0; dim * dim];
    let mut work = params.clone();
    let base = range.start;
    for i in 0..dim {
        for j in i..dim {
            let (pi, pj) = (base + i, base + j);
            let (oi, oj) = (work.as_slice()[pi], work.as_slice()[pj]);
            let mut eval = |di: f64, dj: f64| {
                work.as_mut_slice()[pi] = oi + di;
                work.as_mut_slice()[pj] = oj + dj;
                let v = f(&work);
                work.as_mut_slice()[pi] = oi;
                work.as_mut_slice()[pj] = oj;
                v
            };
            let second = if pi == pj {
                // diagonal: di and dj address the same coordinate
                (eval(h, h) - 2.0 * eval(0.0, 0.0) + eval(-h, -h)) / (h * h)
            } else {
                (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
            };
            out[i * dim + j] = second;
            out[j * dim + i] = second;
        }
    }
    out
}
