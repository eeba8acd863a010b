//! Small dense f64 linear algebra: Householder QR (random orthogonal
//! matrices for kernel init) and a one-sided Jacobi SVD backing the
//! minimal-norm least-squares solver. Matrices here never exceed
//! 64 x 64, where Jacobi is both simple and highly accurate.

#![allow(clippy::needless_range_loop)]

use crate::rng::Rng;
use crate::tensor::Tensor;

pub fn transpose(a: &Tensor<f64>) -> Tensor<f64> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut t = Tensor::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            t.data_mut()[j * m + i] = a.data()[i * n + j];
        }
    }
    t
}

/// Householder QR of a square matrix; returns (Q, R) with R's diagonal
/// forced positive so Q is unique.
pub fn qr_square(a: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let n = a.shape()[0];
    assert_eq!(a.shape(), &[n, n], "qr_square: expected square matrix, got {:?}", a.shape());
    let mut r = a.clone();
    // qt accumulates H_{n-1} ... H_0; Q = qtᵀ because each H is symmetric.
    let mut qt = Tensor::zeros(&[n, n]);
    for i in 0..n {
        qt.data_mut()[i * n + i] = 1.0;
    }
    let mut v = vec![0.0f64; n];
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..n {
            norm += r.data()[i * n + k] * r.data()[i * n + k];
        }
        let norm = norm.sqrt();
        if norm < 1e-300 {
            continue;
        }
        let x0 = r.data()[k * n + k];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut vnorm = 0.0;
        for i in k..n {
            v[i] = r.data()[i * n + k] - if i == k { alpha } else { 0.0 };
            vnorm += v[i] * v[i];
        }
        let vnorm = vnorm.sqrt();
        if vnorm < 1e-300 {
            continue;
        }
        for vi in v[k..n].iter_mut() {
            *vi /= vnorm;
        }
        // R[k.., j] -= 2 v (vᵀ R[k.., j]); same update applied to qt.
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * r.data()[i * n + j];
            }
            for i in k..n {
                r.data_mut()[i * n + j] -= 2.0 * v[i] * dot;
            }
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * qt.data()[i * n + j];
            }
            for i in k..n {
                qt.data_mut()[i * n + j] -= 2.0 * v[i] * dot;
            }
        }
    }
    let mut q = transpose(&qt);
    // Sign correction: make diag(R) positive.
    for j in 0..n {
        if r.data()[j * n + j] < 0.0 {
            for i in 0..n {
                q.data_mut()[i * n + j] = -q.data()[i * n + j];
                r.data_mut()[j * n + i] = -r.data()[j * n + i];
            }
        }
    }
    (q, r)
}

/// Uniformly random orthogonal matrix: QR of an i.i.d. Gaussian matrix with
/// the sign convention from [`qr_square`].
pub fn random_orthogonal(n: usize, rng: &mut Rng) -> Tensor<f64> {
    let a = Tensor::randn(&[n, n], 1.0, rng);
    qr_square(&a).0
}

pub struct Svd {
    /// Left singular vectors, m x r (thin).
    pub u: Tensor<f64>,
    pub sigma: Vec<f64>,
    /// Right singular vectors, n x r (thin).
    pub v: Tensor<f64>,
}

/// Thin SVD via one-sided Jacobi: orthogonalize column pairs of a working
/// copy until convergence; singular values are the final column norms.
pub fn svd(a: &Tensor<f64>) -> Svd {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    if m < n {
        // A = U S Vᵀ  <=>  Aᵀ = V S Uᵀ
        let s = svd(&transpose(a));
        return Svd { u: s.v, sigma: s.sigma, v: s.u };
    }
    let mut b = a.clone();
    let mut v = Tensor::zeros(&[n, n]);
    for i in 0..n {
        v.data_mut()[i * n + i] = 1.0;
    }

    let col_dot = |t: &Tensor<f64>, p: usize, q: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..t.shape()[0] {
            acc += t.data()[i * n + p] * t.data()[i * n + q];
        }
        acc
    };
    let rotate = |t: &mut Tensor<f64>, p: usize, q: usize, c: f64, s: f64| {
        for i in 0..t.shape()[0] {
            let tp = t.data()[i * n + p];
            let tq = t.data()[i * n + q];
            t.data_mut()[i * n + p] = c * tp - s * tq;
            t.data_mut()[i * n + q] = s * tp + c * tq;
        }
    };

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let alpha = col_dot(&b, p, p);
                let beta = col_dot(&b, q, q);
                let gamma = col_dot(&b, p, q);
                if gamma.abs() <= 1e-14 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut b, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma = vec![0.0f64; n];
    let mut u = Tensor::zeros(&[m, n]);
    for j in 0..n {
        let norm = col_dot(&b, j, j).sqrt();
        sigma[j] = norm;
        if norm > 1e-300 {
            for i in 0..m {
                u.data_mut()[i * n + j] = b.data()[i * n + j] / norm;
            }
        }
    }
    Svd { u, sigma, v }
}

/// Minimal-norm solution of min ||X w - y||: w = V S⁺ Uᵀ y, zeroing
/// singular values below `rcond * sigma_max`.
pub fn pinv_solve(x: &Tensor<f64>, y: &[f64], rcond: f64) -> Vec<f64> {
    let (m, n) = (x.shape()[0], x.shape()[1]);
    assert_eq!(m, y.len(), "pinv_solve: {m} rows but {} targets", y.len());
    let s = svd(x);
    let smax = s.sigma.iter().cloned().fold(0.0f64, f64::max);
    let tol = rcond * smax;
    let r = s.sigma.len();
    let mut w = vec![0.0f64; n];
    for j in 0..r {
        if s.sigma[j] <= tol || s.sigma[j] == 0.0 {
            continue;
        }
        let mut uty = 0.0;
        for i in 0..m {
            uty += s.u.data()[i * r + j] * y[i];
        }
        let coef = uty / s.sigma[j];
        for i in 0..n {
            w[i] += s.v.data()[i * r + j] * coef;
        }
    }
    w
}
