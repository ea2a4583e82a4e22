//! Small dense linear-algebra helpers: weighted inner products, a one-sided
//! Jacobi SVD and power iteration.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Inner product `<u, v> = w * sum_i u_i v_i` with a positive scalar weight.
///
/// Function-space problems use the grid spacing as weight; plain vector
/// problems use `Metric::EUCLIDEAN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric(f64);

impl Metric {
    pub const EUCLIDEAN: Metric = Metric(1.0);

    pub fn new(weight: f64) -> Option<Self> {
        (weight.is_finite() && weight > 0.0).then_some(Metric(weight))
    }

    pub fn weight(self) -> f64 {
        self.0
    }

    pub fn dot(self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        self.0 * u.dot(&v)
    }

    pub fn norm_sq(self, u: ArrayView1<f64>) -> f64 {
        self.dot(u, u)
    }

    pub fn norm(self, u: ArrayView1<f64>) -> f64 {
        self.norm_sq(u).sqrt()
    }

    pub fn dist(self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        let d = &u - &v;
        self.norm(d.view())
    }
}

impl Default for Metric {
    fn default() -> Self {
        Metric::EUCLIDEAN
    }
}

/// Thin singular value decomposition `A = U diag(sigma) V^T`, singular values
/// sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// m x k, orthonormal columns.
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    /// n x k, orthonormal columns.
    pub v: Array2<f64>,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }
}

/// One-sided (Hestenes) Jacobi SVD. Accurate to working precision for the
/// small dense matrices used here.
pub fn jacobi_svd(a: &Array2<f64>) -> Svd {
    let (m, n) = a.dim();
    if m < n {
        let t = jacobi_svd(&a.t().to_owned());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }

    // rows of `w` are the columns of `a`, so rotations touch contiguous memory
    let mut w = a.t().as_standard_layout().into_owned();
    let mut v = Array2::<f64>::eye(n);
    let eps = f64::EPSILON;

    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = w.row(p);
                    let cq = w.row(q);
                    (cp.dot(&cp), cq.dot(&cq), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = (0..n).map(|k| (k, w.row(k).dot(&w.row(k)).sqrt())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut u_out = Array2::<f64>::zeros((m, n));
    let mut v_out = Array2::<f64>::zeros((n, n));
    let mut sigma = Array1::<f64>::zeros(n);
    for (dst, &(src, s)) in order.iter().enumerate() {
        sigma[dst] = s;
        if s > 0.0 {
            u_out.column_mut(dst).assign(&(&w.row(src) / s));
        }
        v_out.column_mut(dst).assign(&v.row(src));
    }
    Svd {
        u: u_out,
        sigma,
        v: v_out,
    }
}

/// Givens rotation of rows `p` and `q`; `v` accumulates `V^T` row-wise.
fn rotate_rows(a: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let (mut rp, mut rq) = a.multi_slice_mut((ndarray::s![p, ..], ndarray::s![q, ..]));
    ndarray::Zip::from(&mut rp).and(&mut rq).for_each(|x, y| {
        let (ap, aq) = (*x, *y);
        *x = c * ap - s * aq;
        *y = s * ap + c * aq;
    });
}

/// Estimates the operator norm of a linear map `A: X -> Y` by power iteration
/// on `A^* A`, where `apply` and `adjoint` are taken with respect to the given
/// metrics. Returns a lower estimate of the true norm.
pub fn power_norm<F, G>(
    dim: usize,
    domain: Metric,
    apply: F,
    adjoint: G,
    iterations: usize,
) -> f64
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
    G: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate starting vector.
    let mut v = Array1::from_iter((0..dim).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64));
    let nv = domain.norm(v.view());
    v /= nv;
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w = adjoint(apply(v.view()).view());
        let nw = domain.norm(w.view());
        if nw == 0.0 || !nw.is_finite() {
            return 0.0;
        }
        estimate = nw.sqrt();
        v = w / nw;
    }
    estimate
}
