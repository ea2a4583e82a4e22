//! 2-convex penalty functionals and their conjugate machinery.
//!
//! Every penalty has the form `Theta(x) = w * (1/2 |x|^2 + beta * R(x))` where
//! `w` is the weight of the underlying [`Metric`] and `R` is either zero, the
//! l1 norm, or the discrete total variation `sum_i |x_{i+1} - x_i|`. Each
//! variant is therefore 2-convex with constant `c0 = 1/2` in the weighted
//! norm, the conjugate `Theta*` is differentiable everywhere and its gradient
//! is nonexpansive.
//!
//! Because `w` multiplies both `Theta` and the pairing `<xi, x>`, the
//! conjugate gradient does not depend on `w`: it is the identity, soft
//! thresholding, or the 1D TV proximal map with weight `beta`.

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Metric;

/// Which convex term is added to `1/2 |x|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    Quadratic,
    ElasticNet { beta: f64 },
    TvQuadratic { beta: f64, n: usize },
}

/// A 2-convex penalty `Theta` together with the inner product it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    kind: PenaltyKind,
    metric: Metric,
}

/// Arguments of a Bregman distance `D_xi Theta(x_bar, x)`, with `xi` a
/// subgradient of `Theta` at `x`.
#[derive(Debug, Clone, Copy)]
pub struct BregmanTriple<'a> {
    pub x_bar: ArrayView1<'a, f64>,
    pub x: ArrayView1<'a, f64>,
    pub xi: ArrayView1<'a, f64>,
}

impl<'a> BregmanTriple<'a> {
    pub fn new(
        x_bar: ArrayView1<'a, f64>,
        x: ArrayView1<'a, f64>,
        xi: ArrayView1<'a, f64>,
    ) -> Self {
        BregmanTriple { x_bar, x, xi }
    }
}

impl Penalty {
    /// Convexity exponent.
    pub const P: f64 = 2.0;
    /// Convexity constant in `D >= c0 |x_bar - x|^p`.
    pub const C0: f64 = 0.5;

    pub fn quadratic() -> Self {
        Penalty {
            kind: PenaltyKind::Quadratic,
            metric: Metric::EUCLIDEAN,
        }
    }

    pub fn elastic_net(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Penalty {
            kind: PenaltyKind::ElasticNet { beta },
            metric: Metric::EUCLIDEAN,
        })
    }

    pub fn tv_quadratic(beta: f64, n: usize) -> Result<Self> {
        check_beta(beta)?;
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "tv_quadratic needs a grid of at least 2 points, got {n}"
            )));
        }
        Ok(Penalty {
            kind: PenaltyKind::TvQuadratic { beta, n },
            metric: Metric::EUCLIDEAN,
        })
    }

    pub fn from_kind(kind: PenaltyKind) -> Result<Self> {
        match kind {
            PenaltyKind::Quadratic => Ok(Self::quadratic()),
            PenaltyKind::ElasticNet { beta } => Self::elastic_net(beta),
            PenaltyKind::TvQuadratic { beta, n } => Self::tv_quadratic(beta, n),
        }
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Conjugate exponent `p / (p - 1)`.
    pub fn p_star(&self) -> f64 {
        Self::P / (Self::P - 1.0)
    }

    fn check(&self, context: &'static str, len: usize) -> Result<()> {
        if let PenaltyKind::TvQuadratic { n, .. } = self.kind {
            check_dim(context, n, len)?;
        }
        Ok(())
    }

    /// `Theta(x)`.
    pub fn value(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check("penalty value", x.len())?;
        let quad = 0.5 * x.dot(&x);
        let extra = match self.kind {
            PenaltyKind::Quadratic => 0.0,
            PenaltyKind::ElasticNet { beta } => beta * x.iter().map(|v| v.abs()).sum::<f64>(),
            PenaltyKind::TvQuadratic { beta, .. } => beta * total_variation(x),
        };
        Ok(self.metric.weight() * (quad + extra))
    }

    /// `grad Theta*(xi) = argmin_z { Theta(z) - <xi, z> }`.
    pub fn conjugate_gradient(&self, xi: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check("conjugate gradient", xi.len())?;
        Ok(match self.kind {
            PenaltyKind::Quadratic => xi.to_owned(),
            PenaltyKind::ElasticNet { beta } => xi.mapv(|v| soft_threshold(v, beta)),
            PenaltyKind::TvQuadratic { beta, .. } => {
                let z = tv_prox(xi, beta);
                debug_assert!(tv_prox_certificate(xi, z.view(), beta, 1e-8 * (1.0 + beta)));
                z
            }
        })
    }

    /// `Theta*(xi)`, evaluated through the Fenchel identity at the maximizer.
    pub fn conjugate_value(&self, xi: ArrayView1<f64>) -> Result<f64> {
        let x = self.conjugate_gradient(xi)?;
        Ok(self.metric.dot(xi, x.view()) - self.value(x.view())?)
    }

    /// Canonical (minimal-norm) element of the subdifferential at `x`.
    pub fn select_subgradient(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check("subgradient", x.len())?;
        Ok(match self.kind {
            PenaltyKind::Quadratic => x.to_owned(),
            PenaltyKind::ElasticNet { beta } => x.mapv(|v| v + beta * sign(v)),
            PenaltyKind::TvQuadratic { beta, .. } => {
                let g = tv_min_norm_subgradient(x);
                Zip::from(&g).and(&x).map_collect(|g, x| x + beta * g)
            }
        })
    }

    /// `D_xi Theta(x_bar, x) = Theta(x_bar) - Theta(x) - <xi, x_bar - x>`.
    pub fn bregman_distance(&self, triple: &BregmanTriple) -> Result<f64> {
        check_dim("bregman distance", triple.x.len(), triple.x_bar.len())?;
        check_dim("bregman distance", triple.x.len(), triple.xi.len())?;
        let diff = &triple.x_bar - &triple.x;
        let d = self.value(triple.x_bar)?
            - self.value(triple.x)?
            - self.metric.dot(triple.xi, diff.view());
        Ok(d)
    }

    /// Shorthand for [`Penalty::bregman_distance`].
    pub fn bregman(
        &self,
        x_bar: ArrayView1<f64>,
        x: ArrayView1<f64>,
        xi: ArrayView1<f64>,
    ) -> Result<f64> {
        self.bregman_distance(&BregmanTriple::new(x_bar, x, xi))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "beta must be finite and nonnegative, got {beta}"
        )))
    }
}

/// Sign with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn soft_threshold(v: f64, beta: f64) -> f64 {
    sign(v) * (v.abs() - beta).max(0.0)
}

/// Discrete total variation `sum_i |x_{i+1} - x_i|`.
pub fn total_variation(x: ArrayView1<f64>) -> f64 {
    x.windows(2).into_iter().map(|w| (w[1] - w[0]).abs()).sum()
}

/// Minimal-norm element of the subdifferential of the discrete TV at `x`.
///
/// On every maximal run `a..=b` of equal entries the free dual increments are
/// spread evenly, giving `g_j = (s_in - s_out) / (b - a + 1)`, where `s_in`
/// and `s_out` are the signs of the jumps entering and leaving the run (zero
/// at the boundary). The interpolated dual values stay within `[-1, 1]`.
fn tv_min_norm_subgradient(x: ArrayView1<f64>) -> Array1<f64> {
    let n = x.len();
    let mut g = Array1::zeros(n);
    let mut a = 0;
    while a < n {
        let mut b = a;
        while b + 1 < n && x[b + 1] == x[a] {
            b += 1;
        }
        let s_in = if a == 0 { 0.0 } else { sign(x[a] - x[a - 1]) };
        let s_out = if b + 1 == n { 0.0 } else { sign(x[b + 1] - x[b]) };
        let val = (s_in - s_out) / (b - a + 1) as f64;
        for j in a..=b {
            g[j] = val;
        }
        a = b + 1;
    }
    g
}

/// Exact solution of `argmin_z 1/2 |z - input|^2 + lambda * sum_i |z_{i+1} - z_i|`
/// by Condat's direct (taut-string type) algorithm.
pub fn tv_prox(input: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
    let width = input.len();
    let mut out = Array1::zeros(width);
    if width == 0 {
        return out;
    }
    if lambda <= 0.0 || width == 1 {
        return input.to_owned();
    }

    let last = width - 1;
    let minlambda = -lambda;
    let twolambda = 2.0 * lambda;
    let (mut k, mut k0) = (0usize, 0usize);
    let (mut kplus, mut kminus) = (0usize, 0usize);
    // u is the running dual variable, [vmin, vmax] bounds the segment value.
    let (mut umin, mut umax) = (lambda, minlambda);
    let (mut vmin, mut vmax) = (input[0] - lambda, input[0] + lambda);

    loop {
        while k == last {
            if umin < 0.0 {
                // vmin too high: negative jump
                while k0 <= kminus {
                    out[k0] = vmin;
                    k0 += 1;
                }
                k = k0;
                kminus = k0;
                vmin = input[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                // vmax too low: positive jump
                while k0 <= kplus {
                    out[k0] = vmax;
                    k0 += 1;
                }
                k = k0;
                kplus = k0;
                vmax = input[k0];
                umax = minlambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    out[k0] = vmin;
                    k0 += 1;
                }
                return out;
            }
        }

        umin += input[k + 1] - vmin;
        if umin < minlambda {
            while k0 <= kminus {
                out[k0] = vmin;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = input[k0];
            vmax = vmin + twolambda;
            umin = lambda;
            umax = minlambda;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lambda {
            while k0 <= kplus {
                out[k0] = vmax;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = input[k0];
            vmin = vmax - twolambda;
            umin = lambda;
            umax = minlambda;
            continue;
        }
        k += 1;
        if umin >= lambda {
            kminus = k;
            vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
            umin = lambda;
        }
        if umax <= minlambda {
            kplus = k;
            vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
            umax = minlambda;
        }
    }
}

/// Checks the optimality conditions of the 1D TV proximal problem.
///
/// With `u_k = sum_{i <= k} (input_i - z_i)`, `z` is optimal iff
/// `|u_k| <= lambda` for every edge, the total sum vanishes, and
/// `u_k = -lambda * sign(z_{k+1} - z_k)` wherever `z` jumps.
pub fn tv_prox_certificate(
    input: ArrayView1<f64>,
    z: ArrayView1<f64>,
    lambda: f64,
    tol: f64,
) -> bool {
    let n = input.len();
    if z.len() != n {
        return false;
    }
    let mut u = 0.0;
    for k in 0..n {
        u += input[k] - z[k];
        if k + 1 == n {
            return u.abs() <= tol;
        }
        if u.abs() > lambda + tol {
            return false;
        }
        let jump = z[k + 1] - z[k];
        if jump != 0.0 && (u + lambda * sign(jump)).abs() > tol {
            return false;
        }
    }
    true
}
