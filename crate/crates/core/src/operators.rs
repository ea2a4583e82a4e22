//! Forward operators `F`, their derivative family `L(x)` and its adjoint.
//!
//! Three concrete operators are provided:
//!
//! * `DenseLinear`: `F(x) = M x`, `L(x) = M`.
//! * `DiagonalCubic`: `F(x)_i = x_i + gamma x_i^3`, `L(x) = diag(1 + 3 gamma x_i^2)`.
//! * `AutoConvolution`: `F(x)(s) = int_0^s x(s - t) x(t) dt` on a uniform grid of
//!   `[0, 1]` with trapezoidal quadrature. `L(x)` is the exact derivative of the
//!   discretized map, so finite-difference checks see no modelling error.
//!
//! Alongside each operator we carry the metadata the convergence theory is
//! phrased in: the working ball `B_{2 rho}(x0)`, a bound `C0` on `|L(x)|` over
//! that ball, the tangential-cone constant `eta` and, when known, the Lipschitz
//! constant of `x -> L(x)`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{jacobi_svd, power_norm, Metric};

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    DenseLinear { matrix: Array2<f64> },
    DiagonalCubic { gamma: f64, n: usize },
    AutoConvolution { n: usize },
}

/// Constants of the local convergence theory attached to an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorMeta {
    /// Bound on `|L(x)|` over `B_{2 rho}(x0)`.
    pub c0: f64,
    /// Tangential-cone constant, declared or estimated.
    pub eta: f64,
    /// Lipschitz constant of `x -> L(x)` on the ball, if available.
    pub lip: Option<f64>,
    /// Working-ball radius.
    pub rho: f64,
    /// Ball center and default initial guess.
    pub x0: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Operator {
    kind: OperatorKind,
    meta: OperatorMeta,
    declared_c0: Option<f64>,
}

impl Operator {
    pub fn dense_linear(matrix: Array2<f64>) -> Result<Self> {
        let (m, n) = matrix.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter("matrix must be non-empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
        }
        Ok(Self::build(OperatorKind::DenseLinear { matrix }, n))
    }

    pub fn diagonal_cubic(gamma: f64, n: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and nonnegative, got {gamma}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self::build(OperatorKind::DiagonalCubic { gamma, n }, n))
    }

    pub fn auto_convolution(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "auto_convolution needs at least 2 grid points, got {n}"
            )));
        }
        Ok(Self::build(OperatorKind::AutoConvolution { n }, n))
    }

    fn build(kind: OperatorKind, n: usize) -> Self {
        let mut op = Operator {
            kind,
            meta: OperatorMeta {
                c0: 0.0,
                eta: 0.0,
                lip: None,
                rho: 1.0,
                x0: Array1::zeros(n),
            },
            declared_c0: None,
        };
        op.refresh_derived();
        op
    }

    /// Recomputes `C0` (unless declared) and `L'` from the current ball.
    fn refresh_derived(&mut self) {
        let r_inf = self.meta.x0.iter().fold(0.0f64, |a, v| a.max(v.abs())) + 2.0 * self.meta.rho;
        let (c0, lip) = match &self.kind {
            OperatorKind::DenseLinear { matrix } => (jacobi_svd(matrix).sigma_max(), Some(0.0)),
            OperatorKind::DiagonalCubic { gamma, .. } => {
                (1.0 + 3.0 * gamma * r_inf * r_inf, Some(6.0 * gamma * r_inf))
            }
            OperatorKind::AutoConvolution { n } => {
                // Young's inequality: |L(x) h| <= 2 |x|_{L1} |h| <= 2 sqrt(n h) |x| |h|
                let h = grid_step(*n);
                let scale = 2.0 * (*n as f64 * h).sqrt();
                let r = self.domain_metric().norm(self.meta.x0.view()) + 2.0 * self.meta.rho;
                (scale * r, Some(scale))
            }
        };
        self.meta.c0 = self.declared_c0.unwrap_or(c0);
        self.meta.lip = lip;
    }

    /// Sets the working ball `B_{2 rho}(x0)`.
    pub fn with_ball(mut self, x0: Array1<f64>, rho: f64) -> Result<Self> {
        check_dim("ball center", self.domain_dim(), x0.len())?;
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        self.meta.x0 = x0;
        self.meta.rho = rho;
        self.refresh_derived();
        Ok(self)
    }

    /// Overrides the derived norm bound.
    pub fn with_c0(mut self, c0: f64) -> Result<Self> {
        if !(c0.is_finite() && c0 > 0.0) {
            return Err(Error::InvalidParameter(format!("c0_bound must be positive, got {c0}")));
        }
        self.declared_c0 = Some(c0);
        self.meta.c0 = c0;
        Ok(self)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta must lie in [0, 1), got {eta}")));
        }
        self.meta.eta = eta;
        Ok(self)
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn meta(&self) -> &OperatorMeta {
        &self.meta
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, OperatorKind::DenseLinear { .. })
    }

    pub fn domain_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::DenseLinear { matrix } => matrix.ncols(),
            OperatorKind::DiagonalCubic { n, .. } | OperatorKind::AutoConvolution { n } => *n,
        }
    }

    pub fn range_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::DenseLinear { matrix } => matrix.nrows(),
            OperatorKind::DiagonalCubic { n, .. } | OperatorKind::AutoConvolution { n } => *n,
        }
    }

    pub fn domain_metric(&self) -> Metric {
        match &self.kind {
            OperatorKind::AutoConvolution { n } => Metric::new(grid_step(*n)).expect("positive step"),
            _ => Metric::EUCLIDEAN,
        }
    }

    pub fn range_metric(&self) -> Metric {
        self.domain_metric()
    }

    /// `F(x)`.
    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim("operator apply", self.domain_dim(), x.len())?;
        Ok(match &self.kind {
            OperatorKind::DenseLinear { matrix } => matrix.dot(&x),
            OperatorKind::DiagonalCubic { gamma, .. } => x.mapv(|v| v + gamma * v * v * v),
            OperatorKind::AutoConvolution { n } => {
                let h = grid_step(*n);
                Array1::from_iter((0..*n).map(|i| {
                    if i == 0 {
                        return 0.0;
                    }
                    let inner: f64 = (1..i).map(|j| x[i - j] * x[j]).sum();
                    h * (x[0] * x[i] + inner)
                }))
            }
        })
    }

    /// `L(x) h`.
    pub fn deriv_apply(&self, x: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim("derivative apply (x)", self.domain_dim(), x.len())?;
        check_dim("derivative apply (h)", self.domain_dim(), h.len())?;
        Ok(match &self.kind {
            OperatorKind::DenseLinear { matrix } => matrix.dot(&h),
            OperatorKind::DiagonalCubic { gamma, .. } => {
                ndarray::Zip::from(&x).and(&h).map_collect(|x, h| (1.0 + 3.0 * gamma * x * x) * h)
            }
            OperatorKind::AutoConvolution { n } => {
                let step = grid_step(*n);
                Array1::from_iter((0..*n).map(|i| {
                    if i == 0 {
                        return 0.0;
                    }
                    let inner: f64 = (0..=i).map(|j| trap_weight(i, j) * x[i - j] * h[j]).sum();
                    2.0 * step * inner
                }))
            }
        })
    }

    /// `L(x)^* g`, adjoint with respect to the domain and range metrics.
    pub fn deriv_adjoint_apply(&self, x: ArrayView1<f64>, g: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim("adjoint apply (x)", self.domain_dim(), x.len())?;
        check_dim("adjoint apply (g)", self.range_dim(), g.len())?;
        Ok(match &self.kind {
            OperatorKind::DenseLinear { matrix } => matrix.t().dot(&g),
            OperatorKind::DiagonalCubic { gamma, .. } => {
                ndarray::Zip::from(&x).and(&g).map_collect(|x, g| (1.0 + 3.0 * gamma * x * x) * g)
            }
            OperatorKind::AutoConvolution { n } => {
                // Domain and range share the grid weight, so the adjoint is the transpose.
                let step = grid_step(*n);
                Array1::from_iter((0..*n).map(|j| {
                    let inner: f64 = (j.max(1)..*n).map(|i| trap_weight(i, j) * x[i - j] * g[i]).sum();
                    2.0 * step * inner
                }))
            }
        })
    }

    /// Whether `x` lies in `B_{2 rho}(x0)`.
    pub fn in_ball(&self, x: ArrayView1<f64>) -> bool {
        self.domain_metric().dist(x, self.meta.x0.view()) <= 2.0 * self.meta.rho
    }

    /// Power-iteration estimate of `|L(x)|` in the weighted norms.
    pub fn derivative_norm(&self, x: ArrayView1<f64>) -> Result<f64> {
        check_dim("derivative norm", self.domain_dim(), x.len())?;
        let dm = self.domain_metric();
        Ok(power_norm(
            self.domain_dim(),
            dm,
            |h| self.deriv_apply(x, h).expect("dimensions checked"),
            |g| self.deriv_adjoint_apply(x, g).expect("dimensions checked"),
            500,
        ))
    }

    /// `|F(x) - F(x_bar) - L(x_bar)(x - x_bar)| / |F(x) - F(x_bar)|`, or `None`
    /// when `F(x) = F(x_bar)`.
    pub fn tangential_cone_ratio(&self, x: ArrayView1<f64>, x_bar: ArrayView1<f64>) -> Result<Option<f64>> {
        let fx = self.apply(x)?;
        let fb = self.apply(x_bar)?;
        let diff = &fx - &fb;
        let denom = self.range_metric().norm(diff.view());
        if denom == 0.0 {
            return Ok(None);
        }
        let step = &x - &x_bar;
        let lin = self.deriv_apply(x_bar, step.view())?;
        let rem = diff - lin;
        Ok(Some(self.range_metric().norm(rem.view()) / denom))
    }

    /// Uniform sample from `B_{radius}(x0)` in the domain metric.
    pub fn sample_ball(&self, radius: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let n = self.domain_dim();
        let dir = Array1::from_iter((0..n).map(|_| StandardNormal.sample(rng)));
        let norm: f64 = self.domain_metric().norm(dir.view());
        let u: f64 = Uniform::new(0.0, 1.0).expect("valid range").sample(rng);
        let r = radius * u.powf(1.0 / n as f64);
        &self.meta.x0 + &(dir * (r / norm))
    }

    /// Empirical lower bound for the tangential-cone constant: the largest
    /// observed ratio over `samples` random pairs in `B_{2 rho}(x0)`.
    /// Pairs with `F(x) = F(x_bar)` are skipped.
    pub fn estimate_eta(&self, samples: usize, seed: u64) -> Result<f64> {
        if samples == 0 {
            return Err(Error::InvalidParameter("samples must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radius = 2.0 * self.meta.rho;
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let x = self.sample_ball(radius, &mut rng);
            let x_bar = self.sample_ball(radius, &mut rng);
            if let Some(r) = self.tangential_cone_ratio(x.view(), x_bar.view())? {
                worst = worst.max(r);
            }
        }
        Ok(worst)
    }
}

/// Grid spacing of `n` uniform points on `[0, 1]`.
pub fn grid_step(n: usize) -> f64 {
    1.0 / (n as f64 - 1.0)
}

/// Trapezoid weight of node `j` in the rule over `[0, s_i]`.
fn trap_weight(i: usize, j: usize) -> f64 {
    if j == 0 || j == i {
        0.5
    } else {
        1.0
    }
}
