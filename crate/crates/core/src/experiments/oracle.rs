use ndarray::{Array1, Array2};

use crate::linalg::{jacobi_svd, Svd};

/// Closed-form solution of the linear flow with quadratic penalty and `x0 = 0`,
///
/// ```text
/// x(t) = sum_k (1 - exp(-sigma_k^2 t)) <y, u_k> / sigma_k  v_k,
/// ```
///
/// over the singular system of `M`. Independent of the Runge-Kutta code.
#[derive(Debug, Clone)]
pub struct ShowalterOracle {
    svd: Svd,
}

/// Singular values below this are treated as zero.
const SIGMA_CUTOFF: f64 = 1e-12;

impl ShowalterOracle {
    pub fn new(matrix: &Array2<f64>) -> Self {
        ShowalterOracle {
            svd: jacobi_svd(matrix),
        }
    }

    pub fn svd(&self) -> &Svd {
        &self.svd
    }

    pub fn at(&self, y_delta: &Array1<f64>, t: f64) -> Array1<f64> {
        let n = self.svd.v.nrows();
        let mut x = Array1::zeros(n);
        for (k, &sigma) in self.svd.sigma.iter().enumerate() {
            if sigma < SIGMA_CUTOFF {
                continue;
            }
            let coeff = -(-sigma * sigma * t).exp_m1() * self.svd.u.column(k).dot(y_delta) / sigma;
            x.scaled_add(coeff, &self.svd.v.column(k));
        }
        x
    }
}

/// One-shot form of [`ShowalterOracle::at`].
pub fn showalter_oracle(matrix: &Array2<f64>, y_delta: &Array1<f64>, t: f64) -> Array1<f64> {
    ShowalterOracle::new(matrix).at(y_delta, t)
}
