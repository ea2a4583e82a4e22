//! Reproducible experiments: noise generation, a closed-form oracle for the
//! linear flow, noise-level sweeps, order studies and recovery demos.

mod demos;
mod noise;
mod oracle;
mod report;
mod studies;

pub use demos::{
    sparse_recovery, sparse_recovery_demo, tv_recovery, tv_recovery_demo, SparseDemoConfig, SparseReport,
    SupportStats, TvDemoConfig, TvReport, SUPPORT_THRESHOLD,
};
pub use noise::{make_noisy, NoisyData};
pub use oracle::{showalter_oracle, ShowalterOracle};
pub use report::{fmt_float, trajectory_csv, TRAJECTORY_HEADER};
pub use studies::{
    linear_stability_constant, loglog_slope, order_study, rate_study, OrderRow, OrderTable, RateRow,
    RateStudyConfig, RateTable,
};

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::flow::{integrate, ButcherTableau, Problem, StepPolicy, Stopping, Trajectory};
use crate::operators::Operator;
use crate::penalty::Penalty;
use crate::stopping::DiscrepancyRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionSource {
    Constructed,
    Loaded,
}

/// The exact solution `x_dagger` of a test problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSolution {
    pub x_dagger: Array1<f64>,
    pub source: SolutionSource,
}

impl ReferenceSolution {
    pub fn constructed(x_dagger: Array1<f64>) -> Self {
        ReferenceSolution {
            x_dagger,
            source: SolutionSource::Constructed,
        }
    }

    pub fn loaded(x_dagger: Array1<f64>) -> Self {
        ReferenceSolution {
            x_dagger,
            source: SolutionSource::Loaded,
        }
    }

    /// `sin(pi s)` sampled at cell midpoints, scaled to amplitude `amp`.
    pub fn smooth(n: usize, amp: f64) -> Self {
        let x = Array1::from_iter(
            (0..n).map(|i| amp * (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin()),
        );
        Self::constructed(x)
    }

    /// `k` seeded nonzeros of magnitude in `[1, 2)` with random signs.
    pub fn sparse(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k > n {
            return Err(Error::InvalidParameter(format!(
                "support size {k} exceeds dimension {n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array1::zeros(n);
        for i in sample(&mut rng, n, k) {
            let mag: f64 = 1.0 + rng.random::<f64>();
            x[i] = if rng.random::<bool>() { mag } else { -mag };
        }
        Ok(Self::constructed(x))
    }

    /// Four constant blocks with levels `0, 1, -0.5, 0.5`.
    pub fn piecewise(n: usize) -> Self {
        const LEVELS: [f64; 4] = [0.0, 1.0, -0.5, 0.5];
        let x = Array1::from_iter((0..n).map(|i| LEVELS[(4 * i / n.max(1)).min(3)]));
        Self::constructed(x)
    }

    pub fn zero(n: usize) -> Self {
        Self::constructed(Array1::zeros(n))
    }
}

/// Seeded `n x n` matrix `Q diag(sigma) P^T` with orthogonal `Q`, `P` and
/// singular values spaced geometrically from 1 down to `1 / cond`.
pub fn well_conditioned_matrix(n: usize, cond: f64, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(cond.is_finite() && cond >= 1.0) {
        return Err(Error::InvalidParameter(format!("condition number must be >= 1, got {cond}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(n, &mut rng);
    let p = random_orthogonal(n, &mut rng);
    let sigma = Array1::from_iter((0..n).map(|k| {
        if n == 1 {
            1.0
        } else {
            cond.powf(-(k as f64) / (n as f64 - 1.0))
        }
    }));
    let scaled = &q * &sigma.view().insert_axis(ndarray::Axis(0));
    Ok(scaled.dot(&p.t()))
}

/// Modified Gram-Schmidt on a Gaussian matrix, done twice for orthogonality.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q: Array2<f64> = Array2::from_shape_fn((n, n), |_| StandardNormal.sample(rng));
    for _ in 0..2 {
        for j in 0..n {
            for i in 0..j {
                let proj: f64 = q.column(i).dot(&q.column(j));
                let qi = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-proj, &qi);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
    }
    q
}

/// Everything needed to solve one test problem at any noise level.
#[derive(Debug, Clone)]
pub struct Setup {
    pub operator: Operator,
    pub penalty: Penalty,
    pub reference: ReferenceSolution,
    pub tableau: ButcherTableau,
    pub policy: StepPolicy,
    pub tau: f64,
    pub refine: bool,
    pub refine_tol: f64,
}

/// Noisy data and the trajectory computed from it.
#[derive(Debug, Clone)]
pub struct Run {
    pub noisy: NoisyData,
    pub trajectory: Trajectory,
}

impl Setup {
    pub fn new(operator: Operator, penalty: Penalty, reference: ReferenceSolution) -> Result<Self> {
        check_dim("reference solution", operator.domain_dim(), reference.x_dagger.len())?;
        Ok(Setup {
            operator,
            penalty,
            reference,
            tableau: ButcherTableau::explicit_euler(),
            policy: StepPolicy::default(),
            tau: DiscrepancyRule::DEFAULT_TAU,
            refine: true,
            refine_tol: 1e-3,
        })
    }

    pub fn exact_data(&self) -> Result<Array1<f64>> {
        self.operator.apply(self.reference.x_dagger.view())
    }

    /// Radius with `D_{xi0} Theta(x_dagger, x0) <= c0 rho^2`, the smallest
    /// admissible ball around the current center. Falls back to 1 when
    /// `x_dagger = x0`.
    pub fn admissible_rho(&self) -> Result<f64> {
        let pen = self.penalty.clone().with_metric(self.operator.domain_metric());
        let x0 = self.operator.meta().x0.view();
        let xi0 = pen.select_subgradient(x0)?;
        let d0 = pen.bregman(self.reference.x_dagger.view(), x0, xi0.view())?;
        let rho = (d0 / Penalty::C0).sqrt();
        Ok(if rho > 0.0 { rho } else { 1.0 })
    }

    /// Generates `y_delta` from `seed` and integrates to the discrepancy stop,
    /// recording the Bregman distance to `x_dagger`.
    pub fn solve(&self, delta: f64, seed: u64) -> Result<Run> {
        let y = self.exact_data()?;
        let noisy = make_noisy(&y, delta, seed, self.operator.range_metric())?;
        let problem = Problem::new(self.operator.clone(), self.penalty.clone(), noisy.y_delta.clone())?;
        let stopping = Stopping {
            rule: Some(DiscrepancyRule::new(self.tau, delta)?),
            refine: self.refine,
            refine_tol: self.refine_tol,
        };
        let trajectory = integrate(
            &problem,
            &self.tableau,
            &self.policy,
            &stopping,
            Some(self.reference.x_dagger.view()),
        )?;
        Ok(Run { noisy, trajectory })
    }
}
