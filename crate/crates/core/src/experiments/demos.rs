use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::{well_conditioned_matrix, ReferenceSolution, Setup};
use crate::error::Result;
use crate::flow::StepPolicy;
use crate::operators::Operator;
use crate::penalty::{total_variation, Penalty};

/// Entries with magnitude above this count as part of the recovered support.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDemoConfig {
    pub n: usize,
    pub support: usize,
    pub delta: f64,
    pub seed: u64,
    pub beta: f64,
    pub cond: f64,
    pub tau: f64,
    pub max_steps: usize,
}

impl Default for SparseDemoConfig {
    fn default() -> Self {
        SparseDemoConfig {
            n: 20,
            support: 3,
            delta: 1e-4,
            seed: 2024,
            beta: 3.0,
            cond: 5.0,
            tau: 2.5,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportStats {
    pub precision: f64,
    pub recall: f64,
    /// Number of entries above [`SUPPORT_THRESHOLD`].
    pub found: usize,
    /// Euclidean distance to `x_dagger`.
    pub error: f64,
    pub t_star: Option<f64>,
}

impl SupportStats {
    /// Empty sets count as perfectly recovered.
    pub fn compare(x: ArrayView1<f64>, x_dagger: ArrayView1<f64>) -> Self {
        let found: Vec<bool> = x.iter().map(|v| v.abs() > SUPPORT_THRESHOLD).collect();
        let truth: Vec<bool> = x_dagger.iter().map(|v| *v != 0.0).collect();
        let hits = found.iter().zip(&truth).filter(|(f, t)| **f && **t).count();
        let n_found = found.iter().filter(|f| **f).count();
        let n_true = truth.iter().filter(|t| **t).count();
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let d = &x - &x_dagger;
        SupportStats {
            precision: ratio(hits, n_found),
            recall: ratio(hits, n_true),
            found: n_found,
            error: d.dot(&d).sqrt(),
            t_star: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseReport {
    pub elastic_net: SupportStats,
    pub quadratic: SupportStats,
}

/// Recovery of a sparse `x_dagger` through a seeded well-conditioned matrix,
/// once with the elastic-net penalty and once with the quadratic one.
pub fn sparse_recovery(cfg: &SparseDemoConfig) -> Result<SparseReport> {
    let m = well_conditioned_matrix(cfg.n, cfg.cond, cfg.seed)?;
    let reference = ReferenceSolution::sparse(cfg.n, cfg.support, cfg.seed.wrapping_add(1))?;
    let noise_seed = cfg.seed.wrapping_add(2);

    let run = |penalty: Penalty| -> Result<SupportStats> {
        let op = Operator::dense_linear(m.clone())?;
        let mut setup = Setup::new(op, penalty, reference.clone())?;
        setup.tau = cfg.tau;
        setup.policy = StepPolicy::scaled(0.9, cfg.max_steps);
        let traj = setup.solve(cfg.delta, noise_seed)?.trajectory;
        let mut stats = SupportStats::compare(traj.final_state().x.view(), reference.x_dagger.view());
        stats.t_star = traj.stop.map(|s| s.t_star);
        Ok(stats)
    };
    Ok(SparseReport {
        elastic_net: run(Penalty::elastic_net(cfg.beta)?)?,
        quadratic: run(Penalty::quadratic())?,
    })
}

/// [`sparse_recovery`] with the remaining settings at their defaults.
pub fn sparse_recovery_demo(n: usize, support: usize, delta: f64, seed: u64) -> Result<SparseReport> {
    sparse_recovery(&SparseDemoConfig {
        n,
        support,
        delta,
        seed,
        ..SparseDemoConfig::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvDemoConfig {
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub beta: f64,
    pub cond: f64,
    pub tau: f64,
    pub max_steps: usize,
}

impl Default for TvDemoConfig {
    fn default() -> Self {
        TvDemoConfig {
            n: 40,
            delta: 1e-4,
            seed: 2024,
            beta: 0.1,
            cond: 5.0,
            tau: 2.5,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvReport {
    pub tv_true: f64,
    pub tv_recovered: f64,
    pub error: f64,
    pub t_star: Option<f64>,
}

impl TvReport {
    pub fn tv_ratio(&self) -> f64 {
        self.tv_recovered / self.tv_true
    }
}

/// Recovery of the four-block piecewise-constant profile with the
/// TV-plus-quadratic penalty.
pub fn tv_recovery(cfg: &TvDemoConfig) -> Result<TvReport> {
    let m = well_conditioned_matrix(cfg.n, cfg.cond, cfg.seed)?;
    let reference = ReferenceSolution::piecewise(cfg.n);
    let op = Operator::dense_linear(m)?;
    let mut setup = Setup::new(op, Penalty::tv_quadratic(cfg.beta, cfg.n)?, reference.clone())?;
    setup.tau = cfg.tau;
    setup.policy = StepPolicy::scaled(0.9, cfg.max_steps);
    let traj = setup.solve(cfg.delta, cfg.seed.wrapping_add(2))?.trajectory;
    let x = &traj.final_state().x;
    let d = x - &reference.x_dagger;
    Ok(TvReport {
        tv_true: total_variation(reference.x_dagger.view()),
        tv_recovered: total_variation(x.view()),
        error: d.dot(&d).sqrt(),
        t_star: traj.stop.map(|s| s.t_star),
    })
}

pub fn tv_recovery_demo(n: usize, delta: f64, seed: u64) -> Result<TvReport> {
    tv_recovery(&TvDemoConfig {
        n,
        delta,
        seed,
        ..TvDemoConfig::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, Problem, Stopping};
    use ndarray::{array, Array1, Array2};

    #[test]
    fn support_counting() {
        let s = SupportStats::compare(array![1.0, 1e-7, 0.5, 0.0].view(), array![2.0, 0.0, 0.0, -1.0].view());
        assert_eq!(s.found, 2);
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 0.5);
        let z = SupportStats::compare(Array1::zeros(3).view(), Array1::zeros(3).view());
        assert_eq!((z.precision, z.recall, z.error), (1.0, 1.0, 0.0));
    }

    #[test]
    fn zero_problem_stays_at_zero() {
        let op = Operator::dense_linear(Array2::eye(4)).unwrap();
        let p = Problem::new(op, Penalty::elastic_net(1.0).unwrap(), Array1::zeros(4)).unwrap();
        let traj = integrate(
            &p,
            &crate::flow::ButcherTableau::explicit_euler(),
            &StepPolicy::scaled(0.9, 50),
            &Stopping::never(),
            None,
        )
        .unwrap();
        assert!(traj.states.iter().all(|s| s.x.iter().all(|v| *v == 0.0)));
    }
}
