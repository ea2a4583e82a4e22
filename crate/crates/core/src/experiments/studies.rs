use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::ShowalterOracle;
use super::report::{fmt_float, fmt_opt};
use super::Setup;
use crate::error::{Error, Result};
use crate::flow::{integrate, ButcherTableau, Outcome, Problem, StepPolicy, Stopping};
use crate::linalg::jacobi_svd;
use crate::operators::Operator;
use crate::penalty::Penalty;

/// Noise levels and stability data of a rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyConfig {
    pub deltas: Vec<f64>,
    pub nu: f64,
    pub r_f: Option<f64>,
    /// Row `i` uses seed `seed + i`.
    pub seed: u64,
}

impl RateStudyConfig {
    pub fn new(deltas: Vec<f64>, nu: f64, r_f: Option<f64>, seed: u64) -> Result<Self> {
        let cfg = RateStudyConfig { deltas, nu, r_f, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::InvalidParameter("deltas must not be empty".into()));
        }
        if self.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidParameter("deltas must be positive".into()));
        }
        if self.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("deltas must be strictly decreasing".into()));
        }
        if !(1.0..=2.0).contains(&self.nu) {
            return Err(Error::InvalidParameter(format!("nu must lie in [1, 2], got {}", self.nu)));
        }
        if let Some(r) = self.r_f {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidParameter(format!("r_f must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub delta: f64,
    /// `None` when the discrepancy rule never fired.
    pub t_star: Option<f64>,
    pub steps: usize,
    pub residual_at_stop: f64,
    pub bregman_error: f64,
    pub bound_rhs: Option<f64>,
    pub outcome: Outcome,
}

impl RateRow {
    pub fn stopped(&self) -> bool {
        self.t_star.is_some()
    }

    /// `D <= R_F (tau + 1)^nu delta^nu`, when `R_F` is declared.
    pub fn bound_holds(&self) -> Option<bool> {
        self.bound_rhs.map(|b| self.bregman_error <= b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub nu: f64,
    pub tau: f64,
    /// Least-squares slope of `log D` against `log delta` over stopped rows.
    pub slope: Option<f64>,
}

impl RateTable {
    pub const HEADER: &'static str = "delta,T_star,steps,residual_at_stop,bregman_error,bound_rhs";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_float(r.delta),
                fmt_opt(r.t_star),
                r.steps,
                fmt_float(r.residual_at_stop),
                fmt_float(r.bregman_error),
                fmt_opt(r.bound_rhs)
            ));
        }
        out
    }

    /// Every row with a declared bound satisfies it.
    pub fn bounds_hold(&self) -> bool {
        self.rows.iter().all(|r| r.bound_holds() != Some(false))
    }
}

/// `R_F = |M^{-1}|^2 / 2`, the stability constant of a nonsingular linear
/// problem with quadratic penalty (`nu = 2`).
pub fn linear_stability_constant(matrix: &Array2<f64>) -> Result<f64> {
    let smin = jacobi_svd(matrix).sigma_min();
    if smin <= 0.0 {
        return Err(Error::InvalidParameter("matrix is singular".into()));
    }
    Ok(0.5 / (smin * smin))
}

/// Least-squares slope of `log y` against `log x`. Needs two points with
/// positive coordinates and distinct abscissae.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Solves at every noise level of `cfg` and records the Bregman error at the
/// stopping time.
pub fn rate_study(setup: &Setup, cfg: &RateStudyConfig) -> Result<RateTable> {
    cfg.validate()?;
    let rows = cfg
        .deltas
        .par_iter()
        .enumerate()
        .map(|(i, &delta)| {
            let run = setup.solve(delta, cfg.seed.wrapping_add(i as u64))?;
            let traj = run.trajectory;
            let last = traj.samples.last().expect("trajectory has samples");
            let stopped = traj.outcome == Outcome::StoppedByDiscrepancy;
            if !stopped {
                log::warn!("delta={delta:e}: discrepancy rule never fired, row excluded from fit");
            }
            Ok(RateRow {
                delta,
                t_star: traj.stop.map(|s| s.t_star),
                steps: traj.steps(),
                residual_at_stop: last.residual,
                bregman_error: last.phi.expect("reference is supplied"),
                bound_rhs: cfg.r_f.map(|r| r * ((setup.tau + 1.0) * delta).powf(cfg.nu)),
                outcome: traj.outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (xs, ys): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.stopped()).map(|r| (r.delta, r.bregman_error)).unzip();
    Ok(RateTable {
        slope: loglog_slope(&xs, &ys),
        rows,
        nu: cfg.nu,
        tau: setup.tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderRow {
    pub tableau: String,
    pub dt: f64,
    pub steps: usize,
    /// `|x_N - x(T)|` at the horizon.
    pub error: f64,
    /// Largest error over all steps.
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderTable {
    pub horizon: f64,
    pub rows: Vec<OrderRow>,
    /// Fitted global-error slope per tableau, in input order.
    pub slopes: Vec<(String, Option<f64>)>,
}

impl OrderTable {
    pub const HEADER: &'static str = "tableau,dt,steps,error,max_error";

    pub fn slope(&self, name: &str) -> Option<f64> {
        self.slopes.iter().find(|(n, _)| n == name).and_then(|(_, s)| *s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.tableau,
                fmt_float(r.dt),
                r.steps,
                fmt_float(r.error),
                fmt_float(r.max_error)
            ));
        }
        out
    }
}

/// Global error of each tableau against [`ShowalterOracle`] for the linear
/// problem `M x = y_delta` with quadratic penalty and `x0 = 0`.
///
/// Each `dt` is adjusted to `T / round(T / dt)` so that the last step lands
/// on the horizon.
pub fn order_study(
    matrix: &Array2<f64>,
    y_delta: &Array1<f64>,
    tableaux: &[(String, ButcherTableau)],
    dts: &[f64],
    horizon: f64,
) -> Result<OrderTable> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if dts.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidParameter("dts must be positive".into()));
    }
    let op = Operator::dense_linear(matrix.clone())?;
    let problem = Problem::new(op, Penalty::quadratic(), y_delta.clone())?;
    let oracle = ShowalterOracle::new(matrix);

    let jobs: Vec<(usize, f64)> = (0..tableaux.len()).flat_map(|k| dts.iter().map(move |&d| (k, d))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, dt)| {
            let (name, tab) = &tableaux[k];
            let steps = ((horizon / dt).round() as usize).max(1);
            let dt = horizon / steps as f64;
            let traj = integrate(&problem, tab, &StepPolicy::fixed(dt, steps), &Stopping::never(), None)?;
            let max_error = traj
                .states
                .iter()
                .map(|s| {
                    let d = &s.x - &oracle.at(y_delta, s.t);
                    d.dot(&d).sqrt()
                })
                .fold(0.0, f64::max);
            let fin = traj.final_state();
            let d = &fin.x - &oracle.at(y_delta, horizon);
            Ok(OrderRow {
                tableau: name.clone(),
                dt,
                steps: traj.steps(),
                error: d.dot(&d).sqrt(),
                max_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let slopes = tableaux
        .iter()
        .map(|(name, _)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| &r.tableau == name).map(|r| (r.dt, r.error)).unzip();
            (name.clone(), loglog_slope(&xs, &ys))
        })
        .collect();
    Ok(OrderTable {
        horizon,
        rows,
        slopes,
    })
}
