//! Discrepancy principle, localization of the stopping time and trajectory
//! diagnostics.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{rk_step, ButcherTableau, DualState, Problem, StepPolicy, Trajectory};
use crate::penalty::Penalty;

/// Stop once `|F(x(T)) - y_delta| <= tau * delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRule {
    pub tau: f64,
    pub delta: f64,
}

impl DiscrepancyRule {
    pub const DEFAULT_TAU: f64 = 2.5;

    pub fn new(tau: f64, delta: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 1.0) {
            return Err(Error::InvalidParameter(format!("tau must exceed 1, got {tau}")));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be finite and nonnegative, got {delta}"
            )));
        }
        Ok(DiscrepancyRule { tau, delta })
    }

    pub fn threshold(&self) -> f64 {
        self.tau * self.delta
    }

    /// Smallest admissible `tau` for tangential-cone constant `eta`.
    pub fn tau_lower_bound(eta: f64) -> f64 {
        (1.0 + eta) / (1.0 - eta)
    }

    /// Whether `tau` clears `(1 + eta) / (1 - eta)`.
    pub fn admissible_for(&self, eta: f64) -> bool {
        eta < 1.0 && self.tau > Self::tau_lower_bound(eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopReport {
    pub t_star: f64,
    pub residual_at_stop: f64,
    pub steps_taken: usize,
    pub refined: bool,
}

/// Inclusive discrepancy test.
pub fn should_stop(rule: &DiscrepancyRule, residual: f64) -> bool {
    residual <= rule.threshold()
}

/// Result of localizing the discrepancy crossing inside one step.
#[derive(Debug, Clone)]
pub struct Crossing {
    /// Fraction of the last step, in `(0, 1]`.
    pub alpha: f64,
    pub t_star: f64,
    pub residual: f64,
    pub state: DualState,
    pub bisections: usize,
}

const MAX_BISECTIONS: usize = 40;

/// Bisects the step fraction `alpha` so that a partial step of size
/// `alpha * dt_last` from `before` lands on the discrepancy level.
///
/// Always returns a state on the stopping side (`residual <= tau * delta`);
/// bisection ends once that residual is within `rel_tol * tau * delta` of the
/// level or after 40 halvings.
pub fn refine_crossing(
    problem: &Problem,
    tab: &ButcherTableau,
    policy: &StepPolicy,
    before: &DualState,
    dt_last: f64,
    rule: &DiscrepancyRule,
    rel_tol: f64,
) -> Result<Crossing> {
    let target = rule.threshold();
    let close = |r: f64| target - r <= rel_tol * target;

    let full = rk_step(problem, tab, before, dt_last, policy)?;
    let r_full = problem.residual(full.x.view())?;
    let mut best = Crossing {
        alpha: 1.0,
        t_star: full.t,
        residual: r_full,
        state: full,
        bisections: 0,
    };
    if r_full > target || close(r_full) {
        return Ok(best);
    }

    let (mut lo, mut hi) = (0.0, 1.0);
    for i in 1..=MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let st = rk_step(problem, tab, before, mid * dt_last, policy)?;
        let r = problem.residual(st.x.view())?;
        if r <= target {
            hi = mid;
            best = Crossing {
                alpha: mid,
                t_star: st.t,
                residual: r,
                state: st,
                bisections: i,
            };
            if close(r) {
                break;
            }
        } else {
            lo = mid;
            best.bisections = i;
        }
    }
    Ok(best)
}

/// `phi = D_{xi(t)} Theta(x_hat, x(t))`.
pub fn phi(penalty: &Penalty, x_hat: ArrayView1<f64>, state: &DualState) -> Result<f64> {
    penalty.bregman(x_hat, state.x.view(), state.xi.view())
}

/// Trapezoidal estimate of `int |F(x(t)) - y_delta|^2 dt` over the recorded horizon.
pub fn residual_square_integral(traj: &Trajectory) -> f64 {
    traj.samples
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].residual.powi(2) + w[1].residual.powi(2)))
        .sum()
}
