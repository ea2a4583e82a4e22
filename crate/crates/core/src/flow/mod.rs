//! Runge-Kutta integration of the dual gradient flow
//!
//! ```text
//! d xi / dt = L(x)^* (y_delta - F(x)),    x = grad Theta*(xi),
//! ```
//!
//! started from `x0` and a subgradient `xi0` of `Theta` at `x0`. Explicit Euler
//! reproduces the Landweber iteration with penalty, implicit Euler its implicit
//! counterpart, and any consistent tableau gives a new iterative method.

mod tableau;

pub use tableau::{validate_tableau, ButcherTableau, Order, TableauReport};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::Operator;
use crate::penalty::Penalty;
use crate::stopping::{phi, refine_crossing, should_stop, DiscrepancyRule, StopReport};

/// Operator, penalty and noisy data of one inverse problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub operator: Operator,
    pub penalty: Penalty,
    pub y_delta: Array1<f64>,
}

impl Problem {
    /// The penalty is moved into the operator's domain metric.
    pub fn new(operator: Operator, penalty: Penalty, y_delta: Array1<f64>) -> Result<Self> {
        check_dim("data", operator.range_dim(), y_delta.len())?;
        let penalty = penalty.with_metric(operator.domain_metric());
        // TV penalties carry their own grid size
        penalty.value(operator.meta().x0.view())?;
        Ok(Problem {
            operator,
            penalty,
            y_delta,
        })
    }

    /// `|F(x) - y_delta|` in the range metric.
    pub fn residual(&self, x: ArrayView1<f64>) -> Result<f64> {
        let r = self.operator.apply(x)? - &self.y_delta;
        Ok(self.operator.range_metric().norm(r.view()))
    }

    /// Initial pair `(xi0, x0)` with `xi0` the canonical subgradient at the ball center.
    pub fn initial_state(&self) -> Result<DualState> {
        let x0 = self.operator.meta().x0.view();
        let xi = self.penalty.select_subgradient(x0)?;
        DualState::from_dual(&self.penalty, 0.0, xi)
    }
}

/// Dual iterate `xi(t)` and its primal image `x(t) = grad Theta*(xi(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub t: f64,
    pub xi: Array1<f64>,
    pub x: Array1<f64>,
}

impl DualState {
    pub fn from_dual(penalty: &Penalty, t: f64, xi: Array1<f64>) -> Result<Self> {
        let x = penalty.conjugate_gradient(xi.view())?;
        Ok(DualState { t, xi, x })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Use `dt` as given.
    Fixed,
    /// Use `mu / C0^2`.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub mode: StepMode,
    pub dt: f64,
    pub mu: f64,
    pub max_steps: usize,
    pub stage_tol: f64,
    pub stage_max_iter: usize,
    /// Keep every `record_stride`-th state in the trajectory (the last state is always kept).
    pub record_stride: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy {
            mode: StepMode::Scaled,
            dt: 0.1,
            mu: 0.9,
            max_steps: 10_000,
            stage_tol: 1e-12,
            stage_max_iter: 200,
            record_stride: 1,
        }
    }
}

impl StepPolicy {
    pub fn fixed(dt: f64, max_steps: usize) -> Self {
        StepPolicy {
            mode: StepMode::Fixed,
            dt,
            max_steps,
            ..Default::default()
        }
    }

    pub fn scaled(mu: f64, max_steps: usize) -> Self {
        StepPolicy {
            mode: StepMode::Scaled,
            mu,
            max_steps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self.mode {
            StepMode::Fixed if !(self.dt.is_finite() && self.dt > 0.0) => {
                bad(format!("dt must be positive, got {}", self.dt))
            }
            StepMode::Scaled if !(self.mu > 0.0 && self.mu <= 1.0) => {
                bad(format!("mu must lie in (0, 1], got {}", self.mu))
            }
            _ if self.stage_tol.is_nan() || self.stage_tol <= 0.0 => bad(format!("stage_tol must be positive, got {}", self.stage_tol)),
            _ if self.stage_max_iter == 0 => bad("stage_max_iter must be positive".into()),
            _ => Ok(()),
        }
    }

    /// Base step size for an operator with norm bound `c0`.
    pub fn step_size(&self, c0: f64) -> f64 {
        match self.mode {
            StepMode::Fixed => self.dt,
            StepMode::Scaled => self.mu / (c0 * c0),
        }
    }
}

/// `Psi(xi) = L(x)^* (y_delta - F(x))` at `x = grad Theta*(xi)`.
pub fn rhs(problem: &Problem, xi: ArrayView1<f64>) -> Result<Array1<f64>> {
    let x = problem.penalty.conjugate_gradient(xi)?;
    rhs_at(problem, x.view())
}

fn rhs_at(problem: &Problem, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let r = problem.operator.apply(x)? - &problem.y_delta;
    let mut g = problem.operator.deriv_adjoint_apply(x, r.view())?;
    g.mapv_inplace(|v| -v);
    Ok(g)
}

/// One Runge-Kutta step of size `dt` from `state`.
///
/// Implicit stages are solved by a relaxed Picard iteration
/// `k <- (1 - w) k + w (xi_n + dt sum_j a_ij Psi(k_j))` with
/// `w = 2 / (2 + dt |A|_inf C0^2)`, stopped once the fixed-point defect is
/// below `stage_tol / max(1, dt |A|_inf C0^2)`.
pub fn rk_step(
    problem: &Problem,
    tab: &ButcherTableau,
    state: &DualState,
    dt: f64,
    policy: &StepPolicy,
) -> Result<DualState> {
    let s = tab.stages();
    let a = tab.a();
    let metric = problem.operator.domain_metric();

    let psi: Vec<Array1<f64>> = if tab.is_explicit() {
        let mut psi: Vec<Array1<f64>> = Vec::with_capacity(s);
        for i in 0..s {
            let mut k = state.xi.clone();
            for (j, p) in psi.iter().enumerate() {
                let aij = a[[i, j]];
                if aij != 0.0 {
                    k.scaled_add(dt * aij, p);
                }
            }
            psi.push(rhs(problem, k.view())?);
        }
        psi
    } else {
        let c0 = problem.operator.meta().c0;
        let stiffness = dt * tab.coupling() * c0 * c0;
        let omega = 2.0 / (2.0 + stiffness);
        let tol = policy.stage_tol / stiffness.max(1.0);

        let mut k: Vec<Array1<f64>> = vec![state.xi.clone(); s];
        let mut last_update = f64::INFINITY;
        let mut converged = None;
        for _ in 0..policy.stage_max_iter {
            let psi = k
                .iter()
                .map(|ki| rhs(problem, ki.view()))
                .collect::<Result<Vec<_>>>()?;
            let mut defect = 0.0f64;
            let mut mapped = Vec::with_capacity(s);
            for (i, ki) in k.iter().enumerate() {
                let mut g = state.xi.clone();
                for (j, p) in psi.iter().enumerate() {
                    let aij = a[[i, j]];
                    if aij != 0.0 {
                        g.scaled_add(dt * aij, p);
                    }
                }
                defect = defect.max(metric.dist(g.view(), ki.view()));
                mapped.push(g);
            }
            last_update = defect;
            if !defect.is_finite() {
                break;
            }
            if defect <= tol {
                converged = Some(psi);
                break;
            }
            for (ki, g) in k.iter_mut().zip(mapped) {
                *ki *= 1.0 - omega;
                ki.scaled_add(omega, &g);
            }
        }
        match converged {
            Some(psi) => psi,
            None => {
                return Err(Error::StageNonconvergence {
                    iterations: policy.stage_max_iter,
                    last_update,
                })
            }
        }
    };

    let mut xi = state.xi.clone();
    for (bi, p) in tab.b().iter().zip(&psi) {
        if *bi != 0.0 {
            xi.scaled_add(dt * bi, p);
        }
    }
    DualState::from_dual(&problem.penalty, state.t + dt, xi)
}

/// Why an integration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    StoppedByDiscrepancy,
    MaxStepsReached,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BallExitWarning,
    StageNonconvergence,
    StoppedByDiscrepancy,
    MaxStepsReached,
    Aborted,
    /// The Bregman distance to the reference solution increased while the
    /// residual was above `(1 + eta) / (1 - eta) * delta`.
    MonotonicityViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub residual: f64,
    /// Step that produced this sample; zero for the initial state.
    pub step_size: f64,
    /// Bregman distance from the reference solution, when one is supplied.
    pub phi: Option<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub states: Vec<DualState>,
    pub events: Vec<Event>,
    pub stop: Option<StopReport>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn final_state(&self) -> &DualState {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_residual(&self) -> f64 {
        self.samples.last().map(|s| s.residual).unwrap_or(f64::NAN)
    }

    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn has_event(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }
}

/// Discrepancy stopping configuration for [`integrate`]. `rule: None` runs to
/// `max_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stopping {
    pub rule: Option<DiscrepancyRule>,
    pub refine: bool,
    pub refine_tol: f64,
}

impl Stopping {
    pub fn never() -> Self {
        Stopping {
            rule: None,
            refine: false,
            refine_tol: 1e-3,
        }
    }

    pub fn discrepancy(rule: DiscrepancyRule) -> Self {
        Stopping {
            rule: Some(rule),
            refine: true,
            refine_tol: 1e-3,
        }
    }
}

const MAX_HALVINGS: usize = 10;
const MONOTONICITY_TOL: f64 = 1e-10;

/// Integrates the flow from the problem's initial pair until the stopping
/// rule fires or `policy.max_steps` steps were taken.
///
/// When `reference` is given, the Bregman distance `phi` to it is recorded at
/// every step and increases while the residual exceeds
/// `(1 + eta) / (1 - eta) * delta` are reported as events.
pub fn integrate(
    problem: &Problem,
    tab: &ButcherTableau,
    policy: &StepPolicy,
    stopping: &Stopping,
    reference: Option<ArrayView1<f64>>,
) -> Result<Trajectory> {
    let report = tab.validate();
    if !report.is_usable() {
        return Err(Error::InvalidTableau(report.to_string()));
    }
    policy.validate()?;
    if let Some(r) = reference {
        check_dim("reference solution", problem.operator.domain_dim(), r.len())?;
    }

    let op = &problem.operator;
    let pen = &problem.penalty;
    let eta = op.meta().eta;
    let delta = stopping.rule.map(|r| r.delta).unwrap_or(0.0);
    let mono_level = (1.0 + eta) / (1.0 - eta) * delta;

    let sample_of = |state: &DualState, residual: f64, step: f64| -> Result<Sample> {
        Ok(Sample {
            t: state.t,
            residual,
            step_size: step,
            phi: reference.map(|r| phi(pen, r, state)).transpose()?,
            theta: pen.value(state.x.view())?,
        })
    };

    let mut state = problem.initial_state()?;
    let mut residual = problem.residual(state.x.view())?;
    let mut samples = vec![sample_of(&state, residual, 0.0)?];
    let mut states = vec![state.clone()];
    let mut events = Vec::new();
    let mut inside = op.in_ball(state.x.view());
    if !inside {
        events.push(ball_exit(&state));
    }

    let finish = |samples, mut states: Vec<DualState>, mut events: Vec<Event>, state: DualState, stop, outcome| {
        if states.last() != Some(&state) {
            states.push(state.clone());
        }
        let kind = match outcome {
            Outcome::StoppedByDiscrepancy => EventKind::StoppedByDiscrepancy,
            Outcome::MaxStepsReached => EventKind::MaxStepsReached,
            Outcome::Aborted => EventKind::Aborted,
        };
        events.push(Event {
            t: state.t,
            kind,
            detail: None,
        });
        Trajectory {
            samples,
            states,
            events,
            stop,
            outcome,
        }
    };

    if let Some(rule) = stopping.rule {
        if should_stop(&rule, residual) {
            let stop = StopReport {
                t_star: 0.0,
                residual_at_stop: residual,
                steps_taken: 0,
                refined: false,
            };
            return Ok(finish(samples, states, events, state, Some(stop), Outcome::StoppedByDiscrepancy));
        }
    }

    let base_dt = policy.step_size(op.meta().c0);
    let stride = policy.record_stride.max(1);

    for step in 1..=policy.max_steps {
        let mut dt = base_dt;
        let mut halvings = 0;
        let mut next = loop {
            match rk_step(problem, tab, &state, dt, policy) {
                Ok(s) => break s,
                Err(Error::StageNonconvergence { iterations, last_update }) => {
                    events.push(Event {
                        t: state.t,
                        kind: EventKind::StageNonconvergence,
                        detail: Some(format!(
                            "dt={dt:.6e} iterations={iterations} last_update={last_update:.3e}"
                        )),
                    });
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Ok(finish(samples, states, events, state, None, Outcome::Aborted));
                    }
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        };
        let mut next_residual = problem.residual(next.x.view())?;
        let mut stop = None;

        if let Some(rule) = stopping.rule {
            if should_stop(&rule, next_residual) {
                let mut refined = false;
                if stopping.refine {
                    let crossing =
                        refine_crossing(problem, tab, policy, &state, dt, &rule, stopping.refine_tol)?;
                    next = crossing.state;
                    next_residual = crossing.residual;
                    dt *= crossing.alpha;
                    refined = true;
                }
                stop = Some(StopReport {
                    t_star: next.t,
                    residual_at_stop: next_residual,
                    steps_taken: step,
                    refined,
                });
            }
        }

        let sample = sample_of(&next, next_residual, dt)?;
        if let (Some(prev), Some(cur)) = (samples.last().and_then(|s: &Sample| s.phi), sample.phi) {
            if residual > mono_level && cur > prev + MONOTONICITY_TOL {
                events.push(Event {
                    t: next.t,
                    kind: EventKind::MonotonicityViolation,
                    detail: Some(format!("phi {prev:.6e} -> {cur:.6e}")),
                });
            }
        }
        samples.push(sample);

        let now_inside = op.in_ball(next.x.view());
        if inside && !now_inside {
            events.push(ball_exit(&next));
        }
        inside = now_inside;

        state = next;
        residual = next_residual;
        if step % stride == 0 {
            states.push(state.clone());
        }
        if stop.is_some() {
            return Ok(finish(samples, states, events, state, stop, Outcome::StoppedByDiscrepancy));
        }
    }

    Ok(finish(samples, states, events, state, None, Outcome::MaxStepsReached))
}

fn ball_exit(state: &DualState) -> Event {
    Event {
        t: state.t,
        kind: EventKind::BallExitWarning,
        detail: Some("iterate left B_{2 rho}(x0)".into()),
    }
}
