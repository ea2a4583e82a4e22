use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::Serialize;

use super::config::{ExperimentKind, OperatorName, PenaltyName, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    linear_stability_constant, make_noisy, order_study, rate_study, sparse_recovery, trajectory_csv, tv_recovery,
    well_conditioned_matrix, RateStudyConfig, ReferenceSolution, Setup, SparseDemoConfig, TvDemoConfig,
};
use crate::flow::{integrate, Event, Outcome, Problem, StepPolicy, Stopping, Trajectory};
use crate::operators::{Operator, OperatorKind};
use crate::penalty::Penalty;
use crate::stopping::DiscrepancyRule;

const DEFAULT_COND: f64 = 10.0;
const DEFAULT_GAMMA: f64 = 0.1;
const DEFAULT_AUTOCONV_X0: f64 = 0.5;

/// Process exit code for a finished run.
pub fn exit_code(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::StoppedByDiscrepancy => 0,
        Outcome::MaxStepsReached => 2,
        Outcome::Aborted => 3,
    }
}

/// Worst of several outcomes: abort over max-steps over a clean stop.
fn worst(outcomes: impl IntoIterator<Item = Outcome>) -> Outcome {
    outcomes
        .into_iter()
        .max_by_key(|o| exit_code(*o))
        .unwrap_or(Outcome::StoppedByDiscrepancy)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    /// One-paragraph human-readable summary.
    pub message: String,
}

/// Comma- or whitespace-separated rows; `#` starts a comment line.
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: String| Error::InvalidParameter(format!("{}: {msg}", path.display()));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(bad(format!("line {} has {} entries, expected {}", lineno + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    let (m, n) = (rows.len(), rows[0].len());
    Array2::from_shape_vec((m, n), rows.into_iter().flatten().collect()).map_err(|e| bad(e.to_string()))
}

/// All numbers of a matrix file, row by row.
pub fn load_vector(path: &Path) -> Result<Array1<f64>> {
    Ok(Array1::from_iter(load_matrix(path)?))
}

fn write(path: PathBuf, contents: &str, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents)?;
    artifacts.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary types serialize");
    s.push('\n');
    s
}

/// Forward operator without the ball, which depends on the reference solution.
fn base_operator(cfg: &RunConfig) -> Result<Operator> {
    let op = &cfg.operator;
    match op.kind {
        OperatorName::DenseLinear => {
            let m = match &op.matrix_path {
                Some(p) => load_matrix(&cfg.resolve(p))?,
                None => well_conditioned_matrix(
                    op.n.expect("validated"),
                    op.cond.unwrap_or(DEFAULT_COND),
                    op.matrix_seed,
                )?,
            };
            Operator::dense_linear(m)
        }
        OperatorName::DiagonalCubic => {
            Operator::diagonal_cubic(op.gamma.unwrap_or(DEFAULT_GAMMA), op.n.expect("validated"))
        }
        OperatorName::AutoConvolution => Operator::auto_convolution(op.n.expect("validated")),
    }
}

fn build_penalty(cfg: &RunConfig, n: usize) -> Result<Penalty> {
    let beta = || cfg.penalty.beta.expect("validated");
    match cfg.penalty.kind {
        PenaltyName::Quadratic => Ok(Penalty::quadratic()),
        PenaltyName::ElasticNet => Penalty::elastic_net(beta()),
        PenaltyName::TvQuadratic => Penalty::tv_quadratic(beta(), n),
    }
}

fn build_reference(cfg: &RunConfig, n: usize, required: bool) -> Result<Option<ReferenceSolution>> {
    let e = &cfg.experiment;
    let spec = match (&e.reference, required || e.data.is_none()) {
        (Some(r), _) => r.as_str(),
        (None, true) => "smooth",
        (None, false) => return Ok(None),
    };
    let r = match spec {
        "smooth" => ReferenceSolution::smooth(n, e.amplitude),
        "sparse" => ReferenceSolution::sparse(n, e.support, e.seed)?,
        "piecewise" => ReferenceSolution::piecewise(n),
        "zero" => ReferenceSolution::zero(n),
        path => ReferenceSolution::loaded(load_vector(&cfg.resolve(Path::new(path)))?),
    };
    Ok(Some(r))
}

fn build_policy(cfg: &RunConfig) -> StepPolicy {
    let f = &cfg.flow;
    StepPolicy {
        mode: f.step_mode,
        dt: f.dt,
        mu: f.mu,
        max_steps: f.max_steps,
        stage_tol: f.stage_tol,
        stage_max_iter: f.stage_max_iter,
        record_stride: f.record_stride,
    }
}

/// Places the ball, applies declared constants and estimates `eta` on request.
fn finish_operator(cfg: &RunConfig, op: Operator, penalty: &Penalty, reference: Option<&ReferenceSolution>) -> Result<Operator> {
    let oc = &cfg.operator;
    let n = op.domain_dim();
    let x0 = match (&oc.x0, oc.kind) {
        (Some(v), _) => Array1::from(v.clone()),
        // L(0) = 0 for the autoconvolution, so the flow would never leave the origin
        (None, OperatorName::AutoConvolution) => Array1::from_elem(n, DEFAULT_AUTOCONV_X0),
        (None, _) => Array1::zeros(n),
    };
    let op = op.with_ball(x0, 1.0)?;
    let rho = match (oc.rho, reference) {
        (Some(r), _) => r,
        (None, Some(reference)) => Setup::new(op.clone(), penalty.clone(), reference.clone())?.admissible_rho()?,
        (None, None) => 1.0,
    };
    let x0 = op.meta().x0.clone();
    let mut op = op.with_ball(x0, rho)?;
    if let Some(c0) = oc.c0_bound {
        op = op.with_c0(c0)?;
    }
    if let Some(eta) = oc.eta {
        op = op.with_eta(eta)?;
    } else if oc.eta_samples > 0 {
        let est = op.estimate_eta(oc.eta_samples, cfg.experiment.seed)?;
        log::info!("estimated eta = {est:.6} from {} pairs", oc.eta_samples);
        if est < 1.0 {
            op = op.with_eta(est)?;
        } else {
            log::warn!("estimated eta = {est:.3} is not below 1; the tangential cone condition fails on this ball");
        }
    }
    let eta = op.meta().eta;
    if cfg.stop.tau <= DiscrepancyRule::tau_lower_bound(eta) {
        log::warn!(
            "tau = {} does not exceed (1 + eta) / (1 - eta) = {:.6}; convergence is not guaranteed",
            cfg.stop.tau,
            DiscrepancyRule::tau_lower_bound(eta)
        );
    }
    Ok(op)
}

fn build_setup(cfg: &RunConfig, require_reference: bool) -> Result<(Setup, bool)> {
    let op = base_operator(cfg)?;
    let n = op.domain_dim();
    let penalty = build_penalty(cfg, n)?;
    let reference = build_reference(cfg, n, require_reference)?;
    let op = finish_operator(cfg, op, &penalty, reference.as_ref())?;
    let has_reference = reference.is_some();
    let reference = reference.unwrap_or_else(|| ReferenceSolution::zero(n));
    let mut setup = Setup::new(op, penalty, reference)?;
    setup.tableau = cfg.flow_tableau()?;
    setup.policy = build_policy(cfg);
    setup.tau = cfg.stop.tau;
    setup.refine = cfg.stop.refine;
    setup.refine_tol = cfg.stop.refine_tol;
    Ok((setup, has_reference))
}

#[derive(Serialize)]
struct SingleSummary<'a> {
    experiment: &'static str,
    stop_reason: Outcome,
    t_star: Option<f64>,
    steps: usize,
    final_time: f64,
    final_residual: f64,
    residual_at_stop: Option<f64>,
    tau: f64,
    delta: f64,
    threshold: f64,
    c0: f64,
    eta: f64,
    rho: f64,
    step_size: f64,
    final_phi: Option<f64>,
    events: &'a [Event],
    final_x: Vec<f64>,
}

fn single(cfg: &RunConfig, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<(Outcome, String)> {
    let (setup, has_reference) = build_setup(cfg, false)?;
    let delta = cfg.stop.delta;
    let trajectory: Trajectory = match &cfg.experiment.data {
        Some(path) => {
            let y_delta = load_vector(&cfg.resolve(path))?;
            let problem = Problem::new(setup.operator.clone(), setup.penalty.clone(), y_delta)?;
            let stopping = Stopping {
                rule: Some(DiscrepancyRule::new(setup.tau, delta)?),
                refine: setup.refine,
                refine_tol: setup.refine_tol,
            };
            let reference = has_reference.then(|| setup.reference.x_dagger.view());
            integrate(&problem, &setup.tableau, &setup.policy, &stopping, reference)?
        }
        None => setup.solve(delta, cfg.experiment.seed)?.trajectory,
    };

    write(out.join("trajectory.csv"), &trajectory_csv(&trajectory), artifacts)?;
    let meta = setup.operator.meta();
    let last = traj_last(&trajectory);
    let summary = SingleSummary {
        experiment: ExperimentKind::Single.as_str(),
        stop_reason: trajectory.outcome,
        t_star: trajectory.stop.map(|s| s.t_star),
        steps: trajectory.steps(),
        final_time: trajectory.final_state().t,
        final_residual: trajectory.final_residual(),
        residual_at_stop: trajectory.stop.map(|s| s.residual_at_stop),
        tau: setup.tau,
        delta,
        threshold: setup.tau * delta,
        c0: meta.c0,
        eta: meta.eta,
        rho: meta.rho,
        step_size: setup.policy.step_size(meta.c0),
        final_phi: last,
        events: &trajectory.events,
        final_x: trajectory.final_state().x.to_vec(),
    };
    write(out.join("summary.json"), &to_json(&summary), artifacts)?;

    let msg = match trajectory.stop {
        Some(s) => format!(
            "stopped by discrepancy at T* = {:.6e} after {} steps, residual {:.6e} <= {:.6e}",
            s.t_star,
            s.steps_taken,
            s.residual_at_stop,
            setup.tau * delta
        ),
        None => format!(
            "{} after {} steps, final residual {:.6e}",
            serde_json::to_value(trajectory.outcome).expect("serializable"),
            trajectory.steps(),
            trajectory.final_residual()
        ),
    };
    Ok((trajectory.outcome, msg))
}

fn traj_last(t: &Trajectory) -> Option<f64> {
    t.samples.last().and_then(|s| s.phi)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    experiment: &'static str,
    stop_reason: Outcome,
    slope: Option<f64>,
    nu: f64,
    tau: f64,
    r_f: Option<f64>,
    bounds_hold: bool,
    table: &'a crate::experiments::RateTable,
}

fn sweep(cfg: &RunConfig, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<(Outcome, String)> {
    let (setup, _) = build_setup(cfg, true)?;
    let e = &cfg.experiment;
    let r_f = match (e.r_f, setup.operator.kind(), cfg.penalty.kind) {
        (Some(r), _, _) => Some(r),
        (None, OperatorKind::DenseLinear { matrix }, PenaltyName::Quadratic) if e.nu == 2.0 => {
            let r = linear_stability_constant(matrix)?;
            log::info!("using R_F = |M^-1|^2 / 2 = {r:.6e}");
            Some(r)
        }
        _ => None,
    };
    let rc = RateStudyConfig::new(e.deltas.clone(), e.nu, r_f, e.seed)?;
    let table = rate_study(&setup, &rc)?;
    write(out.join("rate_table.csv"), &table.to_csv(), artifacts)?;
    let outcome = worst(table.rows.iter().map(|r| r.outcome));
    let summary = SweepSummary {
        experiment: ExperimentKind::RateSweep.as_str(),
        stop_reason: outcome,
        slope: table.slope,
        nu: table.nu,
        tau: table.tau,
        r_f,
        bounds_hold: table.bounds_hold(),
        table: &table,
    };
    write(out.join("summary.json"), &to_json(&summary), artifacts)?;
    let slope = table.slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "absent".into());
    let msg = format!(
        "rate sweep over {} noise levels: fitted slope {slope}, per-row bounds {}",
        table.rows.len(),
        if table.bounds_hold() { "hold" } else { "VIOLATED" }
    );
    Ok((outcome, msg))
}

fn order(cfg: &RunConfig, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<(Outcome, String)> {
    let (setup, _) = build_setup(cfg, cfg.experiment.data.is_none())?;
    let OperatorKind::DenseLinear { matrix } = setup.operator.kind() else {
        return Err(Error::Config {
            key: "operator.kind".into(),
            reason: "order_study needs dense_linear".into(),
        });
    };
    let e = &cfg.experiment;
    let y_delta = match &e.data {
        Some(p) => load_vector(&cfg.resolve(p))?,
        None => {
            make_noisy(&setup.exact_data()?, cfg.stop.delta, e.seed, setup.operator.range_metric())?.y_delta
        }
    };
    let tableaux = e
        .tableaux
        .iter()
        .map(|t| Ok((t.clone(), cfg.tableau_from("experiment.tableaux", t)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = order_study(matrix, &y_delta, &tableaux, &e.dts, e.horizon)?;
    write(out.join("order_table.csv"), &table.to_csv(), artifacts)?;
    write(out.join("summary.json"), &to_json(&table), artifacts)?;
    let slopes: Vec<String> = table
        .slopes
        .iter()
        .map(|(n, s)| format!("{n}: {}", s.map(|v| format!("{v:.4}")).unwrap_or_else(|| "absent".into())))
        .collect();
    Ok((Outcome::StoppedByDiscrepancy, format!("order study slopes: {}", slopes.join(", "))))
}

#[derive(Serialize)]
struct DemoSummary {
    experiment: &'static str,
    sparse: crate::experiments::SparseReport,
    tv: crate::experiments::TvReport,
}

fn demo(cfg: &RunConfig, out: &Path, artifacts: &mut Vec<PathBuf>) -> Result<(Outcome, String)> {
    let e = &cfg.experiment;
    let defaults = SparseDemoConfig::default();
    let sc = SparseDemoConfig {
        n: cfg.operator.n.unwrap_or(defaults.n),
        support: e.support,
        delta: cfg.stop.delta,
        seed: e.seed,
        beta: match cfg.penalty.kind {
            PenaltyName::ElasticNet => cfg.penalty.beta.unwrap_or(defaults.beta),
            _ => defaults.beta,
        },
        cond: cfg.operator.cond.unwrap_or(defaults.cond),
        tau: cfg.stop.tau,
        max_steps: cfg.flow.max_steps,
    };
    let tv_defaults = TvDemoConfig::default();
    let tc = TvDemoConfig {
        n: sc.n.max(2),
        delta: sc.delta,
        seed: sc.seed,
        beta: match cfg.penalty.kind {
            PenaltyName::TvQuadratic => cfg.penalty.beta.unwrap_or(tv_defaults.beta),
            _ => tv_defaults.beta,
        },
        cond: sc.cond,
        tau: sc.tau,
        max_steps: sc.max_steps,
    };
    let summary = DemoSummary {
        experiment: ExperimentKind::SparseDemo.as_str(),
        sparse: sparse_recovery(&sc)?,
        tv: tv_recovery(&tc)?,
    };
    write(out.join("summary.json"), &to_json(&summary), artifacts)?;
    let msg = format!(
        "elastic net precision {:.3} recall {:.3}; quadratic precision {:.3} recall {:.3}; TV ratio {:.4}",
        summary.sparse.elastic_net.precision,
        summary.sparse.elastic_net.recall,
        summary.sparse.quadratic.precision,
        summary.sparse.quadratic.recall,
        summary.tv.tv_ratio()
    );
    let outcome = worst(
        [summary.sparse.elastic_net.t_star, summary.sparse.quadratic.t_star, summary.tv.t_star]
            .iter()
            .map(|t| if t.is_some() || sc.delta == 0.0 { Outcome::StoppedByDiscrepancy } else { Outcome::MaxStepsReached }),
    );
    Ok((outcome, msg))
}

/// Executes the configured experiment and writes its artifacts into
/// `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let out = cfg.output.clone();
    fs::create_dir_all(&out)?;
    let mut artifacts = Vec::new();
    let (outcome, message) = match cfg.experiment.kind {
        ExperimentKind::Single => single(cfg, &out, &mut artifacts)?,
        ExperimentKind::RateSweep => sweep(cfg, &out, &mut artifacts)?,
        ExperimentKind::OrderStudy => order(cfg, &out, &mut artifacts)?,
        ExperimentKind::SparseDemo => demo(cfg, &out, &mut artifacts)?,
    };
    Ok(RunReport {
        exit_code: exit_code(outcome),
        artifacts,
        message,
    })
}
