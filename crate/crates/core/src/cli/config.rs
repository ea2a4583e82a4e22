use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::flow::{ButcherTableau, StepMode};

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyName {
    Quadratic,
    ElasticNet,
    TvQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    DenseLinear,
    DiagonalCubic,
    AutoConvolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Single,
    RateSweep,
    OrderStudy,
    SparseDemo,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Single => "single",
            ExperimentKind::RateSweep => "rate_sweep",
            ExperimentKind::OrderStudy => "order_study",
            ExperimentKind::SparseDemo => "sparse_demo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    #[serde(default = "default_penalty")]
    pub kind: PenaltyName,
    pub beta: Option<f64>,
    /// TV grid size; must match the operator dimension when given.
    pub grid_n: Option<usize>,
}

fn default_penalty() -> PenaltyName {
    PenaltyName::Quadratic
}

impl Default for PenaltySection {
    fn default() -> Self {
        PenaltySection {
            kind: PenaltyName::Quadratic,
            beta: None,
            grid_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub kind: OperatorName,
    /// CSV file with the matrix of a `dense_linear` operator.
    pub matrix_path: Option<PathBuf>,
    /// Dimension; for `dense_linear` without a matrix file a seeded
    /// well-conditioned matrix of this size is generated.
    pub n: Option<usize>,
    pub cond: Option<f64>,
    #[serde(default)]
    pub matrix_seed: u64,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub c0_bound: Option<f64>,
    pub eta: Option<f64>,
    /// When positive and `eta` is not declared, estimate it from this many pairs.
    #[serde(default)]
    pub eta_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    /// Built-in name, or `custom` together with `custom_tableau_path`.
    pub tableau: String,
    pub custom_tableau_path: Option<PathBuf>,
    pub step_mode: StepMode,
    pub dt: f64,
    pub mu: f64,
    pub max_steps: usize,
    pub stage_tol: f64,
    pub stage_max_iter: usize,
    pub record_stride: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        let p = crate::flow::StepPolicy::default();
        FlowSection {
            tableau: "explicit_euler".into(),
            custom_tableau_path: None,
            step_mode: p.mode,
            dt: p.dt,
            mu: p.mu,
            max_steps: p.max_steps,
            stage_tol: p.stage_tol,
            stage_max_iter: p.stage_max_iter,
            record_stride: p.record_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopSection {
    pub tau: f64,
    pub delta: f64,
    pub refine: bool,
    pub refine_tol: f64,
}

impl Default for StopSection {
    fn default() -> Self {
        StopSection {
            tau: crate::stopping::DiscrepancyRule::DEFAULT_TAU,
            delta: 0.0,
            refine: true,
            refine_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// `smooth`, `sparse`, `piecewise`, `zero`, or a path to a vector file.
    pub reference: Option<String>,
    pub amplitude: f64,
    pub support: usize,
    /// Path to measured data `y_delta`; replaces the generated data.
    pub data: Option<PathBuf>,
    pub deltas: Vec<f64>,
    pub dts: Vec<f64>,
    pub horizon: f64,
    pub tableaux: Vec<String>,
    pub seed: u64,
    pub nu: f64,
    pub r_f: Option<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: ExperimentKind::Single,
            reference: None,
            amplitude: 1.0,
            support: 3,
            data: None,
            deltas: Vec::new(),
            dts: Vec::new(),
            horizon: 5.0,
            tableaux: vec!["explicit_euler".into(), "heun".into(), "implicit_euler".into()],
            seed: 0,
            nu: 2.0,
            r_f: None,
        }
    }
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub penalty: PenaltySection,
    pub operator: OperatorSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub stop: StopSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

fn default_log_level() -> String {
    "info".into()
}

const LOG_LEVELS: [&str; 6] = ["off", "error", "warn", "info", "debug", "trace"];
const REFERENCE_SHAPES: [&str; 4] = ["smooth", "sparse", "piecewise", "zero"];

/// Reads `path`, applies `key=value` overrides and validates the result.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err("<file>", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, overrides, &base)
}

/// [`parse_config`] on in-memory text, resolving paths against `base_dir`.
pub fn parse_config_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err("<file>", e.message()))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let mut cfg: RunConfig = serde_path_to_error::deserialize(table).map_err(|e| {
        let key = e.path().to_string();
        config_err(&key, e.into_inner().message())
    })?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

/// Sets the dotted `key` to `value`, read as a TOML value when it parses as
/// one and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(assignment, "override must have the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(key, "empty key segment"));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(key, format!("`{part}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn existing(&self, key: &str, path: &Path) -> Result<()> {
        let p = self.resolve(path);
        if p.is_file() {
            Ok(())
        } else {
            Err(config_err(key, format!("file not found: {}", p.display())))
        }
    }

    /// The integrator tableau selected in `[flow]`.
    pub fn flow_tableau(&self) -> Result<ButcherTableau> {
        match (self.flow.tableau.as_str(), &self.flow.custom_tableau_path) {
            ("custom", Some(p)) => {
                self.existing("flow.custom_tableau_path", p)?;
                ButcherTableau::from_file(&self.resolve(p)).map_err(|e| config_err("flow.custom_tableau_path", e.to_string()))
            }
            ("custom", None) => Err(config_err("flow.custom_tableau_path", "required when tableau = \"custom\"")),
            (name, None) => ButcherTableau::by_name(name).ok_or_else(|| {
                config_err(
                    "flow.tableau",
                    format!("unknown tableau `{name}`; expected explicit_euler, implicit_euler, heun or custom"),
                )
            }),
            (_, Some(_)) => Err(config_err("flow.custom_tableau_path", "only used with tableau = \"custom\"")),
        }
    }

    /// Built-in tableau or one read from a file.
    pub fn tableau_from(&self, key: &str, spec: &str) -> Result<ButcherTableau> {
        if let Some(t) = ButcherTableau::by_name(spec) {
            return Ok(t);
        }
        let path = self.resolve(Path::new(spec));
        if !path.is_file() {
            return Err(config_err(
                key,
                format!("`{spec}` is neither a built-in tableau nor an existing file"),
            ));
        }
        ButcherTableau::from_file(&path).map_err(|e| config_err(key, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !LOG_LEVELS.contains(&self.log_level.as_str()) {
            return Err(config_err("log_level", format!("must be one of {LOG_LEVELS:?}")));
        }

        let beta = self.penalty.beta;
        match self.penalty.kind {
            PenaltyName::Quadratic => {}
            PenaltyName::ElasticNet | PenaltyName::TvQuadratic => match beta {
                None if self.experiment.kind != ExperimentKind::SparseDemo => {
                    return Err(config_err("penalty.beta", "required for this penalty"))
                }
                Some(b) if !(b.is_finite() && b >= 0.0) => {
                    return Err(config_err("penalty.beta", "beta must be finite and nonnegative"))
                }
                _ => {}
            },
        }

        let op = &self.operator;
        let positive = |key: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(x) if !(x.is_finite() && x > 0.0) => Err(config_err(key, "must be positive")),
                _ => Ok(()),
            }
        };
        positive("operator.rho", op.rho)?;
        positive("operator.c0_bound", op.c0_bound)?;
        if let Some(c) = op.cond {
            if !(c.is_finite() && c >= 1.0) {
                return Err(config_err("operator.cond", "condition number must be >= 1"));
            }
        }
        if let Some(eta) = op.eta {
            if !(0.0..1.0).contains(&eta) {
                return Err(config_err("operator.eta", "eta must lie in [0, 1)"));
            }
        }
        match op.kind {
            OperatorName::DenseLinear => match &op.matrix_path {
                Some(m) => self.existing("operator.matrix_path", m)?,
                None if op.n.is_none() => {
                    return Err(config_err("operator.matrix_path", "dense_linear needs a matrix file or `n`"))
                }
                None => {}
            },
            OperatorName::DiagonalCubic => {
                if op.n.unwrap_or(0) == 0 {
                    return Err(config_err("operator.n", "diagonal_cubic needs a positive dimension"));
                }
                if let Some(g) = op.gamma {
                    if !(g.is_finite() && g >= 0.0) {
                        return Err(config_err("operator.gamma", "gamma must be finite and nonnegative"));
                    }
                }
            }
            OperatorName::AutoConvolution => {
                if op.n.unwrap_or(0) < 2 {
                    return Err(config_err("operator.n", "auto_convolution needs n >= 2"));
                }
            }
        }
        if op.kind != OperatorName::DenseLinear && op.matrix_path.is_some() {
            return Err(config_err("operator.matrix_path", "only dense_linear takes a matrix"));
        }
        if let (Some(g), Some(n)) = (self.penalty.grid_n, op.n) {
            if g != n {
                return Err(config_err("penalty.grid_n", format!("grid_n = {g} differs from operator.n = {n}")));
            }
        }
        if self.penalty.grid_n.is_some() && self.penalty.kind != PenaltyName::TvQuadratic {
            return Err(config_err("penalty.grid_n", "only tv_quadratic takes a grid size"));
        }

        let f = &self.flow;
        self.flow_tableau()?;
        if !(f.dt.is_finite() && f.dt > 0.0) {
            return Err(config_err("flow.dt", "dt must be positive"));
        }
        if !(f.mu.is_finite() && f.mu > 0.0) {
            return Err(config_err("flow.mu", "mu must be positive"));
        }
        if !(f.stage_tol.is_finite() && f.stage_tol > 0.0) {
            return Err(config_err("flow.stage_tol", "stage_tol must be positive"));
        }
        if f.stage_max_iter == 0 {
            return Err(config_err("flow.stage_max_iter", "must be at least 1"));
        }
        if f.record_stride == 0 {
            return Err(config_err("flow.record_stride", "must be at least 1"));
        }

        let s = &self.stop;
        if !(s.tau.is_finite() && s.tau > 1.0) {
            return Err(config_err("stop.tau", "tau must exceed 1"));
        }
        if !(s.delta.is_finite() && s.delta >= 0.0) {
            return Err(config_err("stop.delta", "delta must be finite and nonnegative"));
        }
        if !(s.refine_tol.is_finite() && s.refine_tol > 0.0 && s.refine_tol < 1.0) {
            return Err(config_err("stop.refine_tol", "must lie in (0, 1)"));
        }

        let e = &self.experiment;
        if let Some(r) = &e.reference {
            if !REFERENCE_SHAPES.contains(&r.as_str()) {
                self.existing("experiment.reference", Path::new(r))?;
            }
        }
        if let Some(d) = &e.data {
            self.existing("experiment.data", d)?;
        }
        if !(e.horizon.is_finite() && e.horizon > 0.0) {
            return Err(config_err("experiment.horizon", "horizon must be positive"));
        }
        match e.kind {
            ExperimentKind::Single => {}
            ExperimentKind::RateSweep => {
                if e.data.is_some() {
                    return Err(config_err("experiment.data", "a rate sweep generates its own data"));
                }
                crate::experiments::RateStudyConfig::new(e.deltas.clone(), e.nu, e.r_f, e.seed)
                    .map_err(|err| config_err("experiment.deltas", err.to_string()))?;
            }
            ExperimentKind::OrderStudy => {
                if op.kind != OperatorName::DenseLinear {
                    return Err(config_err("operator.kind", "order_study needs dense_linear"));
                }
                if self.penalty.kind != PenaltyName::Quadratic {
                    return Err(config_err("penalty.kind", "order_study needs the quadratic penalty"));
                }
                if e.dts.is_empty() || e.dts.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                    return Err(config_err("experiment.dts", "need at least one positive step size"));
                }
                if e.tableaux.is_empty() {
                    return Err(config_err("experiment.tableaux", "need at least one tableau"));
                }
                for t in &e.tableaux {
                    self.tableau_from("experiment.tableaux", t)?;
                }
            }
            ExperimentKind::SparseDemo => {
                if e.support > op.n.unwrap_or(20) {
                    return Err(config_err("experiment.support", "support exceeds the dimension"));
                }
            }
        }
        Ok(())
    }
}
