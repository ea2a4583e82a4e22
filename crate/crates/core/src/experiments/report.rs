use crate::flow::Trajectory;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Blank for `None`.
pub(crate) fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub const TRAJECTORY_HEADER: &str = "t,residual,phi,theta_value,step_size";

/// One line per recorded sample; `phi` is blank without a reference solution.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for s in &traj.samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_float(s.t),
            fmt_float(s.residual),
            fmt_opt(s.phi),
            fmt_float(s.theta),
            fmt_float(s.step_size)
        ));
    }
    out
}
