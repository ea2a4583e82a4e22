//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Result};
use asymreg::experiments::{
    linear_stability_constant, order_study, rate_study, showalter_oracle, sparse_recovery, trajectory_csv,
    tv_recovery, well_conditioned_matrix, RateStudyConfig, ReferenceSolution, Setup, SparseDemoConfig, TvDemoConfig,
};
use asymreg::flow::{integrate, ButcherTableau, EventKind, Order, Outcome, Problem, StepPolicy, Stopping};
use asymreg::operators::Operator;
use asymreg::penalty::Penalty;
use asymreg::stopping::residual_square_integral;
use common::{conjugate_oracle, penalty_zoo, rng, slope, uniform_vec};
use ndarray::{Array1, Array2};
use rand::Rng;

const TAU: f64 = 2.5;

struct Criterion {
    id: &'static str,
    limit: Duration,
    run: fn() -> Result<String>,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: "1", limit: Duration::from_secs(10), run: convex_suite },
        Criterion { id: "2", limit: Duration::from_secs(10), run: operator_suite },
        Criterion { id: "3", limit: Duration::from_secs(30), run: monotonicity },
        Criterion { id: "4", limit: Duration::from_secs(30), run: stopping_existence },
        Criterion { id: "5", limit: Duration::from_secs(60), run: noise_free_convergence },
        Criterion { id: "6", limit: Duration::from_secs(60), run: rate },
        Criterion { id: "7", limit: Duration::from_secs(60), run: rk_order },
        Criterion { id: "8", limit: Duration::from_secs(1), run: tableau_validation },
        Criterion { id: "9", limit: Duration::from_secs(30), run: feature_recovery },
        Criterion { id: "10", limit: Duration::from_secs(60), run: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Ok(Ok(detail)) if elapsed <= c.limit => Ok(detail),
            Ok(Ok(detail)) => Err(format!("{detail}; exceeded {:.0} s budget", c.limit.as_secs_f64())),
            Ok(Err(e)) => Err(format!("{e:#}")),
            Err(_) => Err("panicked".to_string()),
        };
        match verdict {
            Ok(detail) => println!("criterion {}: PASS ({:.2} s) {detail}", c.id, elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL ({:.2} s) {detail}", c.id, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// 1. Convex analysis

fn convex_suite() -> Result<String> {
    const INSTANCES: usize = 1000;
    let mut r = rng(1);
    let mut worst_fenchel = [0.0f64; 3];
    for i in 0..INSTANCES {
        let n = r.random_range(2..=50);
        for (k, (name, pen)) in penalty_zoo(n).into_iter().enumerate() {
            let xi = uniform_vec(&mut r, n, 4.0);
            let xi_bar = uniform_vec(&mut r, n, 4.0);
            let z = uniform_vec(&mut r, n, 3.0);
            let x = pen.conjugate_gradient(xi.view())?;
            let x_bar = pen.conjugate_gradient(xi_bar.view())?;

            let gap = (pen.value(x.view())? + conjugate_oracle(&pen, &xi) - xi.dot(&x)).abs();
            let tol = if name == "tv_quadratic" { 1e-6 } else { 1e-8 };
            ensure!(gap <= tol, "{name} #{i}: Fenchel gap {gap:e}");
            worst_fenchel[k] = worst_fenchel[k].max(gap);

            // p-convexity at a subgradient of an arbitrary point
            let zeta = pen.select_subgradient(z.view())?;
            let d = pen.bregman(x_bar.view(), z.view(), zeta.view())?;
            let diff = &x_bar - &z;
            ensure!(d >= 0.5 * diff.dot(&diff) - 1e-10, "{name} #{i}: p-convexity {d}");

            let dx = &x - &x_bar;
            let dxi = &xi - &xi_bar;
            let (nx, nxi) = (dx.dot(&dx).sqrt(), dxi.dot(&dxi).sqrt());
            ensure!(nx <= nxi * (1.0 + 1e-12) + 1e-12, "{name} #{i}: expansion {nx} > {nxi}");

            let d = pen.bregman(x_bar.view(), x.view(), xi.view())?;
            ensure!(d <= 0.5 * nxi * nxi + 1e-9, "{name} #{i}: dual bound {d} > {}", 0.5 * nxi * nxi);

            // three points: (x_bar, xi_bar), (x, xi) and the free point z
            let lhs = pen.bregman(z.view(), x.view(), xi.view())? - pen.bregman(z.view(), x_bar.view(), xi_bar.view())?;
            let rhs = pen.bregman(x_bar.view(), x.view(), xi.view())? + (&xi - &xi_bar).dot(&(&x_bar - &z));
            ensure!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{name} #{i}: three-point {lhs} vs {rhs}");
        }
    }
    Ok(format!(
        "{INSTANCES} instances per penalty; worst Fenchel gap {:.1e}/{:.1e}/{:.1e}",
        worst_fenchel[0], worst_fenchel[1], worst_fenchel[2]
    ))
}

// ---------------------------------------------------------------------------
// 2. Adjoints and derivatives

fn operator_suite() -> Result<String> {
    const INSTANCES: usize = 200;
    let mut r = rng(2);
    let mut slopes = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    let mut linear_remainder = 0.0f64;
    for i in 0..INSTANCES {
        let n = r.random_range(2..=100);
        let m = Array2::from_shape_fn((n, n), |_| r.random_range(-1.0..1.0));
        let ops = [
            Operator::dense_linear(m)?,
            Operator::diagonal_cubic(0.1, n)?,
            Operator::auto_convolution(n)?,
        ];
        for (k, op) in ops.iter().enumerate() {
            let x = uniform_vec(&mut r, n, 1.0);
            let h = uniform_vec(&mut r, n, 1.0);
            let g = uniform_vec(&mut r, op.range_dim(), 1.0);
            let (dm, rm) = (op.domain_metric(), op.range_metric());
            let lhs = rm.dot(op.deriv_apply(x.view(), h.view())?.view(), g.view());
            let rhs = dm.dot(h.view(), op.deriv_adjoint_apply(x.view(), g.view())?.view());
            let scale = 1.0 + dm.norm(h.view()) * rm.norm(g.view());
            ensure!((lhs - rhs).abs() <= 1e-10 * scale, "operator {k} #{i}: adjoint {lhs} vs {rhs}");

            let fx = op.apply(x.view())?;
            let lin = op.deriv_apply(x.view(), h.view())?;
            let rem = |eps: f64| -> Result<f64> {
                let xp = &x + &(&h * eps);
                let res = op.apply(xp.view())? - &fx - &lin * eps;
                Ok(rm.norm(res.view()))
            };
            let (r1, r2) = (rem(1e-2)?, rem(1e-3)?);
            if k == 0 {
                // F(x + eps h) - F(x) - eps F'(x) h vanishes identically for a
                // linear map; only roundoff remains and no slope exists
                let rel = r1.max(r2) / (1.0 + rm.norm(fx.view()));
                ensure!(rel <= 1e-12, "linear remainder {rel:e} is not at roundoff level");
                linear_remainder = linear_remainder.max(rel);
            } else {
                let s = slope(1e-2, r1, 1e-3, r2);
                ensure!((s - 2.0).abs() <= 0.2, "operator {k} #{i}: Taylor slope {s}");
                let e = &mut slopes[k - 1];
                *e = (e.0.min(s), e.1.max(s));
            }
        }
    }
    Ok(format!(
        "{INSTANCES} instances per operator; Taylor slopes cubic [{:.4}, {:.4}], autoconvolution [{:.4}, {:.4}]; \
         linear remainder <= {linear_remainder:.1e}",
        slopes[0].0, slopes[0].1, slopes[1].0, slopes[1].1
    ))
}

// ---------------------------------------------------------------------------
// 3 and 4. Monotonicity and stopping on the reference problems

struct FlowCase {
    label: String,
    setup: Setup,
}

fn penalties(n: usize) -> Result<Vec<(&'static str, Penalty)>> {
    Ok(vec![
        ("quadratic", Penalty::quadratic()),
        ("elastic_net", Penalty::elastic_net(0.05)?),
        ("tv_quadratic", Penalty::tv_quadratic(0.05, n)?),
    ])
}

/// Ball with the admissible radius around `x0 = 0`; `eta` estimated when the
/// operator is nonlinear.
fn admissible_setup(op: Operator, pen: Penalty, reference: ReferenceSolution) -> Result<Setup> {
    let n = op.domain_dim();
    let probe = Setup::new(op.clone(), pen.clone(), reference.clone())?;
    let rho = probe.admissible_rho()?;
    let mut op = op.with_ball(Array1::zeros(n), rho)?;
    if !op.is_linear() {
        let eta = op.estimate_eta(2000, 11)?;
        ensure!(eta < (TAU - 1.0) / (TAU + 1.0), "estimated eta {eta} too large for tau = {TAU}");
        op = op.with_eta(eta)?;
    }
    let mut setup = Setup::new(op, pen, reference)?;
    setup.tau = TAU;
    setup.policy = StepPolicy::scaled(0.9, 200_000);
    Ok(setup)
}

fn flow_cases() -> Result<Vec<FlowCase>> {
    let n = 20;
    let m = well_conditioned_matrix(n, 10.0, 3)?;
    let mut cases = Vec::new();
    for (name, pen) in penalties(n)? {
        cases.push(FlowCase {
            label: format!("dense_linear/{name}"),
            setup: admissible_setup(Operator::dense_linear(m.clone())?, pen.clone(), ReferenceSolution::smooth(n, 1.0))?,
        });
        cases.push(FlowCase {
            label: format!("diagonal_cubic/{name}"),
            setup: admissible_setup(Operator::diagonal_cubic(0.1, n)?, pen, ReferenceSolution::smooth(n, 0.3))?,
        });
    }
    Ok(cases)
}

const DELTAS: [f64; 2] = [1e-2, 1e-3];

fn monotonicity() -> Result<String> {
    let mut worst_increase = f64::NEG_INFINITY;
    let mut runs = 0;
    for case in flow_cases()? {
        for (j, &delta) in DELTAS.iter().enumerate() {
            let traj = case.setup.solve(delta, 40 + j as u64)?.trajectory;
            ensure!(
                !traj.has_event(EventKind::MonotonicityViolation),
                "{} delta={delta:e}: monotonicity event",
                case.label
            );
            let phis: Vec<f64> = traj.samples.iter().map(|s| s.phi.expect("reference given")).collect();
            for (k, w) in phis.windows(2).enumerate() {
                let inc = w[1] - w[0];
                ensure!(inc <= 1e-10, "{} delta={delta:e}: phi rose by {inc:e} at step {}", case.label, k + 1);
                worst_increase = worst_increase.max(inc);
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs; largest per-step change of phi {worst_increase:.2e}"))
}

fn stopping_existence() -> Result<String> {
    let mut details = Vec::new();
    for case in flow_cases()? {
        let mut t_stars = Vec::new();
        for (j, &delta) in DELTAS.iter().enumerate() {
            let traj = case.setup.solve(delta, 40 + j as u64)?.trajectory;
            ensure!(
                traj.outcome == Outcome::StoppedByDiscrepancy,
                "{} delta={delta:e}: outcome {:?}",
                case.label,
                traj.outcome
            );
            let stop = traj.stop.expect("stopped runs carry a report");
            ensure!(
                stop.residual_at_stop <= TAU * delta,
                "{} delta={delta:e}: residual {} above tau*delta",
                case.label,
                stop.residual_at_stop
            );
            t_stars.push(stop.t_star);
        }
        ensure!(t_stars[1] > t_stars[0], "{}: T* not increasing: {t_stars:?}", case.label);
        details.push(format!("{} {:.3}->{:.3}", case.label, t_stars[0], t_stars[1]));
    }
    Ok(format!("T* by delta 1e-2 -> 1e-3: {}", details.join(", ")))
}

// ---------------------------------------------------------------------------
// 5. Noise-free convergence

fn noise_free_convergence() -> Result<String> {
    let n = 20;
    let mut details = Vec::new();
    for (name, pen) in penalties(n)? {
        let setup = admissible_setup(Operator::diagonal_cubic(0.1, n)?, pen, ReferenceSolution::smooth(n, 0.3))?;
        let op = setup.operator.clone();
        let eta = op.meta().eta;
        let x_dagger = setup.reference.x_dagger.clone();
        let problem = Problem::new(op.clone(), setup.penalty.clone(), setup.exact_data()?)?;
        let start = problem.initial_state()?;
        let d0 = problem.penalty.bregman(x_dagger.view(), start.x.view(), start.xi.view())?;

        let policy = StepPolicy::scaled(0.9, 100_000);
        let traj = integrate(&problem, &ButcherTableau::explicit_euler(), &policy, &Stopping::never(), None)?;
        let initial = traj.samples[0].residual;
        let hit = traj.samples.iter().position(|s| s.residual <= 1e-3 * initial);
        let Some(step) = hit else {
            bail!("{name}: residual only fell to {:.3e} of initial", traj.final_residual() / initial);
        };
        let integral = residual_square_integral(&traj);
        let bound = d0 / (1.0 - eta);
        ensure!(integral <= 1.05 * bound, "{name}: integral {integral:.6e} > 1.05 * {bound:.6e}");
        details.push(format!("{name}: 1e-3 at step {step}, integral/bound {:.4}", integral / bound));
    }
    Ok(details.join("; "))
}

// ---------------------------------------------------------------------------
// 6. Convergence rate

fn rate_setup() -> Result<(Setup, f64)> {
    let n = 20;
    let m = well_conditioned_matrix(n, 10.0, 1)?;
    let r_f = linear_stability_constant(&m)?;
    let mut setup = Setup::new(Operator::dense_linear(m)?, Penalty::quadratic(), ReferenceSolution::smooth(n, 1.0))?;
    setup.tau = TAU;
    setup.policy = StepPolicy::scaled(0.9, 1_000_000);
    Ok((setup, r_f))
}

fn rate_config(r_f: f64) -> Result<RateStudyConfig> {
    Ok(RateStudyConfig::new(vec![1e-1, 1e-2, 1e-3, 1e-4], 2.0, Some(r_f), 100)?)
}

fn rate() -> Result<String> {
    let (setup, r_f) = rate_setup()?;
    let table = rate_study(&setup, &rate_config(r_f)?)?;
    for row in &table.rows {
        ensure!(row.stopped(), "delta={:e}: did not stop", row.delta);
        ensure!(
            row.bound_holds() == Some(true),
            "delta={:e}: D = {:e} exceeds {:e}",
            row.delta,
            row.bregman_error,
            row.bound_rhs.unwrap_or(f64::NAN)
        );
    }
    let Some(s) = table.slope else { bail!("no slope") };
    ensure!(s >= 1.8, "fitted slope {s:.4} < 1.8");
    let ratio = table
        .rows
        .iter()
        .map(|r| r.bregman_error / r.bound_rhs.unwrap_or(f64::NAN))
        .fold(0.0, f64::max);
    Ok(format!("R_F = {r_f:.3}; slope {s:.4}; max D/bound {ratio:.3e}"))
}

// ---------------------------------------------------------------------------
// 7. Runge-Kutta order and stiffness

fn order_problem() -> Result<(Array2<f64>, Array1<f64>)> {
    let m = well_conditioned_matrix(10, 5.0, 2)?;
    let y = m.dot(&ReferenceSolution::smooth(10, 1.0).x_dagger);
    Ok((m, y))
}

fn order_tableaux() -> Vec<(String, ButcherTableau)> {
    vec![
        ("explicit_euler".into(), ButcherTableau::explicit_euler()),
        ("heun".into(), ButcherTableau::heun()),
        ("implicit_euler".into(), ButcherTableau::implicit_euler()),
    ]
}

const ORDER_DTS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn rk_order() -> Result<String> {
    let (m, y) = order_problem()?;
    let table = order_study(&m, &y, &order_tableaux(), &ORDER_DTS, 5.0)?;
    let mut parts = Vec::new();
    for (name, target, tol) in [("explicit_euler", 1.0, 0.15), ("heun", 2.0, 0.25), ("implicit_euler", 1.0, 0.15)] {
        let Some(s) = table.slope(name) else { bail!("{name}: no slope") };
        ensure!((s - target).abs() <= tol, "{name}: slope {s:.4} outside {target} +- {tol}");
        parts.push(format!("{name} {s:.4}"));
    }

    // stiff step: dt = 4 / sigma_max^2
    let sigma_max = asymreg::linalg::jacobi_svd(&m).sigma_max();
    let dt = 4.0 / (sigma_max * sigma_max);
    let steps = 50;
    let problem = Problem::new(Operator::dense_linear(m.clone())?, Penalty::quadratic(), y.clone())?;
    let limit = showalter_oracle(&m, &y, 1e6);
    let limit_norm = limit.dot(&limit).sqrt();
    let peak = |tab: &ButcherTableau| -> f64 {
        match integrate(&problem, tab, &StepPolicy::fixed(dt, steps), &Stopping::never(), None) {
            Ok(traj) => traj
                .states
                .iter()
                .map(|s| s.x.dot(&s.x).sqrt())
                .fold(0.0, |a: f64, v| if v.is_finite() { a.max(v) } else { f64::INFINITY }),
            Err(_) => f64::INFINITY,
        }
    };
    let implicit = peak(&ButcherTableau::implicit_euler());
    let explicit = peak(&ButcherTableau::explicit_euler());
    ensure!(implicit <= 2.0 * limit_norm, "implicit Euler peak {implicit:e} at dt = {dt}");
    ensure!(explicit >= 1e6 * limit_norm, "explicit Euler stayed at {explicit:e} at dt = {dt}");
    Ok(format!(
        "slopes {}; dt = {dt:.3}: implicit peak {implicit:.3}, explicit peak {explicit:.2e}",
        parts.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 8. Tableau classification

fn tableau_validation() -> Result<String> {
    let cases = [
        ("explicit_euler", ButcherTableau::explicit_euler(), true, Order::First),
        ("implicit_euler", ButcherTableau::implicit_euler(), false, Order::First),
        ("heun", ButcherTableau::heun(), true, Order::Second),
    ];
    for (name, tab, explicit, order) in cases {
        let rep = tab.validate();
        ensure!(rep.consistent, "{name}: not consistent");
        ensure!(rep.explicit == explicit, "{name}: explicit flag {}", rep.explicit);
        ensure!(rep.order == order, "{name}: order {:?}", rep.order);
    }
    let broken = ButcherTableau::explicit_two_stage(1.0, 0.0).validate();
    ensure!(broken.two_stage_order2 == Some(false), "broken tableau passes the order-2 test");
    ensure!(broken.order == Order::First, "broken tableau classified {:?}", broken.order);
    Ok("orders 1/1/2, explicit flags true/false/true; b=(1,0), a21=1 fails order 2".into())
}

// ---------------------------------------------------------------------------
// 9. Feature recovery

fn feature_recovery() -> Result<String> {
    let sparse = sparse_recovery(&SparseDemoConfig::default())?;
    let tv = tv_recovery(&TvDemoConfig::default())?;
    let detail = format!(
        "elastic-net recall {:.3}, quadratic recall {:.3}, TV ratio {:.4}",
        sparse.elastic_net.recall,
        sparse.quadratic.recall,
        tv.tv_ratio()
    );
    ensure!(sparse.elastic_net.recall == 1.0, "{detail}: elastic-net recall below 1");
    ensure!((tv.tv_ratio() - 1.0).abs() <= 0.1, "{detail}: terminal TV off by more than 10%");
    ensure!(sparse.quadratic.recall < 1.0, "{detail}: quadratic recall is not below 1");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 10. Determinism

fn determinism() -> Result<String> {
    let case = flow_cases()?.into_iter().nth(3).expect("six cases");
    let single = || -> Result<String> { Ok(trajectory_csv(&case.setup.solve(1e-3, 40)?.trajectory)) };
    ensure!(single()? == single()?, "{}: trajectory CSV differs between runs", case.label);

    let (setup, r_f) = rate_setup()?;
    let cfg = rate_config(r_f)?;
    ensure!(
        rate_study(&setup, &cfg)?.to_csv() == rate_study(&setup, &cfg)?.to_csv(),
        "rate table differs between runs"
    );

    let (m, y) = order_problem()?;
    let order = || -> Result<String> { Ok(order_study(&m, &y, &order_tableaux(), &ORDER_DTS, 5.0)?.to_csv()) };
    ensure!(order()? == order()?, "order table differs between runs");
    Ok(format!("trajectory ({}), rate table and order table byte-identical", case.label))
}
