//! Helpers shared by the integration suites: seeded sampling and oracles that
//! do not use the library's own solvers.

#![allow(dead_code)]

use asymreg::penalty::{Penalty, PenaltyKind};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-scale, scale]`.
pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)))
}

/// Vector with repeated values and exact zeros, to exercise kinks of the
/// L1 and TV terms.
pub fn kinky_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let mut x = Array1::zeros(n);
    let mut level = 0.0;
    for i in 0..n {
        match rng.random_range(0..4) {
            0 => level = 0.0,
            1 => level = rng.random_range(-2.0..2.0),
            _ => {}
        }
        x[i] = level;
    }
    x
}

/// The three penalties with moderate weights on a grid of size `n`.
pub fn penalty_zoo(n: usize) -> Vec<(&'static str, Penalty)> {
    vec![
        ("quadratic", Penalty::quadratic()),
        ("elastic_net", Penalty::elastic_net(0.7).unwrap()),
        ("tv_quadratic", Penalty::tv_quadratic(0.4, n.max(2)).unwrap()),
    ]
}

/// Minimizer of a convex function over a box by repeated grid search,
/// shrinking the box around the best grid point each round.
pub fn grid_argmin(f: impl Fn(&[f64]) -> f64, center: &[f64], half_width: f64, tol: f64) -> Vec<f64> {
    const PTS: usize = 21;
    let d = center.len();
    let mut c = center.to_vec();
    let mut h = half_width;
    while h > tol {
        let step = 2.0 * h / (PTS - 1) as f64;
        let mut best = (f64::INFINITY, c.clone());
        let total = PTS.pow(d as u32);
        let mut z = vec![0.0; d];
        for idx in 0..total {
            let mut rem = idx;
            for k in 0..d {
                z[k] = c[k] - h + step * (rem % PTS) as f64;
                rem /= PTS;
            }
            let v = f(&z);
            if v < best.0 {
                best = (v, z.clone());
            }
        }
        c = best.1;
        h = 2.0 * step;
    }
    c
}

/// Log-log slope between two points.
pub fn slope(x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    (y1.ln() - y2.ln()) / (x1.ln() - x2.ln())
}

/// `Theta*(xi)` for the unit-metric penalties of [`penalty_zoo`], computed
/// without the library: closed forms for the quadratic and elastic-net cases,
/// and for TV the Moreau envelope from an accelerated projected-gradient
/// solve of its dual, iterated until the relative primal-dual gap is below 1e-11.
pub fn conjugate_oracle(pen: &Penalty, xi: &Array1<f64>) -> f64 {
    assert_eq!(pen.metric().weight(), 1.0, "oracle assumes the Euclidean metric");
    let half_sq = 0.5 * xi.dot(xi);
    match pen.kind() {
        PenaltyKind::Quadratic => half_sq,
        PenaltyKind::ElasticNet { beta } => xi.iter().map(|v| 0.5 * (v.abs() - beta).max(0.0).powi(2)).sum(),
        PenaltyKind::TvQuadratic { beta, .. } => half_sq - tv_envelope(xi, beta),
    }
}

/// `min_z 1/2 |z - xi|^2 + beta * sum |z_{i+1} - z_i|` by FISTA with restart
/// on the box-constrained dual `min_{|p| <= beta} 1/2 |xi - D^T p|^2`.
fn tv_envelope(xi: &Array1<f64>, beta: f64) -> f64 {
    let n = xi.len();
    let dt = |p: &[f64]| -> Vec<f64> {
        // D^T p for the forward difference (D z)_i = z_{i+1} - z_i
        (0..n)
            .map(|j| {
                let left = if j > 0 { p[j - 1] } else { 0.0 };
                let right = if j + 1 < n { p[j] } else { 0.0 };
                left - right
            })
            .collect()
    };
    let primal_dual = |p: &[f64]| -> (f64, f64, Vec<f64>) {
        let z: Vec<f64> = xi.iter().zip(dt(p)).map(|(a, b)| a - b).collect();
        let tv: f64 = z.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let dist: f64 = z.iter().zip(xi).map(|(a, b)| (a - b).powi(2)).sum();
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let primal = 0.5 * dist + beta * tv;
        let dual = 0.5 * xi.dot(xi) - 0.5 * zz;
        (primal, dual, z)
    };
    let mut p = vec![0.0; n - 1];
    let mut q = p.clone();
    let mut t = 1.0f64;
    let mut best = f64::INFINITY;
    for _ in 0..1_000_000 {
        let (primal, dual, _) = primal_dual(&p);
        best = best.min(primal);
        if best - dual <= 1e-11 * (1.0 + dual.abs()) {
            return best;
        }
        let (_, _, z) = primal_dual(&q);
        let next: Vec<f64> = (0..n - 1)
            .map(|i| (q[i] + 0.25 * (z[i + 1] - z[i])).clamp(-beta, beta))
            .collect();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (_, d_next, _) = primal_dual(&next);
        if d_next < dual && t > 1.0 {
            // objective went up: restart the momentum
            t = 1.0;
            q = p.clone();
            continue;
        }
        q = (0..n - 1).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - p[i])).collect();
        p = next;
        t = t_next;
    }
    let (_, dual, _) = primal_dual(&p);
    panic!("TV dual did not converge: gap {:e} at n = {n}", best - dual)
}
