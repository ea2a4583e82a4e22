use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Metric;

/// Exact data, its perturbation and the noise level `|y - y_delta| = delta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyData {
    pub y: Array1<f64>,
    pub y_delta: Array1<f64>,
    pub delta: f64,
}

/// `y_delta = y + delta * u / |u|` with `u` a seeded standard normal vector,
/// the norm taken in `metric`.
pub fn make_noisy(y: &Array1<f64>, delta: f64, seed: u64, metric: Metric) -> Result<NoisyData> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be finite and nonnegative, got {delta}"
        )));
    }
    if delta == 0.0 {
        return Ok(NoisyData {
            y: y.clone(),
            y_delta: y.clone(),
            delta,
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot perturb zero-dimensional data with positive delta".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Array1<f64> = Array1::from_iter((0..y.len()).map(|_| StandardNormal.sample(&mut rng)));
    let nu = metric.norm(u.view());
    let y_delta = y + &(u * (delta / nu));
    Ok(NoisyData {
        y: y.clone(),
        y_delta,
        delta,
    })
}
