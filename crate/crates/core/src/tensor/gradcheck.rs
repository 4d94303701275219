//! Central finite-difference validation of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, NodeId, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Coordinates probed per parameter (all of them when fewer exist).
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-4, coords_per_param: 32, seed: 0 }
    }
}

/// Gradients smaller than `REL_FLOOR * max(1, |loss|)` are compared
/// absolutely. Rounding noise in a central difference grows with the loss
/// value, roughly `1e-10 * |loss|` at `eps = 1e-5`.
const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-5 * max(1, |loss|))`.
pub fn relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR * loss.abs().max(1.0))
}

/// Running maximum in which a NaN error counts as infinitely bad.
fn worse(worst: f64, err: f64) -> f64 {
    if err.is_nan() {
        f64::INFINITY
    } else {
        worst.max(err)
    }
}

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` receives a fresh graph and one [`Graph::param`] node per entry
/// of `params` (same order) and must return a 1x1 loss. It is called once
/// for the analytic pass and twice per probed coordinate.
pub fn grad_check<F>(
    build: F,
    params: &[(String, Tensor)],
    config: &GradCheckConfig,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|v| g.param(v.clone())).collect();
        let loss = build(&mut g, &ids)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|(_, v)| g.param(v.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(TensorError::NonFinite("loss".into()));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(&id, (_, v))| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(v.rows(), v.cols())))
        .collect();
    for ((name, _), grad) in params.iter().zip(&analytic) {
        if !grad.is_finite() {
            return Err(TensorError::NonFinite(format!("gradient of {name}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values: Vec<Tensor> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (p, (name, original)) in params.iter().enumerate() {
        let total = original.len();
        let coords: Vec<usize> = if total <= config.coords_per_param {
            (0..total).collect()
        } else {
            let mut picked = sample(&mut rng, total, config.coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let x = original.data()[c];
            values[p].data_mut()[c] = x + config.eps;
            let up = eval(&values)?;
            values[p].data_mut()[c] = x - config.eps;
            let down = eval(&values)?;
            values[p].data_mut()[c] = x;
            let numeric = (up - down) / (2.0 * config.eps);
            worst = worse(worst, relative_error(analytic[p].data()[c], numeric, loss_value));
        }
        checks.push(ParamCheck { name: name.clone(), checked: coords.len(), max_rel_error: worst });
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { params: checks, max_rel_error, tol: config.tol, passed: max_rel_error < config.tol })
}
