//! Central finite-difference verification of analytic gradients.
//!
//! Runs in `f64`: the loss graph is rebuilt from scratch for every probe, so
//! the check stays independent of the backward implementation it validates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of coordinates probed.
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Compare analytic gradients of `build_loss` against central differences at
/// up to `max_coords` coordinates sampled across `params` (all coordinates
/// when the budget allows). `step` is the one-sided perturbation size.
pub fn check_parameters(
    params: &[Tensor<f64>],
    build_loss: impl Fn() -> Result<Tensor<f64>>,
    step: f64,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    let loss = build_loss()?;
    loss.backward()?;
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let total: usize = params.iter().map(|p| p.numel()).sum();
    let coords: Vec<(usize, usize)> = if total <= max_coords {
        params
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| (0..p.numel()).map(move |ci| (pi, ci)))
            .collect()
    } else {
        (0..max_coords)
            .map(|_| {
                let pi = rng.gen_range(0..params.len());
                let ci = rng.gen_range(0..params[pi].numel());
                (pi, ci)
            })
            .collect()
    };

    let mut max_rel_error = 0.0f64;
    for &(pi, ci) in &coords {
        let original = params[pi].values()[ci];

        params[pi].values_mut(|v| v[ci] = original + step);
        let f_plus = build_loss()?.values()[0];
        params[pi].values_mut(|v| v[ci] = original - step);
        let f_minus = build_loss()?.values()[0];
        params[pi].values_mut(|v| v[ci] = original);

        let numeric = (f_plus - f_minus) / (2.0 * step);
        let analytic = grads[pi][ci];
        let denom = numeric.abs().max(analytic.abs()).max(1e-6);
        let rel = (numeric - analytic).abs() / denom;
        if rel > max_rel_error {
            max_rel_error = rel;
        }
    }

    Ok(GradCheckReport { checked: coords.len(), max_rel_error })
}
