use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{forward_marginal_batch, NoiseSchedule};
use super::{ensure_finite, NoisePredictor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Per-sample weight applied to `||ε − ε̂||²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    #[default]
    Simple,
    SnrWeighted,
}

impl LossWeighting {
    pub fn weight(self, sched: &NoiseSchedule, t: usize) -> f64 {
        match self {
            LossWeighting::Simple => 1.0,
            LossWeighting::SnrWeighted => sched.snr_weight(t),
        }
    }
}

/// The random part of one loss evaluation: a timestep and a noise vector per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: Vec<usize>,
    pub eps: Array2<f64>,
}

/// Draws `t ~ U{1..T}` then `ε ~ N(0, I)` for each of `n` samples, in sample order.
pub fn draw_noise(sched: &NoiseSchedule, n: usize, dim: usize, rng: &mut Rng) -> NoiseDraw {
    let mut t = Vec::with_capacity(n);
    let mut eps = Array2::zeros((n, dim));
    for i in 0..n {
        t.push(rng.random_range(1..=sched.horizon()));
        for v in eps.row_mut(i) {
            *v = rng.sample(StandardNormal);
        }
    }
    NoiseDraw { t, eps }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionLoss {
    /// `mean_i w_i ||r_i||²`.
    pub loss: f64,
    /// `r_i = ε_i − ε̂_i`, one row per sample.
    pub residuals: Array2<f64>,
    pub weights: Vec<f64>,
    pub x_t: Array2<f64>,
    pub draw: NoiseDraw,
}

impl DiffusionLoss {
    /// `∂loss/∂ε̂_i = −(2/N) w_i r_i`.
    pub fn prediction_grad(&self) -> Array2<f64> {
        let n = self.residuals.nrows() as f64;
        let mut g = self.residuals.clone();
        for (mut row, &w) in g.axis_iter_mut(Axis(0)).zip(&self.weights) {
            row *= -2.0 * w / n;
        }
        g
    }
}

/// Noise-prediction loss on a batch of clean samples with fresh randomness.
pub fn diffusion_loss<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    weighting: LossWeighting,
    rng: &mut Rng,
) -> Result<DiffusionLoss> {
    let draw = draw_noise(sched, x0.nrows(), x0.ncols(), rng);
    diffusion_loss_with_draw(pred, sched, x0, cond, weighting, draw)
}

/// [`diffusion_loss`] with the timesteps and noise supplied by the caller.
pub fn diffusion_loss_with_draw<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    weighting: LossWeighting,
    draw: NoiseDraw,
) -> Result<DiffusionLoss> {
    if x0.nrows() == 0 {
        return Err(Error::Empty("diffusion batch"));
    }
    if x0.ncols() != pred.data_dim() {
        return Err(Error::DimensionMismatch {
            what: "diffusion batch",
            expected: pred.data_dim(),
            got: x0.ncols(),
        });
    }
    let x_t = forward_marginal_batch(sched, x0, &draw.t, draw.eps.view())?;
    let eps_hat = pred.predict_noise(x_t.view(), &draw.t, cond)?;
    loss_from_prediction(sched, weighting, draw, x_t, eps_hat)
}

/// Finishes a loss evaluation from a prediction computed elsewhere (e.g. with a tape).
pub fn loss_from_prediction(
    sched: &NoiseSchedule,
    weighting: LossWeighting,
    draw: NoiseDraw,
    x_t: Array2<f64>,
    eps_hat: Array2<f64>,
) -> Result<DiffusionLoss> {
    if eps_hat.dim() != draw.eps.dim() {
        return Err(Error::DimensionMismatch {
            what: "noise prediction",
            expected: draw.eps.len(),
            got: eps_hat.len(),
        });
    }
    ensure_finite(&eps_hat, "denoiser output")?;
    let residuals = &draw.eps - &eps_hat;
    let weights: Vec<f64> = draw.t.iter().map(|&t| weighting.weight(sched, t)).collect();
    let total: f64 = residuals
        .axis_iter(Axis(0))
        .zip(&weights)
        .map(|(r, w)| w * r.dot(&r))
        .sum();
    let loss = total / residuals.nrows() as f64;
    Ok(DiffusionLoss {
        loss,
        residuals,
        weights,
        x_t,
        draw,
    })
}
