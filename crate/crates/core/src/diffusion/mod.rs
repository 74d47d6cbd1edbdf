//! DDPM machinery: noise schedule, closed-form forward marginal, the
//! noise-prediction loss, classifier-free guidance and (strided) ancestral
//! sampling from either a Gaussian or a latent (partially noised real) prior.

pub mod loss;
pub mod sampler;
pub mod schedule;

use ndarray::{s, Array2, ArrayView2};

use crate::nets::{DenseNet, NetRole, NetSpec, ParamGrads, Tape};
use crate::{Error, Result};

pub use loss::{diffusion_loss, diffusion_loss_with_draw, draw_noise, loss_from_prediction, DiffusionLoss, LossWeighting, NoiseDraw};
pub use sampler::{
    ancestral_step, guided_noise, reverse_step, latent_prior_init, latent_start_step, sample, sample_batch,
    strided_timesteps, GuidedNoise, Prior, SampleOutput, SamplerConfig,
};
pub use schedule::{
    forward_marginal_batch, forward_marginal_sample, make_schedule, NoiseSchedule, ScheduleConfig,
};

/// Anything that predicts the added noise ε from `(x_t, t, condition)`.
///
/// All rows of a batch are predicted independently.
pub trait NoisePredictor {
    fn data_dim(&self) -> usize;

    fn predict_noise(&self, x_t: ArrayView2<f64>, t: &[usize], cond: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// ε_θ(x_t, t, c): a dense network over `[x_t | time embedding | condition]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub net: DenseNet,
    data_dim: usize,
    time_dim: usize,
    cond_dim: usize,
    horizon: usize,
    time_table: Array2<f64>,
}

impl Denoiser {
    pub fn new(
        data_dim: usize,
        cond_dim: usize,
        time_dim: usize,
        hidden: &[usize],
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = NetSpec::new(NetRole::Denoiser, data_dim + time_dim + cond_dim, hidden, data_dim);
        Self::from_net(DenseNet::new(spec, seed)?, data_dim, cond_dim, time_dim, horizon)
    }

    pub fn from_net(net: DenseNet, data_dim: usize, cond_dim: usize, time_dim: usize, horizon: usize) -> Result<Self> {
        if net.input_dim() != data_dim + time_dim + cond_dim || net.output_dim() != data_dim {
            return Err(Error::InvalidSpec(format!(
                "denoiser net {}->{} does not fit data {data_dim}, time {time_dim}, cond {cond_dim}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        let mut time_table = Array2::zeros((horizon, time_dim));
        for t in 1..=horizon {
            let e = crate::nets::time_embedding(t, time_dim, horizon)?;
            time_table.row_mut(t - 1).iter_mut().zip(e).for_each(|(o, v)| *o = v);
        }
        Ok(Denoiser {
            net,
            data_dim,
            time_dim,
            cond_dim,
            horizon,
            time_table,
        })
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn build_input(&self, x_t: ArrayView2<f64>, t: &[usize], cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = x_t.nrows();
        if x_t.ncols() != self.data_dim {
            return Err(Error::DimensionMismatch {
                what: "denoiser x_t",
                expected: self.data_dim,
                got: x_t.ncols(),
            });
        }
        if cond.ncols() != self.cond_dim || cond.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "denoiser condition",
                expected: self.cond_dim,
                got: cond.ncols(),
            });
        }
        if t.len() != n {
            return Err(Error::DimensionMismatch {
                what: "denoiser timesteps",
                expected: n,
                got: t.len(),
            });
        }
        let d = self.data_dim;
        let td = self.time_dim;
        let mut input = Array2::zeros((n, d + td + self.cond_dim));
        input.slice_mut(s![.., ..d]).assign(&x_t);
        for (i, &ti) in t.iter().enumerate() {
            if ti < 1 || ti > self.horizon {
                return Err(Error::OutOfRange {
                    what: "timestep",
                    detail: format!("{ti} not in 1..={}", self.horizon),
                });
            }
            input
                .slice_mut(s![i, d..d + td])
                .assign(&self.time_table.row(ti - 1));
        }
        input.slice_mut(s![.., d + td..]).assign(&cond);
        Ok(input)
    }

    pub fn forward_batch(&self, x_t: ArrayView2<f64>, t: &[usize], cond: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        let input = self.build_input(x_t, t, cond)?;
        self.net.forward_batch(input.view())
    }

    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<f64>) -> Result<ParamGrads> {
        self.net.backward(tape, output_grad)
    }

    /// The condition columns of an input gradient.
    pub fn cond_grad<'a>(&self, grads: &'a ParamGrads) -> ArrayView2<'a, f64> {
        grads.input.slice(s![.., self.data_dim + self.time_dim..])
    }
}

impl NoisePredictor for Denoiser {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn predict_noise(&self, x_t: ArrayView2<f64>, t: &[usize], cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        let input = self.build_input(x_t, t, cond)?;
        self.net.predict(input.view())
    }
}

pub(crate) fn ensure_finite(values: &Array2<f64>, what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos / values.ncols().max(1), pos % values.ncols().max(1));
        return Err(Error::NonFinite(format!("{what} (row {r}, column {c})")));
    }
    Ok(())
}
