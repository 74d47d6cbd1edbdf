//! Distribution discrepancies between real and synthetic data.
//!
//! [`mmd_sq_linear`] is the squared distance between mean feature embeddings;
//! [`mmd_sq_rbf`] is the Gaussian-kernel V-statistic used for evaluation.
//! [`batch_mmd_loss`] is the training-time MMD on noise residuals, which by
//! Jensen's inequality never exceeds the mean per-sample diffusion loss.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffusion::{diffusion_loss, DiffusionLoss, LossWeighting, NoisePredictor, NoiseSchedule};
use crate::nets::{DenseNet, FeatureMap, FinalActivation};
use crate::rng::Rng;
use crate::taskbench::LabeledDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Real,
    Synthetic,
}

/// Feature vectors of common dimension, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    features: Array2<f64>,
    source: Source,
}

impl FeatureBatch {
    pub fn new(features: Array2<f64>, source: Source) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("feature batch"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature batch".into()));
        }
        Ok(FeatureBatch { features, source })
    }

    pub fn from_rows(rows: &[Vec<f64>], source: Source) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "feature row",
                expected: dim,
                got: r.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), dim), flat).expect("checked shape");
        Self::new(features, source)
    }

    /// ψ applied to every row of `x`.
    pub fn encode<F: FeatureMap + ?Sized>(encoder: &F, x: ArrayView2<f64>, source: Source) -> Result<Self> {
        Self::new(encoder.features(x)?, source)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn mean(&self) -> Array1<f64> {
        self.features.mean_axis(Axis(0)).expect("nonempty")
    }
}

fn check_dims(a: &FeatureBatch, b: &FeatureBatch) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "feature batches",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// `||mean(a) − mean(b)||²`.
pub fn mmd_sq_linear(a: &FeatureBatch, b: &FeatureBatch) -> Result<f64> {
    check_dims(a, b)?;
    let diff = a.mean() - b.mean();
    Ok(diff.dot(&diff))
}

fn rbf_mean(a: ArrayView2<f64>, b: ArrayView2<f64>, inv_two_h2: f64) -> f64 {
    let mut total = 0.0;
    for u in a.rows() {
        let mut row_sum = 0.0;
        for v in b.rows() {
            let d2: f64 = u.iter().zip(v.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            row_sum += (-d2 * inv_two_h2).exp();
        }
        total += row_sum;
    }
    total / (a.nrows() * b.nrows()) as f64
}

/// Biased (V-statistic) MMD² with kernel `exp(−||u − v||² / (2h²))`.
pub fn mmd_sq_rbf(a: &FeatureBatch, b: &FeatureBatch, bandwidth: f64) -> Result<f64> {
    check_dims(a, b)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::OutOfRange {
            what: "bandwidth",
            detail: format!("must be positive and finite, got {bandwidth}"),
        });
    }
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let value = rbf_mean(a.features(), a.features(), g) + rbf_mean(b.features(), b.features(), g)
        - 2.0 * rbf_mean(a.features(), b.features(), g);
    // round-off can dip a hair below zero for identical batches
    Ok(value.max(0.0))
}

/// `||(1/N) Σ r_i||²` for residual rows `r_i`.
pub fn batch_mmd_loss(residuals: ArrayView2<f64>) -> Result<f64> {
    if residuals.nrows() == 0 {
        return Err(Error::Empty("residual batch"));
    }
    let mean = residuals.mean_axis(Axis(0)).expect("nonempty");
    Ok(mean.dot(&mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma: f64,
    pub weighting: LossWeighting,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.05,
            weighting: LossWeighting::Simple,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::OutOfRange {
                what: "gamma",
                detail: format!("must be finite and >= 0, got {}", self.gamma),
            });
        }
        Ok(())
    }
}

/// `L = L_simple + γ · L_MMD` on one shared `(t, ε)` draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub simple: f64,
    pub mmd: f64,
    pub gamma: f64,
    pub diffusion: DiffusionLoss,
}

impl CombinedLoss {
    pub fn from_diffusion(diffusion: DiffusionLoss, gamma: f64) -> Result<Self> {
        let mmd = batch_mmd_loss(diffusion.residuals.view())?;
        let simple = diffusion.loss;
        Ok(CombinedLoss {
            total: simple + gamma * mmd,
            simple,
            mmd,
            gamma,
            diffusion,
        })
    }

    /// `∂L/∂ε̂_i = −(2/N) (w_i r_i + γ r̄)`.
    pub fn prediction_grad(&self) -> Array2<f64> {
        let mut g = self.diffusion.prediction_grad();
        if self.gamma != 0.0 {
            let n = self.diffusion.residuals.nrows() as f64;
            let mean = self.diffusion.residuals.mean_axis(Axis(0)).expect("nonempty");
            let shift = mean * (-2.0 * self.gamma / n);
            g += &shift;
        }
        g
    }
}

pub fn combined_loss<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<CombinedLoss> {
    cfg.validate()?;
    let d = diffusion_loss(pred, sched, x0, cond, cfg.weighting, rng)?;
    CombinedLoss::from_diffusion(d, cfg.gamma)
}

/// The terms of the synthesis objective
/// `D(q(x), p(x)) + D(q(y|x), p(y|x)) − λ |S|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub mmd_sq: f64,
    pub conditional_divergence: f64,
    pub cardinality_term: f64,
    pub lambda: f64,
    pub combined: f64,
}

const PROB_FLOOR: f64 = 1e-12;

/// Scores a synthetic set against real data.
///
/// The marginal term is [`mmd_sq_linear`] over ψ-features. The conditional
/// term is the mean of `−ln p_probe(y | x)` over synthetic points, i.e. the KL
/// divergence from the one-hot synthetic label to the probe's prediction.
pub fn synthesis_objective_report<F: FeatureMap + ?Sized>(
    real: &LabeledDataset,
    syn: &LabeledDataset,
    encoder: &F,
    probe: &DenseNet,
    lambda: f64,
) -> Result<ObjectiveReport> {
    if real.num_classes() != syn.num_classes() {
        return Err(Error::InvalidSpec(format!(
            "real data has {} classes but synthetic data has {}",
            real.num_classes(),
            syn.num_classes()
        )));
    }
    if probe.output_dim() != syn.num_classes() || probe.spec().final_activation != FinalActivation::Softmax {
        return Err(Error::InvalidSpec(format!(
            "probe must be a softmax classifier over {} classes",
            syn.num_classes()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::OutOfRange {
            what: "lambda",
            detail: format!("must be finite and >= 0, got {lambda}"),
        });
    }
    let a = FeatureBatch::encode(encoder, real.x(), Source::Real)?;
    let b = FeatureBatch::encode(encoder, syn.x(), Source::Synthetic)?;
    let mmd_sq = mmd_sq_linear(&a, &b)?;
    let probs = probe.predict(syn.x())?;
    let nll: f64 = syn
        .y()
        .iter()
        .enumerate()
        .map(|(i, &c)| -probs[[i, c]].max(PROB_FLOOR).ln())
        .sum();
    let conditional_divergence = nll / syn.len() as f64;
    let cardinality_term = syn.len() as f64;
    Ok(ObjectiveReport {
        mmd_sq,
        conditional_divergence,
        cardinality_term,
        lambda,
        combined: mmd_sq + conditional_divergence - lambda * cardinality_term,
    })
}
