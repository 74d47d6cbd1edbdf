use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::LabeledDataset;
use crate::nets::{optimizer_step, DenseNet, NetRole, NetSpec, OptimizerConfig, OptimizerState};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64],
            epochs: 200,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::OutOfRange {
                what: "classifier epochs / batch_size",
                detail: "both must be >= 1".into(),
            });
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::OutOfRange {
                what: "classifier lr",
                detail: format!("must be positive, got {}", self.optimizer.lr),
            });
        }
        Ok(())
    }
}

/// Encoder ψ: trained as a classifier through a linear softmax head, then
/// used through its `feature_dim`-wide output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: vec![64, 64],
            feature_dim: 8,
            epochs: 30,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
        }
    }
}

fn one_hot_grad(probs: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    // softmax cross-entropy: ∂/∂logits = (p − onehot) / B
    let b = probs.nrows() as f64;
    let mut g = probs.clone();
    for (i, &c) in labels.iter().enumerate() {
        g[[i, c]] -= 1.0;
    }
    g /= b;
    g
}

fn require_all_classes(data: &LabeledDataset) -> Result<()> {
    if let Some(c) = data.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::InvalidSpec(format!(
            "training set has no examples of class {c}"
        )));
    }
    Ok(())
}

fn batches(n: usize, batch: usize, rng: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Trains a softmax classifier for a fixed number of epochs.
pub fn train_classifier(data: &LabeledDataset, cfg: &ClassifierConfig, seed: u64) -> Result<DenseNet> {
    cfg.validate()?;
    require_all_classes(data)?;
    let spec = NetSpec::new(NetRole::Classifier, data.dim(), &cfg.hidden, data.num_classes());
    let mut net = DenseNet::new(spec, rng::derive_labeled(seed, "classifier-init", 0))?;
    let mut state = OptimizerState::for_net(cfg.optimizer, &net);
    let mut r = rng::stream(seed, "classifier-batches", 0);
    let x = data.x();
    for _ in 0..cfg.epochs {
        for idx in batches(data.len(), cfg.batch_size, &mut r) {
            let xb = x.select(Axis(0), &idx);
            let yb: Vec<usize> = idx.iter().map(|&i| data.y()[i]).collect();
            let (probs, tape) = net.forward_batch(xb.view())?;
            let g = one_hot_grad(&probs, &yb);
            let grads = net.backward_logits(&tape, g.view())?;
            optimizer_step(&mut net, &grads, &mut state)?;
        }
    }
    Ok(net)
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict_labels(net: &DenseNet, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    let p = net.predict(x)?;
    Ok(p.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Top-1 accuracy.
pub fn accuracy(net: &DenseNet, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pred = predict_labels(net, data.x())?;
    let hits = pred.iter().zip(data.y()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Trains on `train` and reports accuracy on each test set, in order.
pub fn train_and_eval_classifier(
    train: &LabeledDataset,
    tests: &[&LabeledDataset],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let net = train_classifier(train, cfg, seed)?;
    tests.iter().map(|t| accuracy(&net, t)).collect()
}

/// Trains ψ with a throwaway linear head and returns ψ alone.
pub fn train_encoder(data: &LabeledDataset, cfg: &EncoderConfig, seed: u64) -> Result<DenseNet> {
    require_all_classes(data)?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.feature_dim == 0 {
        return Err(Error::OutOfRange {
            what: "encoder config",
            detail: "epochs, batch_size and feature_dim must be >= 1".into(),
        });
    }
    let spec = NetSpec::new(NetRole::Encoder, data.dim(), &cfg.hidden, cfg.feature_dim);
    let mut enc = DenseNet::new(spec, rng::derive_labeled(seed, "encoder-init", 0))?;
    let head_spec = NetSpec::new(NetRole::Classifier, cfg.feature_dim, &[], data.num_classes());
    let mut head = DenseNet::new(head_spec, rng::derive_labeled(seed, "encoder-head-init", 0))?;
    let mut enc_state = OptimizerState::for_net(cfg.optimizer, &enc);
    let mut head_state = OptimizerState::for_net(cfg.optimizer, &head);
    let mut r = rng::stream(seed, "encoder-batches", 0);
    let x = data.x();
    for _ in 0..cfg.epochs {
        for idx in batches(data.len(), cfg.batch_size, &mut r) {
            let xb = x.select(Axis(0), &idx);
            let yb: Vec<usize> = idx.iter().map(|&i| data.y()[i]).collect();
            let (feats, enc_tape) = enc.forward_batch(xb.view())?;
            let (probs, head_tape) = head.forward_batch(feats.view())?;
            let g = one_hot_grad(&probs, &yb);
            let head_grads = head.backward_logits(&head_tape, g.view())?;
            let enc_grads = enc.backward(&enc_tape, head_grads.input.view())?;
            optimizer_step(&mut head, &head_grads, &mut head_state)?;
            optimizer_step(&mut enc, &enc_grads, &mut enc_state)?;
        }
    }
    Ok(enc)
}
