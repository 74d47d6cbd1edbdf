//! Adaptive-moment (Adam) and plain SGD parameter updates.

use serde::{Deserialize, Serialize};

use super::{DenseNet, ParamGrads};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

/// Moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    shapes: Vec<usize>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// State for arbitrary flat tensors of the given lengths.
    pub fn for_tensors(config: OptimizerConfig, lengths: &[usize]) -> Self {
        OptimizerState {
            config,
            step: 0,
            shapes: lengths.to_vec(),
            first: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second: lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// State mirroring a network: tensors are `layer k weight`, `layer k bias`, ...
    pub fn for_net(config: OptimizerConfig, net: &DenseNet) -> Self {
        let lengths: Vec<usize> = net
            .layers()
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Self::for_tensors(config, &lengths)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Applies one update to a list of tensors. `names` label tensors in errors.
    ///
    /// All gradients are checked for finiteness before any parameter moves.
    pub fn update(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        names: &dyn Fn(usize) -> String,
    ) -> Result<()> {
        if params.len() != self.shapes.len() || grads.len() != self.shapes.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer tensor count",
                expected: self.shapes.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (k, ((p, g), &n)) in params.iter().zip(grads).zip(&self.shapes).enumerate() {
            if p.len() != n || g.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "optimizer tensor length",
                    expected: n,
                    got: if p.len() != n { p.len() } else { g.len() },
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", names(k))));
            }
        }
        self.step += 1;
        let c = self.config;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= c.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bias1 = 1.0 - c.beta1.powi(t);
                let bias2 = 1.0 - c.beta2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        // m_hat == 0 makes the update exactly zero
                        p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One optimizer update of `net` from `grads`. Fails without touching the
/// network if any gradient entry is non-finite.
pub fn optimizer_step(net: &mut DenseNet, grads: &ParamGrads, state: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers().len() {
        return Err(Error::DimensionMismatch {
            what: "gradient layers",
            expected: net.layers().len(),
            got: grads.layers.len(),
        });
    }
    for (k, (g, l)) in grads.layers.iter().zip(net.layers()).enumerate() {
        if g.weight.dim() != l.weight.dim() || g.bias.len() != l.bias.len() {
            return Err(Error::InvalidSpec(format!("gradient shape mismatch in layer {k}")));
        }
    }
    let grad_slices: Vec<&[f64]> = grads
        .layers
        .iter()
        .flat_map(|g| {
            [
                g.weight.as_slice().expect("standard layout"),
                g.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect();
    let names = |k: usize| {
        format!(
            "layer {} {}",
            k / 2,
            if k % 2 == 0 { "weights" } else { "biases" }
        )
    };
    // update() validates every tensor before mutating any of them
    let mut params: Vec<&mut [f64]> = Vec::with_capacity(grad_slices.len());
    for l in net.layers_mut().iter_mut() {
        params.push(l.weight.as_slice_mut().expect("standard layout"));
        params.push(l.bias.as_slice_mut().expect("standard layout"));
    }
    state.update(&mut params, &grad_slices, &names)
}
