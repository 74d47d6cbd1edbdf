//! Minimal dense networks with exact analytic gradients.
//!
//! One network type serves as the denoiser, the feature encoder and the
//! downstream classifier. Forward passes return an explicit [`Tape`] holding
//! every intermediate activation; [`DenseNet::backward`] replays it to produce
//! parameter and input gradients.
//!
//! Layout conventions:
//! - a batch is a row-major matrix with one sample per row
//! - layer weights have shape `(out_dim, in_dim)`, so `z = x Wᵀ + b`

pub mod checkpoint;
pub mod embed;
pub mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

pub use embed::time_embedding;
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// SiLU, `z·σ(z)`.
    SmoothRelu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalActivation {
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetRole {
    Denoiser,
    Encoder,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub final_activation: FinalActivation,
    pub role: NetRole,
}

impl NetSpec {
    pub fn new(
        role: NetRole,
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
    ) -> Self {
        let final_activation = match role {
            NetRole::Classifier => FinalActivation::Softmax,
            _ => FinalActivation::Identity,
        };
        NetSpec {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activation: Activation::SmoothRelu,
            final_activation,
            role,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "network dimensions must be >= 1 (input {}, output {})",
                self.input_dim, self.output_dim
            )));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {i} has width 0")));
        }
        if self.final_activation == FinalActivation::Softmax && self.role != NetRole::Classifier {
            return Err(Error::InvalidSpec(format!(
                "softmax head is only allowed for classifiers, not {:?}",
                self.role
            )));
        }
        Ok(())
    }

    /// `(in, out)` for every layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(out_dim, in_dim)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct DenseNet {
    spec: NetSpec,
    layers: Vec<Dense>,
    seed: u64,
    // identity + version let backward reject tapes from another network or
    // from before the last parameter update
    id: u64,
    version: u64,
}

impl Clone for DenseNet {
    fn clone(&self) -> Self {
        DenseNet {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            seed: self.seed,
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    version: u64,
    /// Input to every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    /// Final output (after the head activation).
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<DenseGrad>,
    /// Gradient with respect to the network input, one row per sample.
    pub input: Array2<f64>,
}

impl ParamGrads {
    pub fn zeros_like(net: &DenseNet, batch: usize) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            input: Array2::zeros((batch, net.spec.input_dim)),
        }
    }

    /// Flattened parameter gradients in checkpoint order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weight.iter());
            out.extend(g.bias.iter());
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weight *= factor;
            g.bias *= factor;
        }
        self.input *= factor;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::SmoothRelu => z * sigmoid(z),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::SmoothRelu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

impl DenseNet {
    /// Fan-in scaled normal init, zero biases.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, "net-init", 0);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt())
                    .expect("fan-in scale is finite and positive");
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        normal.sample(&mut rng)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(DenseNet {
            spec,
            layers,
            seed,
            id: fresh_id(),
            version: 0,
        })
    }

    /// All-zero parameters. Test hook.
    pub fn zeroed(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense {
                weight: Array2::zeros((o, i)),
                bias: Array1::zeros(o),
            })
            .collect();
        Ok(DenseNet {
            spec,
            layers,
            seed: 0,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Direct parameter access. Bumps the version so outstanding tapes go stale.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Parameters in checkpoint order: per layer, weights (row-major) then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                what: "flat parameter vector",
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for l in self.layers_mut() {
            for w in l.weight.iter_mut() {
                *w = params[offset];
                offset += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.spec.input_dim,
                got: cols,
            });
        }
        Ok(())
    }

    /// Batched forward pass that records a tape.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(input.ncols())?;
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut current = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(current);
            if k + 1 < n_layers {
                let act = self.spec.activation;
                current = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                current = z;
            }
        }
        if self.spec.final_activation == FinalActivation::Softmax {
            softmax_rows(&mut current);
        }
        let tape = Tape {
            net_id: self.id,
            version: self.version,
            inputs,
            pre,
            output: current.clone(),
        };
        Ok((current, tape))
    }

    /// Batched forward pass without a tape.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let n_layers = self.layers.len();
        let mut current = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            if k + 1 < n_layers {
                let act = self.spec.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            current = z;
        }
        if self.spec.final_activation == FinalActivation::Softmax {
            softmax_rows(&mut current);
        }
        Ok(current)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let (out, tape) = self.forward_batch(view)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.net_id != self.id {
            return Err(Error::StaleTape("recorded by a different network".into()));
        }
        if tape.version != self.version {
            return Err(Error::StaleTape(format!(
                "recorded at version {}, network is at version {}",
                tape.version, self.version
            )));
        }
        Ok(())
    }

    /// Backpropagates a gradient with respect to the network output.
    ///
    /// For a softmax head the gradient is taken with respect to the
    /// probabilities and pushed through the softmax Jacobian.
    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<f64>) -> Result<ParamGrads> {
        self.check_tape(tape)?;
        if output_grad.dim() != tape.output.dim() {
            return Err(Error::DimensionMismatch {
                what: "output gradient",
                expected: tape.output.len(),
                got: output_grad.len(),
            });
        }
        let grad = match self.spec.final_activation {
            FinalActivation::Identity => output_grad.to_owned(),
            FinalActivation::Softmax => {
                let s = &tape.output;
                let dot = (&output_grad * s).sum_axis(Axis(1)).insert_axis(Axis(1));
                s * &(&output_grad - &dot)
            }
        };
        self.backprop_from_logits(tape, grad)
    }

    /// Backpropagates a gradient with respect to the pre-head logits.
    ///
    /// With a softmax head and cross-entropy loss this is simply `p - onehot`.
    pub fn backward_logits(&self, tape: &Tape, logit_grad: ArrayView2<f64>) -> Result<ParamGrads> {
        self.check_tape(tape)?;
        if logit_grad.dim() != tape.output.dim() {
            return Err(Error::DimensionMismatch {
                what: "logit gradient",
                expected: tape.output.len(),
                got: logit_grad.len(),
            });
        }
        self.backprop_from_logits(tape, logit_grad.to_owned())
    }

    fn backprop_from_logits(&self, tape: &Tape, mut dz: Array2<f64>) -> Result<ParamGrads> {
        let n_layers = self.layers.len();
        let mut grads: Vec<DenseGrad> = Vec::with_capacity(n_layers);
        for k in (0..n_layers).rev() {
            let layer = &self.layers[k];
            let input = &tape.inputs[k];
            let weight = dz.t().dot(input);
            let bias = dz.sum_axis(Axis(0));
            let mut d_in = dz.dot(&layer.weight);
            if k > 0 {
                let act = self.spec.activation;
                ndarray::Zip::from(&mut d_in)
                    .and(&tape.pre[k - 1])
                    .for_each(|g, &z| *g *= act.derivative(z));
            }
            grads.push(DenseGrad { weight, bias });
            dz = d_in;
        }
        grads.reverse();
        Ok(ParamGrads {
            layers: grads,
            input: dz,
        })
    }

    /// Single-sample backward pass.
    pub fn backward_vec(&self, tape: &Tape, output_grad: &[f64]) -> Result<ParamGrads> {
        let view =
            ArrayView2::from_shape((1, output_grad.len()), output_grad).map_err(|_| {
                Error::DimensionMismatch {
                    what: "output gradient",
                    expected: self.spec.output_dim,
                    got: output_grad.len(),
                }
            })?;
        self.backward(tape, view)
    }
}

/// A fixed feature map ψ applied row-wise to a batch.
pub trait FeatureMap {
    fn feature_dim(&self, input_dim: usize) -> usize;
    fn features(&self, input: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl FeatureMap for DenseNet {
    fn feature_dim(&self, _input_dim: usize) -> usize {
        self.output_dim()
    }

    fn features(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.predict(input)
    }
}

/// ψ(x) = x.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeatures;

impl FeatureMap for IdentityFeatures {
    fn feature_dim(&self, input_dim: usize) -> usize {
        input_dim
    }

    fn features(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(input.to_owned())
    }
}
