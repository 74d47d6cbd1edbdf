//! Conditioning vectors for the denoiser.
//!
//! A condition is the concatenation `[class embedding | visual guidance]`.
//! The class part is a learned row of a [`ConditionTable`]; the visual part is
//! the mean encoder feature of a random subset of same-class samples, or zeros
//! when visual guidance is off. The null condition used for classifier-free
//! guidance is a separate learned embedding with a zero visual slot.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::nets::FeatureMap;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub class_part: Vec<f64>,
    pub visual_part: Vec<f64>,
    pub is_null: bool,
}

impl Condition {
    pub fn dim(&self) -> usize {
        self.class_part.len() + self.visual_part.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.class_part.clone();
        v.extend_from_slice(&self.visual_part);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTable {
    num_classes: usize,
    /// `(num_classes, embed_dim)`.
    pub class_embeddings: Array2<f64>,
    pub null_embedding: Array1<f64>,
    visual_dim: usize,
}

impl ConditionTable {
    pub fn new(num_classes: usize, embed_dim: usize, visual_dim: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 || embed_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "condition table needs classes and embedding width (got {num_classes}, {embed_dim})"
            )));
        }
        let mut rng = rng::stream(seed, "condition-table", 0);
        let class_embeddings = Array2::from_shape_simple_fn((num_classes, embed_dim), || {
            StandardNormal.sample(&mut rng)
        });
        let null_embedding =
            Array1::from_shape_simple_fn(embed_dim, || StandardNormal.sample(&mut rng));
        Ok(ConditionTable {
            num_classes,
            class_embeddings,
            null_embedding,
            visual_dim,
        })
    }

    /// Rebuilds a table from stored parameters.
    pub fn from_parts(class_embeddings: Array2<f64>, null_embedding: Array1<f64>, visual_dim: usize) -> Result<Self> {
        if class_embeddings.ncols() != null_embedding.len() {
            return Err(Error::DimensionMismatch {
                what: "null embedding",
                expected: class_embeddings.ncols(),
                got: null_embedding.len(),
            });
        }
        Ok(ConditionTable {
            num_classes: class_embeddings.nrows(),
            class_embeddings,
            null_embedding,
            visual_dim,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embed_dim(&self) -> usize {
        self.null_embedding.len()
    }

    pub fn visual_dim(&self) -> usize {
        self.visual_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.embed_dim() + self.visual_dim
    }

    pub fn build_condition(&self, label: usize, visual: Option<&[f64]>) -> Result<Condition> {
        if label >= self.num_classes {
            return Err(Error::OutOfRange {
                what: "class label",
                detail: format!("{label} >= {}", self.num_classes),
            });
        }
        let visual_part = match visual {
            Some(v) if v.len() != self.visual_dim => {
                return Err(Error::DimensionMismatch {
                    what: "visual guidance",
                    expected: self.visual_dim,
                    got: v.len(),
                })
            }
            Some(v) => v.to_vec(),
            None => vec![0.0; self.visual_dim],
        };
        Ok(Condition {
            class_part: self.class_embeddings.row(label).to_vec(),
            visual_part,
            is_null: false,
        })
    }

    pub fn null_condition(&self) -> Condition {
        Condition {
            class_part: self.null_embedding.to_vec(),
            visual_part: vec![0.0; self.visual_dim],
            is_null: true,
        }
    }

    /// Condition matrix for a batch; `None` labels produce the null condition.
    pub fn cond_matrix(&self, labels: &[Option<usize>], visual: &[Option<&[f64]>]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((labels.len(), self.cond_dim()));
        for (i, label) in labels.iter().enumerate() {
            let cond = match label {
                Some(c) => self.build_condition(*c, visual.get(i).copied().flatten())?,
                None => self.null_condition(),
            };
            out.row_mut(i)
                .iter_mut()
                .zip(cond.to_vec())
                .for_each(|(o, v)| *o = v);
        }
        Ok(out)
    }

    /// Sums per-row gradients on the class slot into embedding gradients.
    ///
    /// `cond_grads` holds the gradient with respect to each row of
    /// [`cond_matrix`](Self::cond_matrix); only the first `embed_dim` columns
    /// belong to learned parameters.
    pub fn accumulate_grads(&self, labels: &[Option<usize>], cond_grads: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let e = self.embed_dim();
        let mut class_grad = Array2::zeros(self.class_embeddings.raw_dim());
        let mut null_grad = Array1::zeros(e);
        for (i, label) in labels.iter().enumerate() {
            let g = cond_grads.row(i);
            match label {
                Some(c) => {
                    let mut row = class_grad.row_mut(*c);
                    for k in 0..e {
                        row[k] += g[k];
                    }
                }
                None => {
                    for k in 0..e {
                        null_grad[k] += g[k];
                    }
                }
            }
        }
        (class_grad, null_grad)
    }
}

/// Mean ψ-feature over `min(m, n)` class samples drawn without replacement.
///
/// Feature rows are summed in a canonical (sorted) order, so when every sample
/// is used the result is exactly invariant to the order of `class_samples`.
pub fn visual_guidance<F: FeatureMap + ?Sized>(
    encoder: &F,
    class_samples: ArrayView2<f64>,
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = class_samples.nrows();
    if n == 0 {
        return Err(Error::Empty("class samples for visual guidance"));
    }
    if m == 0 {
        return Err(Error::OutOfRange {
            what: "visual guidance sample count",
            detail: "m must be >= 1".into(),
        });
    }
    let chosen = if m >= n {
        class_samples.to_owned()
    } else {
        let idx = rand::seq::index::sample(rng, n, m).into_vec();
        class_samples.select(ndarray::Axis(0), &idx)
    };
    let feats = encoder.features(chosen.view())?;
    let mut rows: Vec<Vec<f64>> = feats.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let dim = feats.ncols();
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (acc, v) in mean.iter_mut().zip(r) {
            *acc += v;
        }
    }
    let count = rows.len() as f64;
    mean.iter_mut().for_each(|v| *v /= count);
    Ok(mean)
}

/// With probability `p` replaces `cond` by the table's null condition.
pub fn drop_condition(table: &ConditionTable, cond: &Condition, p: f64, rng: &mut Rng) -> Condition {
    if p > 0.0 && (p >= 1.0 || rng.random::<f64>() < p) {
        table.null_condition()
    } else {
        cond.clone()
    }
}
