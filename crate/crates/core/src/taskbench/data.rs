use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    OodTest,
    Pretrain,
    Synthetic,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::OodTest => "ood-test",
            Split::Pretrain => "pretrain",
            Split::Synthetic => "synthetic",
        }
    }
}

/// Points `x` (one row each) with class labels `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: Array2<f64>,
    y: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset labels",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidSpec("dataset dimension must be >= 1".into()));
        }
        if let Some(i) = y.iter().position(|&c| c >= num_classes) {
            return Err(Error::OutOfRange {
                what: "class label",
                detail: format!("point {i} has label {} but num_classes = {num_classes}", y[i]),
            });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dataset point {}", pos / x.ncols())));
        }
        Ok(LabeledDataset {
            x,
            y,
            num_classes,
            split,
        })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_labels(&self, y: Vec<usize>) -> Result<Self> {
        LabeledDataset::new(self.x.clone(), y, self.num_classes, self.split)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Rows of class `c`, in dataset order.
    pub fn class_rows(&self, c: usize) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.y[i] == c).collect();
        self.x.select(Axis(0), &idx)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        LabeledDataset {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// The first `n` points.
    pub fn prefix(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        if other.dim() != self.dim() || other.num_classes != self.num_classes {
            return Err(Error::InvalidSpec(format!(
                "cannot concatenate datasets of shape ({}, {} classes) and ({}, {} classes)",
                self.dim(),
                self.num_classes,
                other.dim(),
                other.num_classes
            )));
        }
        let x = concatenate(Axis(0), &[self.x.view(), other.x.view()]).expect("same width");
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(LabeledDataset {
            x,
            y,
            num_classes: self.num_classes,
            split: self.split,
        })
    }
}
