use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::{LabeledDataset, Split};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Component means evenly spaced on a circle (a line in 1-D), classes interleaved.
    GaussianMixture,
    /// Class `c` places its components on a ring of radius `separation · (c + 1)`.
    RingMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodShift {
    pub mean_shift: Vec<f64>,
    /// Multiplies the within-component noise standard deviation.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub family: Family,
    pub components_per_class: usize,
    pub separation: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Size of the broadened pool the generator is pretrained on.
    pub pool_size: usize,
    pub ood_shift: Option<OodShift>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            num_classes: 3,
            dim: 2,
            family: Family::GaussianMixture,
            components_per_class: 2,
            separation: 4.0,
            train_size: 3000,
            test_size: 2000,
            pool_size: 6000,
            ood_shift: Some(OodShift {
                mean_shift: vec![2.0, 0.0],
                scale: 1.0,
            }),
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, detail: String| Err(Error::OutOfRange { what, detail });
        if self.num_classes < 2 {
            return bad("num_classes", format!("must be >= 2, got {}", self.num_classes));
        }
        if self.dim < 1 {
            return bad("dim", "must be >= 1".into());
        }
        if self.components_per_class < 1 {
            return bad("components_per_class", "must be >= 1".into());
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad("separation", format!("must be positive, got {}", self.separation));
        }
        for (what, n) in [
            ("train_size", self.train_size),
            ("test_size", self.test_size),
            ("pool_size", self.pool_size),
        ] {
            if n < self.num_classes {
                return bad(what, format!("{n} is smaller than num_classes = {}", self.num_classes));
            }
        }
        if self.family == Family::RingMixture && self.dim < 2 {
            return bad("family", "ring-mixture needs dim >= 2".into());
        }
        if let Some(s) = &self.ood_shift {
            if s.mean_shift.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    what: "ood_shift.mean_shift",
                    expected: self.dim,
                    got: s.mean_shift.len(),
                });
            }
            if !(s.scale > 0.0 && s.scale.is_finite()) || s.mean_shift.iter().any(|v| !v.is_finite()) {
                return bad("ood_shift", "scale must be positive and the shift finite".into());
            }
        }
        Ok(())
    }

    /// Component means, grouped by class: `means[c][k]`.
    pub fn component_means(&self) -> Vec<Vec<Vec<f64>>> {
        let c_n = self.num_classes;
        let k_n = self.components_per_class;
        let mut means = vec![Vec::with_capacity(k_n); c_n];
        match self.family {
            Family::GaussianMixture => {
                let total = c_n * k_n;
                for j in 0..total {
                    let mut m = vec![0.0; self.dim];
                    if self.dim == 1 {
                        m[0] = self.separation * (j as f64 - (total - 1) as f64 / 2.0);
                    } else {
                        // neighbours on the circle are exactly `separation` apart
                        let radius = self.separation / (2.0 * (PI / total as f64).sin());
                        let angle = 2.0 * PI * j as f64 / total as f64;
                        m[0] = radius * angle.cos();
                        m[1] = radius * angle.sin();
                    }
                    means[j % c_n].push(m);
                }
            }
            Family::RingMixture => {
                for (c, class_means) in means.iter_mut().enumerate() {
                    let radius = self.separation * (c + 1) as f64;
                    for k in 0..k_n {
                        // offset rings so classes do not line up radially
                        let angle = 2.0 * PI * (k as f64 + 0.5 * c as f64) / k_n as f64;
                        let mut m = vec![0.0; self.dim];
                        m[0] = radius * angle.cos();
                        m[1] = radius * angle.sin();
                        class_means.push(m);
                    }
                }
            }
        }
        means
    }
}

/// The datasets of one task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    pub seed: u64,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub ood_test: Option<LabeledDataset>,
    pub pretrain_pool: LabeledDataset,
}

fn balanced_labels(n: usize, num_classes: usize, rng: &mut Rng) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    y.shuffle(rng);
    y
}

fn draw_split(
    means: &[Vec<Vec<f64>>],
    n: usize,
    std: f64,
    shift: Option<&[f64]>,
    split: Split,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    let c_n = means.len();
    let dim = means[0][0].len();
    let y = balanced_labels(n, c_n, rng);
    let mut x = Array2::zeros((n, dim));
    for (i, &c) in y.iter().enumerate() {
        let comp = &means[c][rng.random_range(0..means[c].len())];
        for j in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            x[[i, j]] = comp[j] + shift.map_or(0.0, |s| s[j]) + std * z;
        }
    }
    LabeledDataset::new(x, y, c_n, split)
}

/// Draws train, test, optional OOD test and the pretraining pool.
///
/// Components have unit covariance. The pool moves every component mean by a
/// random direction of length `0.5 · separation` and doubles its covariance.
pub fn make_task(spec: &TaskSpec, seed: u64) -> Result<Task> {
    spec.validate()?;
    let means = spec.component_means();
    let train = draw_split(&means, spec.train_size, 1.0, None, Split::Train, &mut rng::stream(seed, "task-train", 0))?;
    let test = draw_split(&means, spec.test_size, 1.0, None, Split::Test, &mut rng::stream(seed, "task-test", 0))?;
    let ood_test = match &spec.ood_shift {
        Some(s) => Some(draw_split(
            &means,
            spec.test_size,
            s.scale,
            Some(&s.mean_shift),
            Split::OodTest,
            &mut rng::stream(seed, "task-ood", 0),
        )?),
        None => None,
    };
    let mut jitter_rng = rng::stream(seed, "task-pool-jitter", 0);
    let jittered: Vec<Vec<Vec<f64>>> = means
        .iter()
        .map(|class| {
            class
                .iter()
                .map(|m| {
                    let dir: Vec<f64> = (0..m.len()).map(|_| jitter_rng.sample(StandardNormal)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    m.iter()
                        .zip(&dir)
                        .map(|(a, d)| a + 0.5 * spec.separation * d / norm)
                        .collect()
                })
                .collect()
        })
        .collect();
    let pretrain_pool = draw_split(
        &jittered,
        spec.pool_size,
        2f64.sqrt(),
        None,
        Split::Pretrain,
        &mut rng::stream(seed, "task-pool", 0),
    )?;
    Ok(Task {
        spec: spec.clone(),
        seed,
        train,
        test,
        ood_test,
        pretrain_pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    #[test]
    fn default_layout_is_interleaved_with_unit_spacing() {
        let spec = TaskSpec::default();
        let means = spec.component_means();
        assert_eq!(means.len(), 3);
        let flat: Vec<&Vec<f64>> = (0..6).map(|j| &means[j % 3][j / 3]).collect();
        for j in 0..6 {
            let a = flat[j];
            let b = flat[(j + 1) % 6];
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((d - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_data_and_balanced() {
        let spec = TaskSpec::default();
        let a = make_task(&spec, 3).unwrap();
        let b = make_task(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.class_counts(), vec![1000; 3]);
        assert_eq!(a.pretrain_pool.len(), 6000);
        assert_ne!(a.train, make_task(&spec, 4).unwrap().train);
    }

    #[test]
    fn null_ood_shift_matches_test_moments() {
        let spec = TaskSpec {
            ood_shift: Some(OodShift {
                mean_shift: vec![0.0, 0.0],
                scale: 1.0,
            }),
            ..TaskSpec::default()
        };
        let t = make_task(&spec, 9).unwrap();
        let ood = t.ood_test.unwrap();
        let n = t.test.len() as f64;
        for j in 0..2 {
            let a = t.test.x().column(j).to_owned();
            let b = ood.x().column(j).to_owned();
            let se = ((a.var(0.0) + b.var(0.0)) / n).sqrt();
            assert!((a.mean().unwrap() - b.mean().unwrap()).abs() < 4.0 * se);
        }
    }

    #[test]
    fn ood_shift_moves_mean() {
        let t = make_task(&TaskSpec::default(), 1).unwrap();
        let ood = t.ood_test.unwrap();
        let m_t = t.test.x().mean_axis(Axis(0)).unwrap();
        let m_o = ood.x().mean_axis(Axis(0)).unwrap();
        assert!((m_o[0] - m_t[0] - 2.0).abs() < 0.3);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            TaskSpec {
                num_classes: 1,
                ..TaskSpec::default()
            },
            TaskSpec {
                separation: 0.0,
                ..TaskSpec::default()
            },
            TaskSpec {
                train_size: 2,
                ..TaskSpec::default()
            },
            TaskSpec {
                dim: 1,
                family: Family::RingMixture,
                ood_shift: None,
                ..TaskSpec::default()
            },
            TaskSpec {
                dim: 3,
                ..TaskSpec::default()
            },
        ];
        for s in bad {
            assert!(make_task(&s, 0).is_err(), "{s:?}");
        }
    }

    #[test]
    fn ring_and_line_layouts() {
        let ring = TaskSpec {
            family: Family::RingMixture,
            ..TaskSpec::default()
        };
        for (c, class) in ring.component_means().iter().enumerate() {
            for m in class {
                assert!(((m[0] * m[0] + m[1] * m[1]).sqrt() - 4.0 * (c + 1) as f64).abs() < 1e-9);
            }
        }
        let line = TaskSpec {
            dim: 1,
            ood_shift: None,
            ..TaskSpec::default()
        };
        let t = make_task(&line, 0).unwrap();
        assert_eq!(t.train.dim(), 1);
    }
}
