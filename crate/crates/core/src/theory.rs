//! Finite-class generalization bound and a Monte Carlo check of the Hoeffding
//! plus union-bound argument behind it.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    /// Natural log of the hypothesis-class size.
    pub log_cardinality_f: f64,
    pub delta: f64,
    pub sample_size: u64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_cardinality_f.is_finite() && self.log_cardinality_f >= 0.0) {
            return Err(Error::OutOfRange {
                what: "log_cardinality_f",
                detail: format!("must be finite and >= 0, got {}", self.log_cardinality_f),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::OutOfRange {
                what: "delta",
                detail: format!("{} not in (0, 1)", self.delta),
            });
        }
        if self.sample_size == 0 {
            return Err(Error::OutOfRange {
                what: "sample_size",
                detail: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// `√((ln|F| + ln(1/δ)) / |S|)`.
pub fn gen_bound(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    Ok(((p.log_cardinality_f - p.delta.ln()) / p.sample_size as f64).sqrt())
}

/// `exp(−2t² / Σ (b_i − a_i)²)` bounding `Pr[Σ X_i − E Σ X_i ≥ t]` for `X_i ∈ [a_i, b_i]`.
pub fn hoeffding_tail(n: usize, t: f64, ranges: &[(f64, f64)]) -> Result<f64> {
    if n == 0 || ranges.len() != n {
        return Err(Error::DimensionMismatch {
            what: "hoeffding ranges",
            expected: n,
            got: ranges.len(),
        });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::OutOfRange {
            what: "deviation t",
            detail: format!("must be positive, got {t}"),
        });
    }
    if let Some(i) = ranges.iter().position(|&(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::OutOfRange {
            what: "hoeffding range",
            detail: format!("range {i} = {:?} is degenerate", ranges[i]),
        });
    }
    let width_sq: f64 = ranges.iter().map(|&(a, b)| (b - a) * (b - a)).sum();
    Ok((-2.0 * t * t / width_sq).exp())
}

/// 1-D threshold classifiers `h_θ(x) = 1[x ≥ θ]` under 0-1 loss.
///
/// Data: `x ~ N(0, 1)`, `y = 1[x ≥ θ*]` flipped with probability `label_noise`.
/// The population error of each hypothesis is proxied by a fixed evaluation
/// sample of `eval_size` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteClassExperiment {
    pub thresholds: Vec<f64>,
    pub true_threshold: f64,
    pub label_noise: f64,
    pub eval_size: usize,
    pub eval_seed: u64,
}

impl Default for FiniteClassExperiment {
    fn default() -> Self {
        FiniteClassExperiment {
            thresholds: (0..50).map(|i| -2.0 + 4.0 * i as f64 / 49.0).collect(),
            true_threshold: 0.0,
            label_noise: 0.1,
            eval_size: 100_000,
            eval_seed: 0,
        }
    }
}

/// A named experiment with its sample size and deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub experiment: FiniteClassExperiment,
    pub sample_size: usize,
    pub t: f64,
}

impl FiniteClassExperiment {
    /// One hypothesis that matches noiseless labels: every loss is 0.
    pub fn zero_loss() -> Self {
        FiniteClassExperiment {
            thresholds: vec![0.0],
            label_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn cardinality(&self) -> usize {
        self.thresholds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Empty("hypothesis class"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::OutOfRange {
                what: "label_noise",
                detail: format!("{} not in [0, 1]", self.label_noise),
            });
        }
        if self.eval_size == 0 {
            return Err(Error::OutOfRange {
                what: "eval_size",
                detail: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng) -> (f64, bool) {
        let x: f64 = rng.sample(StandardNormal);
        let clean = x >= self.true_threshold;
        let flip = self.label_noise > 0.0 && rng.random::<f64>() < self.label_noise;
        (x, clean ^ flip)
    }

    /// Mean 0-1 loss of every hypothesis on `points`.
    fn errors(&self, points: &[(f64, bool)]) -> Vec<f64> {
        // thresholds are arbitrary; sort x once and count with binary search
        let mut xs: Vec<(f64, bool)> = points.to_vec();
        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = xs.len();
        // prefix counts of positive labels
        let mut pos_prefix = Vec::with_capacity(n + 1);
        pos_prefix.push(0usize);
        for &(_, y) in &xs {
            pos_prefix.push(pos_prefix.last().unwrap() + y as usize);
        }
        let total_pos = pos_prefix[n];
        self.thresholds
            .iter()
            .map(|&th| {
                // points with x < θ are predicted 0: wrong when labeled 1
                let k = xs.partition_point(|p| p.0 < th);
                let wrong_below = pos_prefix[k];
                let above = n - k;
                let pos_above = total_pos - pos_prefix[k];
                let wrong_above = above - pos_above;
                (wrong_below + wrong_above) as f64 / n as f64
            })
            .collect()
    }

    /// Errors on the fixed evaluation sample, the stand-in for population error.
    pub fn population_errors(&self) -> Vec<f64> {
        let mut rng = rng::stream(self.eval_seed, "bound-eval", 0);
        let points: Vec<(f64, bool)> = (0..self.eval_size).map(|_| self.draw(&mut rng)).collect();
        self.errors(&points)
    }

    pub fn presets() -> Vec<Preset> {
        vec![
            Preset {
                name: "default",
                experiment: Self::default(),
                sample_size: 500,
                t: 0.1,
            },
            Preset {
                name: "loose-deviation",
                experiment: Self::default(),
                sample_size: 100,
                t: 0.05,
            },
            Preset {
                name: "single-hypothesis",
                experiment: FiniteClassExperiment {
                    thresholds: vec![0.3],
                    ..Self::default()
                },
                sample_size: 50,
                t: 0.1,
            },
            Preset {
                name: "zero-loss",
                experiment: Self::zero_loss(),
                sample_size: 100,
                t: 0.01,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEstimate {
    /// Fraction of trials with `max_f (Test(f) − Train(f)) ≥ t`.
    pub empirical_rate: f64,
    /// `|F| · exp(−2 |S| t²)`.
    pub analytic_cap: f64,
    /// Per hypothesis, the fraction of trials with `Test(f) − Train(f) ≥ t`.
    pub per_hypothesis_rates: Vec<f64>,
    pub trials: usize,
    pub sample_size: usize,
    pub t: f64,
}

/// Monte Carlo estimate of `Pr[sup_f (Test(f) − Train_S(f)) ≥ t]` over fresh
/// training samples `S`, next to the union-plus-Hoeffding cap.
pub fn bound_violation_mc(
    exp: &FiniteClassExperiment,
    sample_size: usize,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<ViolationEstimate> {
    exp.validate()?;
    if trials == 0 || sample_size == 0 {
        return Err(Error::OutOfRange {
            what: "trials / sample_size",
            detail: "both must be >= 1".into(),
        });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::OutOfRange {
            what: "deviation t",
            detail: format!("must be positive, got {t}"),
        });
    }
    let test = exp.population_errors();
    let per_trial: Vec<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, "bound-trial", i as u64);
            let sample: Vec<(f64, bool)> = (0..sample_size).map(|_| exp.draw(&mut rng)).collect();
            let train = exp.errors(&sample);
            test.iter().zip(&train).map(|(te, tr)| te - tr >= t).collect()
        })
        .collect();
    let k = exp.cardinality();
    let mut per_hyp = vec![0usize; k];
    let mut any = 0usize;
    for flags in &per_trial {
        if flags.iter().any(|&f| f) {
            any += 1;
        }
        for (c, &f) in per_hyp.iter_mut().zip(flags) {
            *c += f as usize;
        }
    }
    let tf = trials as f64;
    Ok(ViolationEstimate {
        empirical_rate: any as f64 / tf,
        analytic_cap: k as f64 * (-2.0 * sample_size as f64 * t * t).exp(),
        per_hypothesis_rates: per_hyp.iter().map(|&c| c as f64 / tf).collect(),
        trials,
        sample_size,
        t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(log_f: f64, delta: f64, n: u64) -> BoundParams {
        BoundParams {
            log_cardinality_f: log_f,
            delta,
            sample_size: n,
        }
    }

    #[test]
    fn gen_bound_examples() {
        assert!(gen_bound(&params(0.0, 1.0 - 1e-15, 7)).unwrap() < 1e-7);
        let b = gen_bound(&params(1.0, (-1.0f64).exp(), 2)).unwrap();
        assert!((b - 1.0).abs() < 1e-15);
        // 40-digit reference: 0.04105931792511036974079221043283958392739
        let b = gen_bound(&params(20.0 * 2f64.ln(), 0.05, 10_000)).unwrap();
        assert!((b - 0.041_059_317_925_110_37).abs() < 1e-10);
        assert!(gen_bound(&params(-1.0, 0.5, 1)).is_err());
        assert!(gen_bound(&params(1.0, 0.0, 1)).is_err());
        assert!(gen_bound(&params(1.0, 1.0, 1)).is_err());
        assert!(gen_bound(&params(1.0, 0.5, 0)).is_err());
    }

    #[test]
    fn gen_bound_monotone_on_grids() {
        let logs = [0.0, 0.5, 3.0, 10.0, 100.0];
        let deltas = [0.5, 0.1, 0.05, 1e-3, 1e-9];
        let sizes = [1u64, 10, 100, 10_000, 1_000_000];
        for &lf in &logs {
            for &d in &deltas {
                for w in sizes.windows(2) {
                    assert!(gen_bound(&params(lf, d, w[1])).unwrap() < gen_bound(&params(lf, d, w[0])).unwrap());
                }
            }
        }
        for &d in &deltas {
            for &n in &sizes {
                for w in logs.windows(2) {
                    assert!(gen_bound(&params(w[1], d, n)).unwrap() > gen_bound(&params(w[0], d, n)).unwrap());
                }
            }
        }
        for &lf in &logs {
            for &n in &sizes {
                for w in deltas.windows(2) {
                    // smaller δ means larger 1/δ
                    assert!(gen_bound(&params(lf, w[1], n)).unwrap() > gen_bound(&params(lf, w[0], n)).unwrap());
                }
            }
        }
    }

    #[test]
    fn hoeffding_examples() {
        let v = hoeffding_tail(1, 0.5, &[(0.0, 1.0)]).unwrap();
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!(hoeffding_tail(1, 1e-9, &[(0.0, 1.0)]).unwrap() > 1.0 - 1e-15);
        let narrow = [(0.0, 1.0), (-1.0, 0.5), (2.0, 2.25)];
        let wide: Vec<(f64, f64)> = narrow.iter().map(|&(a, b)| (a, a + 2.0 * (b - a))).collect();
        let t = 0.8;
        let e_n = hoeffding_tail(3, t, &narrow).unwrap().ln();
        let e_w = hoeffding_tail(3, t, &wide).unwrap().ln();
        assert!((e_n / e_w - 4.0).abs() < 1e-12);
        assert!(e_w > e_n);
        assert!(hoeffding_tail(1, 0.5, &[(1.0, 1.0)]).is_err());
        assert!(hoeffding_tail(2, 0.5, &[(0.0, 1.0)]).is_err());
        assert!(hoeffding_tail(1, 0.0, &[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn threshold_errors_match_direct_count() {
        let exp = FiniteClassExperiment::default();
        let mut r = rng::seeded(2);
        let pts: Vec<(f64, bool)> = (0..300).map(|_| exp.draw(&mut r)).collect();
        let fast = exp.errors(&pts);
        for (k, &th) in exp.thresholds.iter().enumerate() {
            let direct = pts.iter().filter(|&&(x, y)| (x >= th) != y).count() as f64 / 300.0;
            assert_eq!(fast[k], direct);
        }
    }

    #[test]
    fn zero_variance_class_never_violates() {
        let est = bound_violation_mc(&FiniteClassExperiment::zero_loss(), 50, 1e-9, 200, 1).unwrap();
        assert_eq!(est.empirical_rate, 0.0);
    }

    #[test]
    fn large_deviation_rarely_violates() {
        let exp = FiniteClassExperiment::default();
        let trials = 500;
        let est = bound_violation_mc(&exp, 200, 0.2, trials, 3).unwrap();
        assert!(est.analytic_cap < 1.0 / trials as f64);
        assert!(est.empirical_rate <= est.analytic_cap + 3.0 * (est.analytic_cap / trials as f64).sqrt());
    }

    #[test]
    fn presets_respect_cap_and_union_bound() {
        for p in FiniteClassExperiment::presets() {
            let trials = 1000;
            let est = bound_violation_mc(&p.experiment, p.sample_size, p.t, trials, 11).unwrap();
            let se = (est.analytic_cap.min(1.0) * (1.0 - est.analytic_cap.min(1.0)) / trials as f64).sqrt();
            assert!(
                est.empirical_rate <= est.analytic_cap + 3.0 * se,
                "{}: {} > {}",
                p.name,
                est.empirical_rate,
                est.analytic_cap
            );
            let sum: f64 = est.per_hypothesis_rates.iter().sum();
            assert!(est.empirical_rate <= sum + 1e-12, "{}", p.name);
        }
    }

    #[test]
    fn default_experiment_under_cap() {
        let exp = FiniteClassExperiment::default();
        let est = bound_violation_mc(&exp, 500, 0.1, 1000, 0).unwrap();
        assert!((est.analytic_cap - 50.0 * (-10.0f64).exp()).abs() < 1e-15);
        assert!(est.empirical_rate <= est.analytic_cap);
    }

    #[test]
    fn trials_are_seed_deterministic() {
        let exp = FiniteClassExperiment::default();
        let a = bound_violation_mc(&exp, 100, 0.05, 200, 5).unwrap();
        let b = bound_violation_mc(&exp, 100, 0.05, 200, 5).unwrap();
        assert_eq!(a, b);
    }
}
