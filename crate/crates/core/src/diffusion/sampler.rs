use ndarray::{s, concatenate, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{forward_marginal_sample, NoiseSchedule};
use super::{ensure_finite, NoisePredictor};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Where a reverse chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Prior {
    /// `x_T ~ N(0, I)`.
    Gaussian,
    /// A same-class real sample noised to `t0 = round(strength · T)`.
    Latent { strength: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub guidance_scale: f64,
    pub num_steps: usize,
    pub prior: Prior,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            guidance_scale: 2.0,
            num_steps: 30,
            prior: Prior::Gaussian,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::OutOfRange {
                what: "guidance_scale",
                detail: format!("must be finite and >= 0, got {}", self.guidance_scale),
            });
        }
        if self.num_steps < 1 || self.num_steps > horizon {
            return Err(Error::OutOfRange {
                what: "num_steps",
                detail: format!("{} not in 1..={horizon}", self.num_steps),
            });
        }
        if let Prior::Latent { strength } = self.prior {
            check_strength(strength)?;
        }
        Ok(())
    }
}

fn check_strength(strength: f64) -> Result<()> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::OutOfRange {
            what: "strength",
            detail: format!("{strength} not in (0, 1]"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedNoise {
    /// `ε̂ = ε_∅ + w (ε_y − ε_∅)`.
    pub eps: Array2<f64>,
    /// `(ε_y − ε_∅) / √(1 − ᾱ_t)`, the implied conditional score term.
    pub score_diff: Array2<f64>,
}

/// Classifier-free guided noise estimate for a batch sharing timestep `t`.
///
/// Computed as `(1 − w) ε_∅ + w ε_y` so that `w = 0` and `w = 1` reproduce the
/// unconditional and conditional predictions bit for bit.
pub fn guided_noise<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    x_t: ArrayView2<f64>,
    t: usize,
    cond: ArrayView2<f64>,
    null_cond: ArrayView2<f64>,
    w: f64,
) -> Result<GuidedNoise> {
    sched.check_t(t)?;
    let n = x_t.nrows();
    if cond.nrows() != n || null_cond.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "guidance conditions",
            expected: n,
            got: if cond.nrows() != n { cond.nrows() } else { null_cond.nrows() },
        });
    }
    if cond.ncols() != null_cond.ncols() {
        return Err(Error::DimensionMismatch {
            what: "null condition width",
            expected: cond.ncols(),
            got: null_cond.ncols(),
        });
    }
    // one stacked pass: conditional rows first, then unconditional
    let xs = concatenate(Axis(0), &[x_t, x_t]).expect("same width");
    let cs = concatenate(Axis(0), &[cond, null_cond]).expect("same width");
    let ts = vec![t; 2 * n];
    let both = pred.predict_noise(xs.view(), &ts, cs.view())?;
    ensure_finite(&both, "denoiser output")?;
    let eps_c = both.slice(s![..n, ..]);
    let eps_u = both.slice(s![n.., ..]);
    let eps = &eps_u * (1.0 - w) + &eps_c * w;
    let score_diff = (&eps_c - &eps_u) / (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(GuidedNoise { eps, score_diff })
}

/// One guided reverse step from `t` to `t_prev < t`.
///
/// `rngs[i]` supplies the injected noise of row `i`; nothing is drawn when
/// the step's σ is zero.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    x_t: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    cond: ArrayView2<f64>,
    null_cond: ArrayView2<f64>,
    w: f64,
    rngs: &mut [Rng],
) -> Result<Array2<f64>> {
    sched.check_t(t)?;
    if t_prev >= t {
        return Err(Error::OutOfRange {
            what: "reverse step",
            detail: format!("t_prev {t_prev} must be below t {t}"),
        });
    }
    if rngs.len() != x_t.nrows() {
        return Err(Error::DimensionMismatch {
            what: "chain rngs",
            expected: x_t.nrows(),
            got: rngs.len(),
        });
    }
    let guided = guided_noise(pred, sched, x_t, t, cond, null_cond, w)?;
    let (alpha, beta, sigma) = sched.step_coefficients(t, t_prev);
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut next = (&x_t - &(guided.eps * coef)) * inv_sqrt_alpha;
    if sigma > 0.0 {
        for (mut row, r) in next.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
            for v in row.iter_mut() {
                let z: f64 = r.sample(StandardNormal);
                *v += sigma * z;
            }
        }
    }
    if let Some(pos) = next.iter().position(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            step: t,
            detail: format!("non-finite state in chain {} after step {t} -> {t_prev}", pos / next.ncols().max(1)),
        });
    }
    Ok(next)
}

/// One full-resolution ancestral step `t → t − 1`; noise-free at `t = 1`.
#[allow(clippy::too_many_arguments)]
pub fn ancestral_step<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    x_t: ArrayView2<f64>,
    t: usize,
    cond: ArrayView2<f64>,
    null_cond: ArrayView2<f64>,
    w: f64,
    rngs: &mut [Rng],
) -> Result<Array2<f64>> {
    sched.check_t(t)?;
    reverse_step(pred, sched, x_t, t, t - 1, cond, null_cond, w, rngs)
}

/// `round(strength · T)` clamped to `[1, T]`.
pub fn latent_start_step(horizon: usize, strength: f64) -> usize {
    ((strength * horizon as f64).round() as usize).clamp(1, horizon)
}

/// Noises `x_real` forward to the latent start step.
pub fn latent_prior_init(sched: &NoiseSchedule, x_real: &[f64], strength: f64, rng: &mut Rng) -> Result<(Vec<f64>, usize)> {
    check_strength(strength)?;
    let t0 = latent_start_step(sched.horizon(), strength);
    let eps: Vec<f64> = (0..x_real.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok((forward_marginal_sample(sched, x_real, t0, &eps)?, t0))
}

/// `min(num_steps, t_start)` distinct timesteps, evenly spaced and descending
/// from `t_start` to 1.
pub fn strided_timesteps(t_start: usize, num_steps: usize) -> Vec<usize> {
    let n = num_steps.min(t_start).max(1);
    if n == 1 {
        return vec![t_start];
    }
    (0..n).map(|k| t_start - k * (t_start - 1) / (n - 1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: Array2<f64>,
    /// Row of the prior pool each latent chain started from.
    pub sources: Option<Vec<usize>>,
    pub t_start: usize,
}

fn chain_rng(seed: u64, chain: u64) -> Rng {
    rng::stream(seed, "sample-chain", chain)
}

/// Runs one reverse chain per row of `conds`.
///
/// Chain `i` draws all its randomness (prior pick, initial state, step noise)
/// from a stream keyed by `(cfg.seed, chain_ids[i])`, so a chain's output does
/// not depend on which other chains share the batch.
pub fn sample_batch<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    conds: ArrayView2<f64>,
    null_cond: ArrayView1<f64>,
    prior_pool: Option<ArrayView2<f64>>,
    chain_ids: &[u64],
) -> Result<SampleOutput> {
    cfg.validate(sched.horizon())?;
    let n = conds.nrows();
    let d = pred.data_dim();
    if chain_ids.len() != n {
        return Err(Error::DimensionMismatch {
            what: "chain ids",
            expected: n,
            got: chain_ids.len(),
        });
    }
    let mut rngs: Vec<Rng> = chain_ids.iter().map(|&c| chain_rng(cfg.seed, c)).collect();
    let mut x = Array2::zeros((n, d));
    let (t_start, sources) = match cfg.prior {
        Prior::Gaussian => {
            for (mut row, r) in x.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
                row.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
            }
            (sched.horizon(), None)
        }
        Prior::Latent { strength } => {
            let pool = prior_pool.ok_or(Error::Empty("latent prior pool"))?;
            if pool.nrows() == 0 {
                return Err(Error::Empty("latent prior pool"));
            }
            if pool.ncols() != d {
                return Err(Error::DimensionMismatch {
                    what: "latent prior pool",
                    expected: d,
                    got: pool.ncols(),
                });
            }
            let mut sources = Vec::with_capacity(n);
            let mut t0 = sched.horizon();
            for (i, r) in rngs.iter_mut().enumerate() {
                let pick = r.random_range(0..pool.nrows());
                let real = pool.row(pick).to_vec();
                let (x0, t) = latent_prior_init(sched, &real, strength, r)?;
                x.row_mut(i).iter_mut().zip(x0).for_each(|(o, v)| *o = v);
                sources.push(pick);
                t0 = t;
            }
            (t0, Some(sources))
        }
    };
    let null_rows = null_cond.broadcast((n, null_cond.len())).ok_or(Error::DimensionMismatch {
        what: "null condition",
        expected: conds.ncols(),
        got: null_cond.len(),
    })?;
    let steps = strided_timesteps(t_start, cfg.num_steps);
    for (k, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(k + 1).copied().unwrap_or(0);
        x = reverse_step(pred, sched, x.view(), t, t_prev, conds, null_rows, cfg.guidance_scale, &mut rngs)?;
    }
    Ok(SampleOutput {
        samples: x,
        sources,
        t_start,
    })
}

/// A single chain (chain id 0) for condition `cond`.
pub fn sample<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    cond: &[f64],
    null_cond: &[f64],
    prior_pool: Option<ArrayView2<f64>>,
) -> Result<Vec<f64>> {
    let conds = ArrayView2::from_shape((1, cond.len()), cond).expect("row vector");
    let out = sample_batch(pred, sched, cfg, conds, ArrayView1::from(null_cond), prior_pool, &[0])?;
    Ok(out.samples.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::rng::seeded;
    use ndarray::{array, Array1};
    use std::cell::RefCell;

    /// Returns `cond[0]` in every coordinate; `cond` of width 1.
    struct CondEcho {
        dim: usize,
    }

    impl NoisePredictor for CondEcho {
        fn data_dim(&self) -> usize {
            self.dim
        }
        fn predict_noise(&self, x_t: ArrayView2<f64>, _t: &[usize], c: ArrayView2<f64>) -> Result<Array2<f64>> {
            let mut out = Array2::zeros(x_t.raw_dim());
            for (mut row, cv) in out.axis_iter_mut(Axis(0)).zip(c.axis_iter(Axis(0))) {
                row.fill(cv[0]);
            }
            Ok(out)
        }
    }

    /// Optimal predictor for data `N(μ, v I)`.
    struct GaussianOptimal<'a> {
        sched: &'a NoiseSchedule,
        mu: Vec<f64>,
        v: f64,
        seen: RefCell<Vec<usize>>,
    }

    impl NoisePredictor for GaussianOptimal<'_> {
        fn data_dim(&self) -> usize {
            self.mu.len()
        }
        fn predict_noise(&self, x_t: ArrayView2<f64>, t: &[usize], _c: ArrayView2<f64>) -> Result<Array2<f64>> {
            self.seen.borrow_mut().extend_from_slice(t);
            let mut out = Array2::zeros(x_t.raw_dim());
            for (i, &ti) in t.iter().enumerate() {
                let a = self.sched.alpha_bar(ti);
                let k = (1.0 - a).sqrt() / (1.0 - a * (1.0 - self.v));
                for j in 0..self.mu.len() {
                    out[[i, j]] = (x_t[[i, j]] - a.sqrt() * self.mu[j]) * k;
                }
            }
            Ok(out)
        }
    }

    fn gaussian_stub<'a>(sched: &'a NoiseSchedule, mu: Vec<f64>, v: f64) -> GaussianOptimal<'a> {
        GaussianOptimal {
            sched,
            mu,
            v,
            seen: RefCell::new(Vec::new()),
        }
    }

    #[test]
    fn guidance_identities() {
        let sched = make_schedule(10, 0.01, 0.1).unwrap();
        let stub = CondEcho { dim: 1 };
        let x = array![[0.3]];
        let c = array![[1.0]];
        let u = array![[0.5]];
        let g = guided_noise(&stub, &sched, x.view(), 5, c.view(), u.view(), 2.0).unwrap();
        assert_eq!(g.eps[[0, 0]], 1.5);
        assert_eq!(g.score_diff[[0, 0]], 0.5 / (1.0 - sched.alpha_bar(5)).sqrt());
        let g = guided_noise(&stub, &sched, x.view(), 5, c.view(), u.view(), 1.0).unwrap();
        assert_eq!(g.eps[[0, 0]], 1.0);
        let g = guided_noise(&stub, &sched, x.view(), 5, c.view(), u.view(), 0.0).unwrap();
        assert_eq!(g.eps[[0, 0]], 0.5);
    }

    #[test]
    fn guidance_reductions_exact_on_random_inputs() {
        let sched = make_schedule(50, 1e-3, 0.05).unwrap();
        let stub = CondEcho { dim: 3 };
        let mut r = seeded(4);
        for _ in 0..200 {
            let c = r.random_range(-1e3..1e3);
            let u = r.random_range(-1e3..1e3);
            let x = Array2::from_elem((1, 3), r.random_range(-5.0..5.0));
            let cm = array![[c]];
            let um = array![[u]];
            let g1 = guided_noise(&stub, &sched, x.view(), 7, cm.view(), um.view(), 1.0).unwrap();
            let g0 = guided_noise(&stub, &sched, x.view(), 7, cm.view(), um.view(), 0.0).unwrap();
            assert!(g1.eps.iter().all(|&v| v == c));
            assert!(g0.eps.iter().all(|&v| v == u));
        }
    }

    #[test]
    fn strided_timesteps_shape() {
        assert_eq!(strided_timesteps(5, 5), vec![5, 4, 3, 2, 1]);
        assert_eq!(strided_timesteps(200, 1), vec![200]);
        assert_eq!(strided_timesteps(3, 10), vec![3, 2, 1]);
        for (t0, n) in [(200, 30), (150, 30), (7, 4), (1000, 999)] {
            let ts = strided_timesteps(t0, n);
            assert_eq!(ts.len(), n);
            assert_eq!(ts[0], t0);
            assert_eq!(*ts.last().unwrap(), 1);
            assert!(ts.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn latent_start_step_rounding() {
        assert_eq!(latent_start_step(200, 0.75), 150);
        assert_eq!(latent_start_step(200, 1.0), 200);
        assert_eq!(latent_start_step(200, 1.0 / 200.0), 1);
        assert_eq!(latent_start_step(200, 1e-9), 1);
        let sched = make_schedule(200, 1e-4, 0.02).unwrap();
        assert!(latent_prior_init(&sched, &[0.0], 0.0, &mut seeded(0)).is_err());
        assert!(latent_prior_init(&sched, &[0.0], 1.5, &mut seeded(0)).is_err());
    }

    #[test]
    fn latent_lower_edge_stays_near_real_sample() {
        let sched = make_schedule(200, 1e-4, 0.02).unwrap();
        let real = [2.0, -1.0, 0.5];
        let (x, t0) = latent_prior_init(&sched, &real, 0.001, &mut seeded(3)).unwrap();
        assert_eq!(t0, 1);
        let scale = (1.0 - sched.alpha_bar(1)).sqrt();
        for (xi, ri) in x.iter().zip(real) {
            // |ε| < 6 for any reasonable draw
            assert!((xi - ri * sched.alpha_bar(1).sqrt()).abs() <= 6.0 * scale);
            assert!((xi - ri).abs() < 0.1);
        }
    }

    #[test]
    fn full_strength_latent_matches_gaussian_prior_on_long_schedule() {
        // ᾱ_T must be ≈ 0 for this to hold; the 200-step default keeps ᾱ_T ≈ 0.13
        let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert!(sched.alpha_bar(1000) < 1e-4);
        let real = [3.0, -2.0];
        let n = 10_000;
        let mut r = seeded(17);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let (x, t0) = latent_prior_init(&sched, &real, 1.0, &mut r).unwrap();
            assert_eq!(t0, 1000);
            for j in 0..2 {
                sum[j] += x[j];
                sq[j] += x[j] * x[j];
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "coordinate {j} mean {mean}");
            assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "coordinate {j} var {var}");
        }
    }

    #[test]
    fn perfect_stub_recovers_clean_point_without_noise() {
        let sched = make_schedule(200, 1e-4, 0.02).unwrap().with_zero_sigma();
        let x0 = [1.5, -0.7];
        // data is a point mass: v = 0
        let stub = gaussian_stub(&sched, x0.to_vec(), 0.0);
        let null = Array1::<f64>::zeros(0);
        let conds = Array2::zeros((1, 0));
        for steps in [200, 30] {
            let a = sched.alpha_bar(200).sqrt();
            let mut x = array![[a * x0[0], a * x0[1]]];
            let ts = strided_timesteps(200, steps);
            let mut rngs = vec![seeded(0)];
            let nulls = null.broadcast((1, 0)).unwrap();
            for (k, &t) in ts.iter().enumerate() {
                let tp = ts.get(k + 1).copied().unwrap_or(0);
                x = reverse_step(&stub, &sched, x.view(), t, tp, conds.view(), nulls, 2.0, &mut rngs).unwrap();
            }
            for j in 0..2 {
                assert!((x[[0, j]] - x0[j]).abs() < 1e-6, "steps {steps}: {}", x[[0, j]]);
            }
        }
    }

    #[test]
    fn final_step_is_deterministic() {
        let sched = make_schedule(50, 1e-3, 0.05).unwrap();
        let stub = gaussian_stub(&sched, vec![0.0, 1.0], 1.0);
        let x = array![[0.4, -0.2]];
        let c = Array2::zeros((1, 0));
        let a = ancestral_step(&stub, &sched, x.view(), 1, c.view(), c.view(), 2.0, &mut [seeded(1)]).unwrap();
        let b = ancestral_step(&stub, &sched, x.view(), 1, c.view(), c.view(), 2.0, &mut [seeded(2)]).unwrap();
        assert_eq!(a, b);
        let a = ancestral_step(&stub, &sched, x.view(), 2, c.view(), c.view(), 2.0, &mut [seeded(1)]).unwrap();
        let b = ancestral_step(&stub, &sched, x.view(), 2, c.view(), c.view(), 2.0, &mut [seeded(2)]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn vanishing_beta_barely_moves_state() {
        let sched = NoiseSchedule::from_betas(vec![1e-12; 10]).unwrap();
        let stub = CondEcho { dim: 2 };
        let x = array![[0.8, -1.1]];
        let c = array![[0.3]];
        let u = array![[-0.2]];
        for t in 1..=10 {
            let det = ancestral_step(&stub, &sched.clone().with_zero_sigma(), x.view(), t, c.view(), u.view(), 2.0, &mut [seeded(5)])
                .unwrap();
            let noisy = ancestral_step(&stub, &sched, x.view(), t, c.view(), u.view(), 2.0, &mut [seeded(5)]).unwrap();
            for j in 0..2 {
                assert!((det[[0, j]] - x[[0, j]]).abs() < 1e-6);
                // σ_t = 1e-6 adds at most a few micro-units
                assert!((noisy[[0, j]] - x[[0, j]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn non_finite_state_aborts_with_step() {
        let sched = make_schedule(10, 0.01, 0.1).unwrap();
        let stub = CondEcho { dim: 1 };
        let x = array![[f64::INFINITY]];
        let c = array![[0.0]];
        let err = ancestral_step(&stub, &sched, x.view(), 5, c.view(), c.view(), 1.0, &mut [seeded(0)]).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 5, .. }), "{err}");
    }

    #[test]
    fn full_stride_equals_manual_ancestral_chain() {
        let sched = make_schedule(40, 1e-3, 0.05).unwrap();
        let stub = gaussian_stub(&sched, vec![1.0, -1.0], 0.5);
        let cfg = SamplerConfig {
            guidance_scale: 1.5,
            num_steps: 40,
            prior: Prior::Gaussian,
            seed: 77,
        };
        let got = sample(&stub, &sched, &cfg, &[], &[], None).unwrap();
        let mut r = chain_rng(77, 0);
        let mut x = Array2::from_shape_fn((1, 2), |_| r.sample::<f64, _>(StandardNormal));
        let mut rngs = vec![r];
        let c = Array2::zeros((1, 0));
        for t in (1..=40).rev() {
            x = ancestral_step(&stub, &sched, x.view(), t, c.view(), c.view(), 1.5, &mut rngs).unwrap();
        }
        assert_eq!(got, x.row(0).to_vec());
    }

    #[test]
    fn sampling_is_deterministic_and_batch_independent() {
        let sched = make_schedule(100, 1e-4, 0.02).unwrap();
        let stub = CondEcho { dim: 2 };
        let pool = array![[1.0, 1.0], [2.0, -2.0], [0.0, 5.0]];
        let cfg = SamplerConfig {
            prior: Prior::Latent { strength: 0.5 },
            seed: 11,
            ..SamplerConfig::default()
        };
        let conds = array![[0.1], [0.2], [0.3], [0.4]];
        let null = array![0.0];
        let ids = [3, 9, 4, 100];
        let a = sample_batch(&stub, &sched, &cfg, conds.view(), null.view(), Some(pool.view()), &ids).unwrap();
        let b = sample_batch(&stub, &sched, &cfg, conds.view(), null.view(), Some(pool.view()), &ids).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t_start, 50);
        for (i, &id) in ids.iter().enumerate() {
            let one = sample_batch(
                &stub,
                &sched,
                &cfg,
                conds.slice(s![i..i + 1, ..]),
                null.view(),
                Some(pool.view()),
                &[id],
            )
            .unwrap();
            assert_eq!(one.samples.row(0), a.samples.row(i));
            assert_eq!(one.sources.unwrap()[0], a.sources.as_ref().unwrap()[i]);
        }
    }

    #[test]
    fn latent_chains_never_visit_steps_above_start() {
        let sched = make_schedule(200, 1e-4, 0.02).unwrap();
        let stub = gaussian_stub(&sched, vec![0.0], 1.0);
        for strength in [0.05, 0.3, 0.75, 1.0] {
            stub.seen.borrow_mut().clear();
            let cfg = SamplerConfig {
                prior: Prior::Latent { strength },
                ..SamplerConfig::default()
            };
            let pool = array![[0.5], [1.5]];
            sample(&stub, &sched, &cfg, &[], &[], Some(pool.view())).unwrap();
            let t0 = latent_start_step(200, strength);
            let seen = stub.seen.borrow();
            assert!(!seen.is_empty());
            assert_eq!(*seen.iter().max().unwrap(), t0);
        }
    }

    #[test]
    fn latent_prior_requires_pool() {
        let sched = make_schedule(20, 1e-3, 0.05).unwrap();
        let stub = CondEcho { dim: 1 };
        let cfg = SamplerConfig {
            prior: Prior::Latent { strength: 0.5 },
            num_steps: 10,
            ..SamplerConfig::default()
        };
        assert!(sample(&stub, &sched, &cfg, &[0.0], &[0.0], None).is_err());
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(sample(&stub, &sched, &cfg, &[0.0], &[0.0], Some(empty.view())).is_err());
        let cfg = SamplerConfig {
            num_steps: 21,
            ..SamplerConfig::default()
        };
        assert!(sample(&stub, &sched, &cfg, &[0.0], &[0.0], None).is_err());
    }

    #[test]
    fn optimal_stub_sample_mean_converges() {
        // data N(μ, v I) on a schedule whose ᾱ_T ≈ 0
        let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
        let mu = vec![2.0, -1.0];
        let v = 0.25;
        let stub = gaussian_stub(&sched, mu.clone(), v);
        let n = 10_000;
        let conds = Array2::zeros((n, 0));
        let null = Array1::zeros(0);
        let ids: Vec<u64> = (0..n as u64).collect();
        for steps in [1000, 30] {
            let cfg = SamplerConfig {
                guidance_scale: 2.0,
                num_steps: steps,
                prior: Prior::Gaussian,
                seed: 5,
            };
            let out = sample_batch(&stub, &sched, &cfg, conds.view(), null.view(), None, &ids).unwrap();
            let mean = out.samples.mean_axis(Axis(0)).unwrap();
            let var = out.samples.var_axis(Axis(0), 0.0);
            for j in 0..2 {
                let se = (var[j] / n as f64).sqrt();
                assert!((mean[j] - mu[j]).abs() < 3.0 * se, "steps {steps}: mean {} vs {}", mean[j], mu[j]);
            }
            if steps == 1000 {
                for j in 0..2 {
                    assert!((var[j] - v).abs() < 0.1 * v, "variance {} vs {v}", var[j]);
                }
            }
        }
    }
}
