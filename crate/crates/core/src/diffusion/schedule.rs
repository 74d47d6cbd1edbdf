use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Per-timestep noise parameters, indexed by `t` in `1..=T`.
///
/// Posterior standard deviations use `σ_t² = β_t`, except `σ_1 = 0` so the
/// final reverse step is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    zero_noise: bool,
}

/// Linear β schedule from `beta_start` to `beta_end` over `t = 1..=T`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::OutOfRange {
            what: "schedule horizon",
            detail: "T must be >= 1".into(),
        });
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::OutOfRange {
            what: "beta bounds",
            detail: format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"),
        });
    }
    let betas = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Empty("beta schedule"));
        }
        if let Some(t) = beta.iter().position(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::OutOfRange {
                what: "beta",
                detail: format!("beta_{} = {} not in (0, 1)", t + 1, beta[t]),
            });
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta
            .iter()
            .enumerate()
            .map(|(i, b)| if i == 0 { 0.0 } else { b.sqrt() })
            .collect();
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
            sigma,
            zero_noise: false,
        })
    }

    /// Same schedule with every reverse-step noise term removed. Test hook.
    pub fn with_zero_sigma(mut self) -> Self {
        self.sigma.iter_mut().for_each(|s| *s = 0.0);
        self.zero_noise = true;
        self
    }

    pub fn horizon(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.horizon() {
            return Err(Error::OutOfRange {
                what: "timestep",
                detail: format!("{t} not in 1..={}", self.horizon()),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn is_noise_free(&self) -> bool {
        self.zero_noise
    }

    /// `β_t² / (2 σ_t² α_t (1 − ᾱ_t))` with `σ_t² = β_t`, i.e. `β_t / (2 α_t (1 − ᾱ_t))`.
    ///
    /// The σ_1 = 0 sampling convention is not applied here; it would make the
    /// t = 1 weight infinite.
    pub fn snr_weight(&self, t: usize) -> f64 {
        self.beta(t) / (2.0 * self.alpha(t) * (1.0 - self.alpha_bar(t)))
    }

    /// Coefficients `(α, β, σ)` of the reverse step from `t` down to `t_prev`.
    ///
    /// Adjacent steps use the schedule entries directly; strided steps use the
    /// respaced process `α = ᾱ_t / ᾱ_{t_prev}`, `β = 1 − α`, `σ² = β`, and the
    /// step into `t_prev = 0` is noise-free.
    pub(crate) fn step_coefficients(&self, t: usize, t_prev: usize) -> (f64, f64, f64) {
        if t_prev + 1 == t {
            return (self.alpha(t), self.beta(t), self.sigma(t));
        }
        let alpha = self.alpha_bar(t) / self.alpha_bar(t_prev);
        let beta = 1.0 - alpha;
        let sigma = if t_prev == 0 || self.zero_noise { 0.0 } else { beta.sqrt() };
        (alpha, beta, sigma)
    }
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · ε`.
pub fn forward_marginal_sample(sched: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    if x0.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            what: "forward noise",
            expected: x0.len(),
            got: eps.len(),
        });
    }
    let a = sched.alpha_bar(t).sqrt();
    let s = (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Row-wise [`forward_marginal_sample`] with a per-row timestep.
pub fn forward_marginal_batch(
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    t: &[usize],
    eps: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if x0.dim() != eps.dim() {
        return Err(Error::DimensionMismatch {
            what: "forward noise batch",
            expected: x0.len(),
            got: eps.len(),
        });
    }
    if t.len() != x0.nrows() {
        return Err(Error::DimensionMismatch {
            what: "timesteps",
            expected: x0.nrows(),
            got: t.len(),
        });
    }
    for &ti in t {
        sched.check_t(ti)?;
    }
    let mut out = Array2::zeros(x0.raw_dim());
    for (i, &ti) in t.iter().enumerate() {
        let a = sched.alpha_bar(ti).sqrt();
        let s = (1.0 - sched.alpha_bar(ti)).sqrt();
        Zip::from(out.row_mut(i))
            .and(x0.row(i))
            .and(eps.row(i))
            .for_each(|o, &x, &e| *o = a * x + s * e);
    }
    Ok(out)
}
