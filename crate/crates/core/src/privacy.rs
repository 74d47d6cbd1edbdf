//! Likelihood-ratio membership inference against classifiers trained directly
//! on member data or on data synthesized by a member-trained generator.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nets::DenseNet;
use crate::rng::{self, derive_labeled};
use crate::taskbench::classifier::{train_classifier, train_encoder, ClassifierConfig};
use crate::taskbench::{
    finetune_generator, make_task, pretrain_generator, synthesize_dataset, ArmStats, ExperimentConfig, Generator,
    LabeledDataset, PipelineToggles,
};
use crate::{Error, Result};

const PROB_CLAMP: f64 = 1e-6;
/// Floor applied to every fitted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// The false-positive rate the attack is judged at.
pub const LOW_FPR: f64 = 1e-3;

/// `log(p / (1 − p))` with `p` clamped to `[1e-6, 1 − 1e-6]`.
pub fn logit_confidence(prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::OutOfRange {
            what: "probability",
            detail: format!("{prob} not in [0, 1]"),
        });
    }
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok((p / (1.0 - p)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiraVariant {
    Online,
    Offline,
    FixedVariance,
}

impl LiraVariant {
    pub const ALL: [LiraVariant; 3] = [LiraVariant::Online, LiraVariant::Offline, LiraVariant::FixedVariance];

    pub fn name(self) -> &'static str {
        match self {
            LiraVariant::Online => "online",
            LiraVariant::Offline => "offline",
            LiraVariant::FixedVariance => "fixed-variance",
        }
    }
}

/// Logit confidences of shadow models, with each shadow's membership, per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowEnsemble {
    num_shadows: usize,
    membership: Vec<Vec<bool>>,
    confidences: Vec<Vec<f64>>,
}

impl ShadowEnsemble {
    /// `membership[i][s]` says whether shadow `s` trained on example `i`.
    pub fn new(membership: Vec<Vec<bool>>, confidences: Vec<Vec<f64>>) -> Result<Self> {
        if membership.is_empty() {
            return Err(Error::Empty("shadow ensemble"));
        }
        let num_shadows = membership[0].len();
        if confidences.len() != membership.len() {
            return Err(Error::DimensionMismatch {
                what: "confidence rows",
                expected: membership.len(),
                got: confidences.len(),
            });
        }
        for (i, (m, c)) in membership.iter().zip(&confidences).enumerate() {
            if m.len() != num_shadows || c.len() != num_shadows {
                return Err(Error::DimensionMismatch {
                    what: "shadows per example",
                    expected: num_shadows,
                    got: m.len().min(c.len()),
                });
            }
            if !m.contains(&true) || !m.contains(&false) {
                return Err(Error::InvalidSpec(format!(
                    "example {i} needs at least one IN and one OUT shadow"
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("shadow confidence".into()));
            }
        }
        Ok(ShadowEnsemble {
            num_shadows,
            membership,
            confidences,
        })
    }

    pub fn num_shadows(&self) -> usize {
        self.num_shadows
    }

    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    fn split(&self, i: usize, inside: bool) -> Vec<f64> {
        self.membership[i]
            .iter()
            .zip(&self.confidences[i])
            .filter(|(m, _)| **m == inside)
            .map(|(_, c)| *c)
            .collect()
    }

    pub fn in_confidences(&self, i: usize) -> Vec<f64> {
        self.split(i, true)
    }

    pub fn out_confidences(&self, i: usize) -> Vec<f64> {
        self.split(i, false)
    }
}

/// IN and OUT Gaussians for one example, in logit space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiraFit {
    pub mu_in: f64,
    pub sigma_in: f64,
    pub mu_out: f64,
    pub sigma_out: f64,
}

fn mean_and_sq_dev(v: &[f64]) -> Result<(f64, f64)> {
    if v.is_empty() {
        return Err(Error::Empty("confidence list"));
    }
    let mu = v.iter().sum::<f64>() / v.len() as f64;
    Ok((mu, v.iter().map(|c| (c - mu).powi(2)).sum()))
}

/// Population mean and standard deviation (floored) of IN and OUT confidences.
///
/// The fixed-variance variant replaces every σ by one pooled value: the root
/// mean squared deviation of all confidences from their own group mean.
pub fn fit_lira(ens: &ShadowEnsemble, variant: LiraVariant) -> Result<Vec<LiraFit>> {
    let mut fits = Vec::with_capacity(ens.len());
    let (mut pooled_sq, mut pooled_n) = (0.0, 0usize);
    for i in 0..ens.len() {
        let cin = ens.in_confidences(i);
        let cout = ens.out_confidences(i);
        let (mu_in, sq_in) = mean_and_sq_dev(&cin)?;
        let (mu_out, sq_out) = mean_and_sq_dev(&cout)?;
        pooled_sq += sq_in + sq_out;
        pooled_n += cin.len() + cout.len();
        fits.push(LiraFit {
            mu_in,
            sigma_in: (sq_in / cin.len() as f64).sqrt().max(SIGMA_FLOOR),
            mu_out,
            sigma_out: (sq_out / cout.len() as f64).sqrt().max(SIGMA_FLOOR),
        });
    }
    if variant == LiraVariant::FixedVariance {
        let sigma = (pooled_sq / pooled_n as f64).sqrt().max(SIGMA_FLOOR);
        for f in &mut fits {
            f.sigma_in = sigma;
            f.sigma_out = sigma;
        }
    }
    Ok(fits)
}

fn log_normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    -0.5 * ((x - mu) / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Membership score; higher means more likely a member.
///
/// Online and fixed-variance use the Gaussian log-likelihood ratio; offline
/// uses the standardized distance above the OUT mean.
pub fn lira_score(conf: f64, fit: &LiraFit, variant: LiraVariant) -> f64 {
    match variant {
        LiraVariant::Online | LiraVariant::FixedVariance => {
            log_normal_pdf(conf, fit.mu_in, fit.sigma_in) - log_normal_pdf(conf, fit.mu_out, fit.sigma_out)
        }
        LiraVariant::Offline => (conf - fit.mu_out) / fit.sigma_out,
    }
}

/// ROC operating points from the strictest threshold down, starting at (0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

impl Roc {
    /// Highest TPR among operating points with FPR at most `max_fpr`.
    pub fn tpr_at(&self, max_fpr: f64) -> f64 {
        self.fpr
            .iter()
            .zip(&self.tpr)
            .filter(|(f, _)| **f <= max_fpr)
            .map(|(_, t)| *t)
            .fold(0.0, f64::max)
    }
}

/// Exact ROC by a score-sorted sweep, equal scores entering together.
pub fn roc_low_fpr(scores: &[f64], membership: &[bool]) -> Result<(Roc, f64)> {
    if scores.len() != membership.len() {
        return Err(Error::DimensionMismatch {
            what: "membership flags",
            expected: scores.len(),
            got: membership.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("attack score".into()));
    }
    let pos = membership.iter().filter(|m| **m).count();
    let neg = membership.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidSpec("ROC needs both members and non-members".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = Roc {
        fpr: vec![0.0],
        tpr: vec![0.0],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if membership[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.fpr.push(fp as f64 / neg as f64);
        roc.tpr.push(tp as f64 / pos as f64);
    }
    let low = roc.tpr_at(LOW_FPR);
    Ok((roc, low))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiaArm {
    /// The classifier trains on member data.
    Direct,
    /// The classifier trains on data synthesized by a generator finetuned on member data.
    Synthetic,
}

impl MiaArm {
    pub fn name(self) -> &'static str {
        match self {
            MiaArm::Direct => "direct",
            MiaArm::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiaConfig {
    pub num_shadows: usize,
    /// Size of the privacy data; half of it is the target's member set.
    pub privacy_size: usize,
    /// Multiplies the classifier epoch budget so the target overfits.
    pub epoch_factor: usize,
    /// Hidden widths of every attacked classifier, wide enough to memorize.
    pub classifier_hidden: Vec<usize>,
    /// Membership permutations averaged by the shuffled control.
    pub shuffles: usize,
    pub toggles: PipelineToggles,
}

impl Default for MiaConfig {
    fn default() -> Self {
        MiaConfig {
            num_shadows: 8,
            privacy_size: 2000,
            epoch_factor: 10,
            classifier_hidden: vec![64, 64],
            shuffles: 20,
            toggles: PipelineToggles::full(),
        }
    }
}

impl MiaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_shadows < 4 || self.num_shadows % 2 != 0 {
            return Err(Error::OutOfRange {
                what: "num_shadows",
                detail: format!("must be even and >= 4, got {}", self.num_shadows),
            });
        }
        if self.classifier_hidden.contains(&0) {
            return Err(Error::OutOfRange {
                what: "classifier_hidden",
                detail: "layer widths must be >= 1".into(),
            });
        }
        if self.privacy_size < 4 || self.epoch_factor == 0 || self.shuffles == 0 {
            return Err(Error::OutOfRange {
                what: "privacy_size / epoch_factor / shuffles",
                detail: "privacy_size must be >= 4, the others >= 1".into(),
            });
        }
        self.toggles.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: LiraVariant,
    pub tpr_at_low_fpr: f64,
    pub roc: Roc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaSeedResult {
    pub seed: u64,
    pub variants: Vec<VariantOutcome>,
    /// Online TPR at the low FPR with membership labels permuted, averaged over shuffles.
    pub shuffled_tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub arm: MiaArm,
    pub num_shadows: usize,
    pub members: usize,
    pub non_members: usize,
    pub per_seed: Vec<MiaSeedResult>,
    /// Per-variant TPR at the low FPR across seeds, in [`LiraVariant::ALL`] order.
    pub tpr: Vec<(LiraVariant, ArmStats)>,
    pub shuffled: ArmStats,
}

impl MiaReport {
    pub fn tpr(&self, variant: LiraVariant) -> &ArmStats {
        &self.tpr.iter().find(|(v, _)| *v == variant).expect("all variants reported").1
    }
}

/// Trains the attacked model of `arm` on `members`.
fn train_model(
    arm: MiaArm,
    members: &LabeledDataset,
    base: &Generator,
    cfg: &ExperimentConfig,
    mia: &MiaConfig,
    clf: &ClassifierConfig,
    seed: u64,
) -> Result<DenseNet> {
    let train = match arm {
        MiaArm::Direct => members.clone(),
        MiaArm::Synthetic => {
            let t = mia.toggles;
            let encoder = match t.visual_guidance {
                true => Some(train_encoder(members, &cfg.generator.encoder, derive_labeled(seed, "encoder", 0))?),
                false => None,
            };
            let gen = finetune_generator(base, members, encoder.as_ref(), t, derive_labeled(seed, "finetune", 0))?;
            synthesize_dataset(&gen, members.len(), t, members, &cfg.synthesis, derive_labeled(seed, "synthesis", 0))?
        }
    };
    train_classifier(&train, clf, derive_labeled(seed, "classifier", 0))
}

fn true_class_logits(model: &DenseNet, x: ArrayView2<f64>, y: &[usize]) -> Result<Vec<f64>> {
    let p = model.predict(x)?;
    y.iter().enumerate().map(|(i, &c)| logit_confidence(p[[i, c]])).collect()
}

/// Runs LiRA against one arm for each seed.
///
/// Per seed the privacy data is drawn from the task distribution, half of it
/// becomes the target's member set, and every example is IN for exactly half
/// of the shadows. Shadows are trained the same way as the target.
pub fn run_mia_experiment(cfg: &ExperimentConfig, mia: &MiaConfig, arm: MiaArm, seeds: &[u64]) -> Result<MiaReport> {
    cfg.validate()?;
    mia.validate()?;
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let clf = ClassifierConfig {
        epochs: cfg.classifier.epochs * mia.epoch_factor,
        hidden: mia.classifier_hidden.clone(),
        ..cfg.classifier.clone()
    };
    let spec = crate::taskbench::TaskSpec {
        train_size: mia.privacy_size,
        ood_shift: None,
        ..cfg.task.clone()
    };
    let n = mia.privacy_size;
    let half = mia.num_shadows / 2;
    let per_seed = seeds
        .iter()
        .map(|&seed| -> Result<MiaSeedResult> {
            let task = make_task(&spec, derive_labeled(seed, "mia-task", 0))?;
            let data = &task.train;
            let base = match arm {
                MiaArm::Synthetic => Some(pretrain_generator(
                    &task.pretrain_pool,
                    &cfg.generator,
                    derive_labeled(seed, "pretrain", 0),
                )?),
                MiaArm::Direct => None,
            };
            let base_ref = base.as_ref();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(seed, "mia-target", 0));
            let mut target_in = vec![false; n];
            for &i in &order[..n / 2] {
                target_in[i] = true;
            }
            let mut shadow_rng = rng::stream(seed, "mia-shadows", 0);
            let membership: Vec<Vec<bool>> = (0..n)
                .map(|_| {
                    let mut perm: Vec<usize> = (0..mia.num_shadows).collect();
                    perm.shuffle(&mut shadow_rng);
                    let mut m = vec![false; mia.num_shadows];
                    for &s in &perm[..half] {
                        m[s] = true;
                    }
                    m
                })
                .collect();
            let models: Vec<Vec<f64>> = (0..=mia.num_shadows)
                .into_par_iter()
                .map(|m| {
                    let idx: Vec<usize> = (0..n)
                        .filter(|&i| if m == 0 { target_in[i] } else { membership[i][m - 1] })
                        .collect();
                    let members = data.select(&idx);
                    let placeholder;
                    let base = match base_ref {
                        Some(b) => b,
                        None => {
                            placeholder = Generator::init(data.dim(), data.num_classes(), &cfg.generator, 0)?;
                            &placeholder
                        }
                    };
                    let model = train_model(arm, &members, base, cfg, mia, &clf, derive_labeled(seed, "mia-model", m as u64))?;
                    true_class_logits(&model, data.x(), data.y())
                })
                .collect::<Result<_>>()?;
            let confidences: Vec<Vec<f64>> = (0..n).map(|i| (1..=mia.num_shadows).map(|m| models[m][i]).collect()).collect();
            let ens = ShadowEnsemble::new(membership, confidences)?;
            let target = &models[0];
            let mut variants = Vec::new();
            let mut online_scores = Vec::new();
            for variant in LiraVariant::ALL {
                let fits = fit_lira(&ens, variant)?;
                let scores: Vec<f64> = target.iter().zip(&fits).map(|(c, f)| lira_score(*c, f, variant)).collect();
                let (roc, tpr) = roc_low_fpr(&scores, &target_in)?;
                if variant == LiraVariant::Online {
                    online_scores = scores;
                }
                variants.push(VariantOutcome {
                    variant,
                    tpr_at_low_fpr: tpr,
                    roc,
                });
            }
            let mut shuffle_rng = rng::stream(seed, "mia-control", 0);
            let mut labels = target_in.clone();
            let mut total = 0.0;
            for _ in 0..mia.shuffles {
                labels.shuffle(&mut shuffle_rng);
                total += roc_low_fpr(&online_scores, &labels)?.1;
            }
            Ok(MiaSeedResult {
                seed,
                variants,
                shuffled_tpr: total / mia.shuffles as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tpr = LiraVariant::ALL
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, ArmStats::from_values(per_seed.iter().map(|s| s.variants[k].tpr_at_low_fpr).collect())))
        .collect();
    Ok(MiaReport {
        arm,
        num_shadows: mia.num_shadows,
        members: n / 2,
        non_members: n - n / 2,
        shuffled: ArmStats::from_values(per_seed.iter().map(|s| s.shuffled_tpr).collect()),
        per_seed,
        tpr,
    })
}

/// Tolerance of the shuffled control around `LOW_FPR`: three binomial standard
/// errors over `members` draws plus one TPR quantum.
pub fn chance_tolerance(members: usize) -> f64 {
    let m = members as f64;
    3.0 * (LOW_FPR * (1.0 - LOW_FPR) / m).sqrt() + 1.0 / m
}
