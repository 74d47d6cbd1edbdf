use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::EncoderConfig;
use super::data::{LabeledDataset, Split};
use crate::conditioning::{visual_guidance, ConditionTable};
use crate::diffusion::{
    draw_noise, forward_marginal_batch, loss_from_prediction, sample_batch, Denoiser, NoiseSchedule, Prior,
    SamplerConfig, ScheduleConfig,
};
use crate::matching::{CombinedLoss, LossConfig};
use crate::nets::checkpoint::Checkpoint;
use crate::nets::{optimizer_step, DenseNet, NetSpec, OptimizerConfig, OptimizerState};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Which pipeline components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineToggles {
    pub latent_prior: bool,
    pub visual_guidance: bool,
    pub mmd_loss: bool,
    pub finetune: bool,
}

impl PipelineToggles {
    pub const fn new(latent_prior: bool, visual_guidance: bool, mmd_loss: bool, finetune: bool) -> Self {
        PipelineToggles {
            latent_prior,
            visual_guidance,
            mmd_loss,
            finetune,
        }
    }

    pub const fn all_off() -> Self {
        Self::new(false, false, false, false)
    }

    pub const fn full() -> Self {
        Self::new(true, true, true, true)
    }

    /// The ten ablation rows, as `(latent prior, visual guidance, MMD loss, finetune)`.
    pub const ABLATION_ROWS: [PipelineToggles; 10] = [
        Self::new(false, false, false, false),
        Self::new(false, false, false, true),
        Self::new(false, true, false, true),
        Self::new(false, false, true, true),
        Self::new(false, true, true, true),
        Self::new(true, false, false, false),
        Self::new(true, false, false, true),
        Self::new(true, true, false, true),
        Self::new(true, false, true, true),
        Self::new(true, true, true, true),
    ];

    pub fn validate(&self) -> Result<()> {
        if (self.mmd_loss || self.visual_guidance) && !self.finetune {
            return Err(Error::InvalidSpec(
                "mmd_loss and visual_guidance act during finetuning and require finetune = true".into(),
            ));
        }
        Ok(())
    }

    /// Short label such as `LP+VG+MMD+FT` or `none`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.latent_prior, "LP"),
            (self.visual_guidance, "VG"),
            (self.mmd_loss, "MMD"),
            (self.finetune, "FT"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, s)| *s)
        .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    /// A fresh random subset per training batch / synthesis chunk.
    #[default]
    PerBatch,
    /// One subset per class, fixed for the whole phase.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub schedule: ScheduleConfig,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub class_dim: usize,
    pub cond_drop: f64,
    pub guidance_samples: usize,
    pub guidance_mode: GuidanceMode,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            schedule: ScheduleConfig::default(),
            hidden: vec![128, 128],
            time_dim: 16,
            class_dim: 16,
            cond_drop: 0.1,
            guidance_samples: 32,
            guidance_mode: GuidanceMode::PerBatch,
            batch_size: 128,
            pretrain_epochs: 60,
            finetune_epochs: 60,
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.loss.validate()?;
        let bad = |what: &'static str, detail: String| Err(Error::OutOfRange { what, detail });
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad("time_dim", format!("must be even and >= 2, got {}", self.time_dim));
        }
        if self.class_dim == 0 {
            return bad("class_dim", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return bad("cond_drop", format!("{} not in [0, 1]", self.cond_drop));
        }
        if self.guidance_samples == 0 || self.batch_size == 0 {
            return bad("guidance_samples / batch_size", "must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be >= 1".into());
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return bad("optimizer.lr", format!("must be positive, got {}", self.optimizer.lr));
        }
        if self.encoder.feature_dim == 0 {
            return bad("encoder.feature_dim", "must be >= 1".into());
        }
        Ok(())
    }

    pub fn visual_dim(&self) -> usize {
        self.encoder.feature_dim
    }
}

/// Sampling settings used when synthesizing a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub guidance_scale: f64,
    pub num_steps: usize,
    /// Latent-prior strength, used when the latent prior is on.
    pub strength: f64,
    /// Chains sharing one visual-guidance draw.
    pub chunk_size: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            guidance_scale: 2.0,
            num_steps: 30,
            strength: 0.75,
            chunk_size: 256,
        }
    }
}

impl SynthesisConfig {
    pub fn sampler(&self, latent_prior: bool, seed: u64) -> SamplerConfig {
        SamplerConfig {
            guidance_scale: self.guidance_scale,
            num_steps: self.num_steps,
            prior: if latent_prior {
                Prior::Latent { strength: self.strength }
            } else {
                Prior::Gaussian
            },
            seed,
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::OutOfRange {
                what: "chunk_size",
                detail: "must be >= 1".into(),
            });
        }
        self.sampler(true, 0).validate(horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub simple: f64,
    pub mmd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub step: usize,
    pub simple: f64,
    pub mmd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

/// A trained conditional generator and everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub denoiser: Denoiser,
    pub table: ConditionTable,
    /// ψ used for visual guidance; present iff finetuned with guidance on.
    pub encoder: Option<DenseNet>,
    pub schedule: NoiseSchedule,
    pub config: GeneratorConfig,
    pub toggles: PipelineToggles,
    pub seed: u64,
    pub curves: TrainingCurves,
}

impl Generator {
    /// An untrained generator for `dim`-dimensional data over `num_classes` classes.
    pub fn init(dim: usize, num_classes: usize, cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let cond_dim = cfg.class_dim + cfg.visual_dim();
        let denoiser = Denoiser::new(
            dim,
            cond_dim,
            cfg.time_dim,
            &cfg.hidden,
            schedule.horizon(),
            rng::derive_labeled(seed, "denoiser-init", 0),
        )?;
        let table = ConditionTable::new(
            num_classes,
            cfg.class_dim,
            cfg.visual_dim(),
            rng::derive_labeled(seed, "condition-init", 0),
        )?;
        Ok(Generator {
            denoiser,
            table,
            encoder: None,
            schedule,
            config: cfg.clone(),
            toggles: PipelineToggles::all_off(),
            seed,
            curves: TrainingCurves::default(),
        })
    }

    pub fn data_dim(&self) -> usize {
        use crate::diffusion::NoisePredictor;
        self.denoiser.data_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.table.num_classes()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "toggles": self.toggles,
            "data_dim": self.data_dim(),
            "num_classes": self.num_classes(),
            "denoiser": self.denoiser.net.spec(),
            "encoder": self.encoder.as_ref().map(|e| e.spec().clone()),
            "curves": self.curves,
        });
        let mut ckpt = Checkpoint::new("generator", self.seed, meta);
        self.denoiser.net.push_tensors(&mut ckpt, "denoiser.");
        let (c, e) = self.table.class_embeddings.dim();
        ckpt.push("condition.class", vec![c, e], self.table.class_embeddings.iter().copied());
        ckpt.push("condition.null", vec![e], self.table.null_embedding.iter().copied());
        if let Some(enc) = &self.encoder {
            enc.push_tensors(&mut ckpt, "encoder.");
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != "generator" {
            return Err(Error::Checkpoint(format!("expected a generator, found {}", ckpt.header.kind)));
        }
        let meta = &ckpt.header.meta;
        let field = |name: &str| -> Result<serde_json::Value> {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata field {name}")))
        };
        let parse = |name: &str| -> Result<serde_json::Value> { field(name) };
        let bad = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let config: GeneratorConfig = serde_json::from_value(parse("config")?).map_err(bad)?;
        let toggles: PipelineToggles = serde_json::from_value(parse("toggles")?).map_err(bad)?;
        let data_dim: usize = serde_json::from_value(parse("data_dim")?).map_err(bad)?;
        let den_spec: NetSpec = serde_json::from_value(parse("denoiser")?).map_err(bad)?;
        let enc_spec: Option<NetSpec> = serde_json::from_value(parse("encoder")?).map_err(bad)?;
        let curves: TrainingCurves = serde_json::from_value(parse("curves")?).map_err(bad)?;
        let schedule = config.schedule.build()?;
        let seed = ckpt.header.seed;
        let net = DenseNet::from_tensors(ckpt, "denoiser.", den_spec, rng::derive_labeled(seed, "denoiser-init", 0))?;
        let cond_dim = config.class_dim + config.visual_dim();
        let denoiser = Denoiser::from_net(net, data_dim, cond_dim, config.time_dim, schedule.horizon())?;
        let (ci, class) = ckpt.tensor("condition.class")?;
        if ci.shape.len() != 2 {
            return Err(Error::Checkpoint("condition.class must be a matrix".into()));
        }
        let class = Array2::from_shape_vec((ci.shape[0], ci.shape[1]), class)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (_, null) = ckpt.tensor("condition.null")?;
        let table = ConditionTable::from_parts(class, Array1::from(null), config.visual_dim())?;
        let encoder = match enc_spec {
            Some(spec) => Some(DenseNet::from_tensors(ckpt, "encoder.", spec, seed)?),
            None => None,
        };
        Ok(Generator {
            denoiser,
            table,
            encoder,
            schedule,
            config,
            toggles,
            seed,
            curves,
        })
    }
}

/// Per-class guidance vectors for one training batch.
struct GuidanceSource<'a> {
    encoder: &'a DenseNet,
    class_rows: Vec<Array2<f64>>,
    frozen: Option<Vec<Vec<f64>>>,
    m: usize,
}

impl<'a> GuidanceSource<'a> {
    fn new(encoder: &'a DenseNet, data: &LabeledDataset, cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        let class_rows: Vec<Array2<f64>> = (0..data.num_classes()).map(|c| data.class_rows(c)).collect();
        let frozen = match cfg.guidance_mode {
            GuidanceMode::PerBatch => None,
            GuidanceMode::Frozen => Some(
                class_rows
                    .iter()
                    .enumerate()
                    .map(|(c, rows)| {
                        visual_guidance(encoder, rows.view(), cfg.guidance_samples, &mut rng::stream(seed, "guidance-frozen", c as u64))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(GuidanceSource {
            encoder,
            class_rows,
            frozen,
            m: cfg.guidance_samples,
        })
    }

    fn for_classes(&self, present: &[bool], rng: &mut Rng) -> Result<Vec<Option<Vec<f64>>>> {
        present
            .iter()
            .enumerate()
            .map(|(c, &p)| {
                if !p {
                    return Ok(None);
                }
                match &self.frozen {
                    Some(f) => Ok(Some(f[c].clone())),
                    None => visual_guidance(self.encoder, self.class_rows[c].view(), self.m, rng).map(Some),
                }
            })
            .collect()
    }
}

/// One training phase over `data`; `gamma` weights the batch MMD term.
fn train_phase(
    gen: &mut Generator,
    data: &LabeledDataset,
    phase: Phase,
    epochs: usize,
    gamma: f64,
    guidance: Option<&GuidanceSource>,
    seed: u64,
) -> Result<()> {
    let cfg = gen.config.clone();
    let label = match phase {
        Phase::Pretrain => "pretrain",
        Phase::Finetune => "finetune",
    };
    let mut r = rng::stream(seed, label, 0);
    let mut guidance_rng = rng::stream(seed, label, 1);
    let mut den_state = OptimizerState::for_net(cfg.optimizer, &gen.denoiser.net);
    let (c_n, e) = gen.table.class_embeddings.dim();
    let mut table_state = OptimizerState::for_tensors(cfg.optimizer, &[c_n * e, e]);
    let x = data.x();
    let mut step = gen.curves.steps.iter().filter(|s| s.phase == phase).count();
    for epoch in 0..epochs {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut r);
        let (mut sum_simple, mut sum_mmd, mut sum_total, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in idx.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let labels: Vec<Option<usize>> = chunk
                .iter()
                .map(|&i| {
                    let drop = cfg.cond_drop > 0.0 && r.random::<f64>() < cfg.cond_drop;
                    (!drop).then_some(data.y()[i])
                })
                .collect();
            let visual_store = match guidance {
                Some(g) => {
                    let mut present = vec![false; c_n];
                    for c in labels.iter().flatten() {
                        present[*c] = true;
                    }
                    g.for_classes(&present, &mut guidance_rng)?
                }
                None => vec![None; c_n],
            };
            let visual: Vec<Option<&[f64]>> = labels
                .iter()
                .map(|l| l.and_then(|c| visual_store[c].as_deref()))
                .collect();
            let cond = gen.table.cond_matrix(&labels, &visual)?;
            let draw = draw_noise(&gen.schedule, xb.nrows(), xb.ncols(), &mut r);
            let x_t = forward_marginal_batch(&gen.schedule, xb.view(), &draw.t, draw.eps.view())?;
            let (eps_hat, tape) = gen.denoiser.forward_batch(x_t.view(), &draw.t, cond.view())?;
            let dl = loss_from_prediction(&gen.schedule, cfg.loss.weighting, draw, x_t, eps_hat)?;
            let combined = CombinedLoss::from_diffusion(dl, gamma)?;
            if !combined.total.is_finite() {
                let tail: Vec<String> = gen
                    .curves
                    .epochs
                    .iter()
                    .rev()
                    .take(5)
                    .map(|r| format!("epoch {} total {:.6}", r.epoch, r.total))
                    .collect();
                return Err(Error::Diverged {
                    step,
                    detail: format!("{label} loss became non-finite; recent curve: [{}]", tail.join(", ")),
                });
            }
            gen.curves.steps.push(StepRecord {
                phase,
                step,
                simple: combined.simple,
                mmd: combined.mmd,
            });
            sum_simple += combined.simple;
            sum_mmd += combined.mmd;
            sum_total += combined.total;
            batches += 1;
            step += 1;
            let grads = gen.denoiser.backward(&tape, combined.prediction_grad().view())?;
            let (class_grad, null_grad) = gen.table.accumulate_grads(&labels, gen.denoiser.cond_grad(&grads));
            optimizer_step(&mut gen.denoiser.net, &grads, &mut den_state)?;
            let class_slice = gen.table.class_embeddings.as_slice_mut().expect("standard layout");
            let null_slice = gen.table.null_embedding.as_slice_mut().expect("standard layout");
            table_state.update(
                &mut [class_slice, null_slice],
                &[
                    class_grad.as_slice().expect("standard layout"),
                    null_grad.as_slice().expect("standard layout"),
                ],
                &|k| if k == 0 { "class embeddings".into() } else { "null embedding".into() },
            )?;
        }
        let b = batches.max(1) as f64;
        gen.curves.epochs.push(EpochRecord {
            phase,
            epoch,
            simple: sum_simple / b,
            mmd: sum_mmd / b,
            total: sum_total / b,
        });
    }
    Ok(())
}

/// Trains a fresh generator on the broadened pool with plain diffusion loss.
pub fn pretrain_generator(pool: &LabeledDataset, cfg: &GeneratorConfig, seed: u64) -> Result<Generator> {
    if pool.is_empty() {
        return Err(Error::Empty("pretraining pool"));
    }
    let mut gen = Generator::init(pool.dim(), pool.num_classes(), cfg, seed)?;
    train_phase(&mut gen, pool, Phase::Pretrain, cfg.pretrain_epochs, 0.0, None, seed)?;
    Ok(gen)
}

/// Continues training `base` on target data as `toggles` dictate.
///
/// With `finetune` off the base parameters are returned untouched. The
/// combined loss is used when `mmd_loss` is on; visual guidance (which needs
/// `encoder`) conditions the denoiser when `visual_guidance` is on.
pub fn finetune_generator(
    base: &Generator,
    data: &LabeledDataset,
    encoder: Option<&DenseNet>,
    toggles: PipelineToggles,
    seed: u64,
) -> Result<Generator> {
    toggles.validate()?;
    let mut gen = base.clone();
    gen.toggles = toggles;
    if !toggles.finetune {
        return Ok(gen);
    }
    if data.is_empty() {
        return Err(Error::Empty("finetuning data"));
    }
    if data.dim() != base.data_dim() || data.num_classes() != base.num_classes() {
        return Err(Error::InvalidSpec("finetuning data does not match the generator's shape".into()));
    }
    let gamma = if toggles.mmd_loss { base.config.loss.gamma } else { 0.0 };
    let source = match (toggles.visual_guidance, encoder) {
        (true, Some(enc)) => {
            if enc.output_dim() != base.config.visual_dim() {
                return Err(Error::DimensionMismatch {
                    what: "encoder feature width",
                    expected: base.config.visual_dim(),
                    got: enc.output_dim(),
                });
            }
            gen.encoder = Some(enc.clone());
            Some(GuidanceSource::new(enc, data, &base.config, seed)?)
        }
        (true, None) => return Err(Error::InvalidSpec("visual guidance needs an encoder".into())),
        (false, _) => None,
    };
    let epochs = base.config.finetune_epochs;
    train_phase(&mut gen, data, Phase::Finetune, epochs, gamma, source.as_ref(), seed)?;
    Ok(gen)
}

/// Synthesizes `n` labeled points, class-balanced and class-interleaved.
///
/// Point `i` has class `i mod C` and is the `i / C`-th chain of that class.
/// Chains draw from streams keyed by `(seed, class, index)` and guidance
/// vectors are keyed by `(seed, class, index / chunk_size)`, so the first `n`
/// points of a larger synthesis with the same seed equal a synthesis of `n`.
pub fn synthesize_dataset(
    gen: &Generator,
    n: usize,
    toggles: PipelineToggles,
    real_pool: &LabeledDataset,
    cfg: &SynthesisConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    let c_n = gen.num_classes();
    if n < c_n {
        return Err(Error::OutOfRange {
            what: "synthesis size",
            detail: format!("{n} is smaller than the number of classes ({c_n})"),
        });
    }
    cfg.validate(gen.schedule.horizon())?;
    let needs_real = toggles.latent_prior || toggles.visual_guidance;
    let class_rows: Vec<Array2<f64>> = (0..c_n).map(|c| real_pool.class_rows(c)).collect();
    if needs_real {
        if real_pool.num_classes() != c_n || real_pool.dim() != gen.data_dim() {
            return Err(Error::InvalidSpec("real pool does not match the generator's shape".into()));
        }
        if let Some(c) = class_rows.iter().position(|r| r.nrows() == 0) {
            return Err(Error::Empty(if c == 0 { "real pool class" } else { "real pool class" }));
        }
    }
    let encoder = if toggles.visual_guidance {
        Some(gen.encoder.as_ref().ok_or_else(|| {
            Error::InvalidSpec("visual guidance at synthesis needs a generator finetuned with guidance".into())
        })?)
    } else {
        None
    };
    let per_class: Vec<usize> = (0..c_n).map(|c| (n + c_n - 1 - c) / c_n).collect();
    let jobs: Vec<(usize, usize)> = (0..c_n)
        .flat_map(|c| (0..per_class[c].div_ceil(cfg.chunk_size)).map(move |j| (c, j)))
        .collect();
    let null = gen.table.null_condition().to_vec();
    let null = Array1::from(null);
    let sampler = cfg.sampler(toggles.latent_prior, seed);
    let chunks: Vec<Array2<f64>> = jobs
        .par_iter()
        .map(|&(c, j)| -> Result<Array2<f64>> {
            let start = j * cfg.chunk_size;
            let end = ((j + 1) * cfg.chunk_size).min(per_class[c]);
            let visual = match encoder {
                Some(enc) => {
                    let key = match gen.config.guidance_mode {
                        GuidanceMode::PerBatch => ((c as u64) << 32) | j as u64,
                        GuidanceMode::Frozen => (c as u64) << 32,
                    };
                    let mut vr = rng::stream(seed, "synthesis-guidance", key);
                    Some(visual_guidance(enc, class_rows[c].view(), gen.config.guidance_samples, &mut vr)?)
                }
                None => None,
            };
            let cond = gen.table.build_condition(c, visual.as_deref())?.to_vec();
            let count = end - start;
            let conds = Array1::from(cond)
                .broadcast((count, gen.table.cond_dim()))
                .expect("row broadcast")
                .to_owned();
            let ids: Vec<u64> = (start..end).map(|i| ((c as u64) << 32) | i as u64).collect();
            let pool = toggles.latent_prior.then(|| class_rows[c].view());
            let out = sample_batch(&gen.denoiser, &gen.schedule, &sampler, conds.view(), null.view(), pool, &ids)?;
            Ok(out.samples)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut by_class: BTreeMap<usize, Vec<Array2<f64>>> = BTreeMap::new();
    for (&(c, _), chunk) in jobs.iter().zip(chunks) {
        by_class.entry(c).or_default().push(chunk);
    }
    let dim = gen.data_dim();
    let mut x = Array2::zeros((n, dim));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % c_n;
        let k = i / c_n;
        let chunk = &by_class[&c][k / cfg.chunk_size];
        x.row_mut(i).assign(&chunk.row(k % cfg.chunk_size));
        y.push(c);
    }
    LabeledDataset::new(x, y, c_n, Split::Synthetic)
}
