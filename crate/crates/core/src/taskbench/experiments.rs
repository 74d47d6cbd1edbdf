use std::any::Any;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{train_and_eval_classifier, train_classifier, train_encoder, ClassifierConfig};
use super::data::LabeledDataset;
use super::generator::{
    finetune_generator, pretrain_generator, synthesize_dataset, Generator, GeneratorConfig, PipelineToggles,
    SynthesisConfig,
};
use super::task::{make_task, Task, TaskSpec};
use crate::matching::{synthesis_objective_report, ObjectiveReport};
use crate::nets::DenseNet;
use crate::rng::derive_labeled;
use crate::{Error, Result};

/// Everything an experiment needs besides the toggles and seeds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub generator: GeneratorConfig,
    pub synthesis: SynthesisConfig,
    pub classifier: ClassifierConfig,
    /// Weight of the cardinality term in the objective report.
    pub lambda: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.generator.validate()?;
        self.synthesis.validate(self.generator.schedule.steps)?;
        self.classifier.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::OutOfRange {
                what: "lambda",
                detail: format!("must be finite and >= 0, got {}", self.lambda),
            });
        }
        Ok(())
    }
}

/// Per-seed values of one arm with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ArmStats {
    pub fn from_values(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len();
        if n == 0 {
            return ArmStats {
                per_seed,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = per_seed.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        ArmStats { per_seed, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTriple {
    pub real_only: ArmStats,
    pub synthetic_only: ArmStats,
    pub combined: ArmStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub toggles: PipelineToggles,
    pub seeds: Vec<u64>,
    /// Accuracy on the in-distribution test split.
    pub test: ArmTriple,
    /// Accuracy on the shifted test split, when the task has one.
    pub ood: Option<ArmTriple>,
    /// Linear-kernel MMD² between ψ-features of real test and synthetic data.
    pub eval_mmd: ArmStats,
    pub reports: Vec<ObjectiveReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub k: f64,
    pub size: usize,
    pub synthetic: ArmStats,
    pub ood: Option<ArmStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCurve {
    pub toggles: PipelineToggles,
    pub seeds: Vec<u64>,
    pub points: Vec<ScalePoint>,
    pub real_only: ArmStats,
    pub real_ood: Option<ArmStats>,
    /// Rank correlation between `k` and mean synthetic-only accuracy.
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub toggles: PipelineToggles,
    pub synthetic: ArmStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

type Shared = Arc<dyn Any + Send + Sync>;

fn cache() -> &'static Mutex<HashMap<String, Shared>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Shared>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Drops every memoized task, model and dataset.
pub fn clear_cache() {
    cache().lock().expect("cache lock").clear();
}

// Everything cached is a pure function of its key, so sharing never changes results.
fn cached<T: Send + Sync + 'static>(key: String, build: impl FnOnce() -> Result<T>) -> Result<Arc<T>> {
    if let Some(v) = cache().lock().expect("cache lock").get(&key) {
        if let Ok(v) = Arc::clone(v).downcast::<T>() {
            return Ok(v);
        }
    }
    let v = Arc::new(build()?);
    cache()
        .lock()
        .expect("cache lock")
        .insert(key, Arc::clone(&v) as Shared);
    Ok(v)
}

/// Artifacts of one seed, built lazily and memoized across experiments.
pub struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    key: String,
}

impl<'a> SeedContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, seed: u64) -> Self {
        let key = serde_json::to_string(&(&cfg.task, &cfg.generator, seed)).expect("config serializes");
        SeedContext { cfg, seed, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sub_seed(&self, label: &str) -> u64 {
        derive_labeled(self.seed, label, 0)
    }

    pub fn task(&self) -> Result<Arc<Task>> {
        let key = format!("task|{}", serde_json::to_string(&(&self.cfg.task, self.seed)).expect("serializes"));
        cached(key, || make_task(&self.cfg.task, self.seed))
    }

    /// ψ, trained on the real training split.
    pub fn encoder(&self) -> Result<Arc<DenseNet>> {
        let task = self.task()?;
        cached(format!("encoder|{}", self.key), || {
            train_encoder(&task.train, &self.cfg.generator.encoder, self.sub_seed("encoder"))
        })
    }

    pub fn pretrained(&self) -> Result<Arc<Generator>> {
        let task = self.task()?;
        cached(format!("pretrained|{}", self.key), || {
            pretrain_generator(&task.pretrain_pool, &self.cfg.generator, self.sub_seed("pretrain"))
        })
    }

    /// The generator for `toggles`; the latent prior does not affect training.
    pub fn generator(&self, toggles: PipelineToggles) -> Result<Arc<Generator>> {
        toggles.validate()?;
        let training = PipelineToggles {
            latent_prior: false,
            ..toggles
        };
        let key = format!("generator|{}|{}", self.key, training.label());
        let base = self.pretrained()?;
        let task = self.task()?;
        let encoder = if toggles.visual_guidance {
            Some(self.encoder()?)
        } else {
            None
        };
        cached(key, || {
            finetune_generator(&base, &task.train, encoder.as_deref(), training, self.sub_seed("finetune"))
        })
    }

    /// `n` synthetic points; a smaller request reuses the prefix of a larger one.
    pub fn synthetic(&self, toggles: PipelineToggles, n: usize) -> Result<LabeledDataset> {
        let key = format!(
            "synthetic|{}|{}|{}",
            self.key,
            serde_json::to_string(&self.cfg.synthesis).expect("serializes"),
            toggles.label()
        );
        {
            let guard = cache().lock().expect("cache lock");
            if let Some(v) = guard.get(&key).and_then(|v| Arc::clone(v).downcast::<LabeledDataset>().ok()) {
                if v.len() >= n {
                    return Ok(v.prefix(n));
                }
            }
        }
        let gen = self.generator(toggles)?;
        let task = self.task()?;
        let data = synthesize_dataset(&gen, n, toggles, &task.train, &self.cfg.synthesis, self.sub_seed("synthesis"))?;
        cache()
            .lock()
            .expect("cache lock")
            .insert(key, Arc::new(data.clone()) as Shared);
        Ok(data)
    }

    /// Accuracies on (test, optional OOD test) of a classifier trained on `train`.
    pub fn evaluate(&self, train: &LabeledDataset) -> Result<(f64, Option<f64>)> {
        let task = self.task()?;
        let mut tests = vec![&task.test];
        if let Some(ood) = &task.ood_test {
            tests.push(ood);
        }
        let acc = train_and_eval_classifier(train, &tests, &self.cfg.classifier, self.sub_seed("classifier"))?;
        Ok((acc[0], acc.get(1).copied()))
    }

    pub fn real_only(&self) -> Result<Arc<(f64, Option<f64>)>> {
        let key = format!(
            "real-only|{}|{}",
            serde_json::to_string(&(&self.cfg.task, self.seed)).expect("serializes"),
            serde_json::to_string(&self.cfg.classifier).expect("serializes")
        );
        let task = self.task()?;
        cached(key, || self.evaluate(&task.train))
    }

    /// Objective report of `syn` against the real test split.
    pub fn report(&self, syn: &LabeledDataset) -> Result<ObjectiveReport> {
        let task = self.task()?;
        let encoder = self.encoder()?;
        let probe_key = format!(
            "probe|{}|{}",
            serde_json::to_string(&(&self.cfg.task, self.seed)).expect("serializes"),
            serde_json::to_string(&self.cfg.classifier).expect("serializes")
        );
        let probe = cached(probe_key, || {
            train_classifier(&task.train, &self.cfg.classifier, self.sub_seed("classifier"))
        })?;
        synthesis_objective_report(&task.test, syn, encoder.as_ref(), &probe, self.cfg.lambda)
    }
}

fn require_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    Ok(())
}

fn stats_of(values: impl IntoIterator<Item = f64>) -> ArmStats {
    ArmStats::from_values(values.into_iter().collect())
}

struct SeedOutcome {
    real: (f64, Option<f64>),
    syn: (f64, Option<f64>),
    combined: (f64, Option<f64>),
    report: ObjectiveReport,
}

/// Real-only, synthetic-only and real+synthetic arms at 1× synthetic size.
pub fn run_replace_augment(cfg: &ExperimentConfig, toggles: PipelineToggles, seeds: &[u64]) -> Result<ExperimentResult> {
    cfg.validate()?;
    toggles.validate()?;
    require_seeds(seeds)?;
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let ctx = SeedContext::new(cfg, seed);
            let task = ctx.task()?;
            let syn = ctx.synthetic(toggles, task.train.len())?;
            let real = *ctx.real_only()?;
            let synth = ctx.evaluate(&syn)?;
            let combined = ctx.evaluate(&task.train.concat(&syn)?)?;
            let report = ctx.report(&syn)?;
            Ok(SeedOutcome {
                real,
                syn: synth,
                combined,
                report,
            })
        })
        .collect::<Result<_>>()?;
    let test = ArmTriple {
        real_only: stats_of(outcomes.iter().map(|o| o.real.0)),
        synthetic_only: stats_of(outcomes.iter().map(|o| o.syn.0)),
        combined: stats_of(outcomes.iter().map(|o| o.combined.0)),
    };
    let ood = match outcomes.iter().all(|o| o.real.1.is_some()) {
        true => Some(ArmTriple {
            real_only: stats_of(outcomes.iter().filter_map(|o| o.real.1)),
            synthetic_only: stats_of(outcomes.iter().filter_map(|o| o.syn.1)),
            combined: stats_of(outcomes.iter().filter_map(|o| o.combined.1)),
        }),
        false => None,
    };
    Ok(ExperimentResult {
        toggles,
        seeds: seeds.to_vec(),
        test,
        ood,
        eval_mmd: stats_of(outcomes.iter().map(|o| o.report.mmd_sq)),
        reports: outcomes.iter().map(|o| o.report).collect(),
    })
}

/// Synthetic-only accuracy as the synthetic set grows to `k ×` the real size.
///
/// The largest set is synthesized once; smaller sizes are its prefixes, which
/// equal independent syntheses of that size.
pub fn run_scale_sweep(cfg: &ExperimentConfig, toggles: PipelineToggles, ks: &[f64], seeds: &[u64]) -> Result<ScaleCurve> {
    cfg.validate()?;
    toggles.validate()?;
    require_seeds(seeds)?;
    if ks.is_empty() {
        return Err(Error::Empty("scale list"));
    }
    if let Some(k) = ks.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
        return Err(Error::OutOfRange {
            what: "scale k",
            detail: format!("must be positive, got {k}"),
        });
    }
    let sizes: Vec<usize> = ks
        .iter()
        .map(|k| (k * cfg.task.train_size as f64).round().max(cfg.task.num_classes as f64) as usize)
        .collect();
    let max_n = *sizes.iter().max().expect("nonempty");
    let per_seed: Vec<(Vec<(f64, Option<f64>)>, (f64, Option<f64>))> = seeds
        .par_iter()
        .map(|&seed| {
            let ctx = SeedContext::new(cfg, seed);
            let full = ctx.synthetic(toggles, max_n)?;
            let accs = sizes
                .iter()
                .map(|&n| ctx.evaluate(&full.prefix(n)))
                .collect::<Result<Vec<_>>>()?;
            Ok((accs, *ctx.real_only()?))
        })
        .collect::<Result<_>>()?;
    let has_ood = per_seed.iter().all(|(_, r)| r.1.is_some());
    let points: Vec<ScalePoint> = ks
        .iter()
        .zip(&sizes)
        .enumerate()
        .map(|(j, (&k, &size))| ScalePoint {
            k,
            size,
            synthetic: stats_of(per_seed.iter().map(|(a, _)| a[j].0)),
            ood: has_ood.then(|| stats_of(per_seed.iter().filter_map(|(a, _)| a[j].1))),
        })
        .collect();
    let means: Vec<f64> = points.iter().map(|p| p.synthetic.mean).collect();
    Ok(ScaleCurve {
        toggles,
        seeds: seeds.to_vec(),
        spearman: spearman(ks, &means),
        points,
        real_only: stats_of(per_seed.iter().map(|(_, r)| r.0)),
        real_ood: has_ood.then(|| stats_of(per_seed.iter().filter_map(|(_, r)| r.1))),
    })
}

/// Synthetic-only accuracy for each of the ten ablation rows.
pub fn run_ablation_grid(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<AblationTable> {
    cfg.validate()?;
    require_seeds(seeds)?;
    let rows = PipelineToggles::ABLATION_ROWS
        .par_iter()
        .map(|&toggles| {
            let accs = seeds
                .iter()
                .map(|&seed| {
                    let ctx = SeedContext::new(cfg, seed);
                    let n = ctx.task()?.train.len();
                    Ok(ctx.evaluate(&ctx.synthetic(toggles, n)?)?.0)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow {
                toggles,
                synthetic: ArmStats::from_values(accs),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs must have equal length");
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
