//! Command-line surface: config parsing, run records and report emission.
//!
//! Every command reads an optional JSON config (`--config`, absent or empty
//! means defaults), a base `--seed`, and writes into `--out`:
//! `config.json` (the full config with defaults), `run.json` (command,
//! seed and extra flags), the command's CSV/SVG/checkpoint files, and
//! `manifest.json` with the SHA-256 of every file written.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::nets::checkpoint::Checkpoint;
use crate::privacy::{chance_tolerance, run_mia_experiment, LiraVariant, MiaArm, MiaReport};
use crate::taskbench::classifier::{accuracy, train_classifier};
use crate::taskbench::{
    run_ablation_grid, run_replace_augment, run_scale_sweep, synthesize_dataset, Generator, LabeledDataset,
    SeedContext, Split,
};
use crate::theory::{bound_violation_mc, gen_bound};
use crate::{Error, Result};
use config::{parse_config, snapshot, RunConfig};
use report::{dataset_csv, line_plot, parse_dataset_csv, Cell, PlotSpec, RunRecord, Series, Table};

/// Environment variable capping internal parallelism; 0 or unset means automatic.
pub const THREADS_ENV: &str = "DMSYNTH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dmsynth", version, about = "Distribution-matching data synthesis laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config; omitted or empty means all defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; multi-seed commands use seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the task splits and dump them as CSV.
    GenTask(Common),
    /// Pretrain and finetune a generator; write its checkpoint and curves.
    TrainGen(Common),
    /// Synthesize a labeled dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Generator checkpoint from `train-gen`; trained in-process when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score synthetic data against the real test split.
    EvalMmd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Synthetic dataset CSV; synthesized in-process when omitted.
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Train a classifier and report test accuracies.
    TrainClf {
        #[command(flatten)]
        common: Common,
        /// Training dataset CSV; the real training split when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Real-only, synthetic-only and combined arms over several seeds.
    ReplaceAugment(Common),
    /// Synthetic-only accuracy against synthetic set size.
    ScaleSweep(Common),
    /// The ten-row ablation of pipeline components.
    Ablate(Common),
    /// Generalization bound value, with an optional Monte-Carlo check.
    Bound(Common),
    /// Membership inference against direct and synthetic training.
    Mia(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenTask(_) => "gen-task",
            Command::TrainGen(_) => "train-gen",
            Command::Synth { .. } => "synth",
            Command::EvalMmd { .. } => "eval-mmd",
            Command::TrainClf { .. } => "train-clf",
            Command::ReplaceAugment(_) => "replace-augment",
            Command::ScaleSweep(_) => "scale-sweep",
            Command::Ablate(_) => "ablate",
            Command::Bound(_) => "bound",
            Command::Mia(_) => "mia",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenTask(c)
            | Command::TrainGen(c)
            | Command::ReplaceAugment(c)
            | Command::ScaleSweep(c)
            | Command::Ablate(c)
            | Command::Bound(c)
            | Command::Mia(c) => c,
            Command::Synth { common, .. } | Command::EvalMmd { common, .. } | Command::TrainClf { common, .. } => common,
        }
    }

    fn extras(&self) -> serde_json::Value {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string());
        match self {
            Command::Synth { checkpoint, .. } => serde_json::json!({ "checkpoint": p(checkpoint) }),
            Command::EvalMmd { checkpoint, synthetic, .. } => {
                serde_json::json!({ "checkpoint": p(checkpoint), "synthetic": p(synthetic) })
            }
            Command::TrainClf { data, .. } => serde_json::json!({ "data": p(data) }),
            _ => serde_json::json!({}),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| Error::Config {
            line: 0,
            message: format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"),
        }),
        _ => Ok(0),
    }
}

/// Runs one command to completion.
pub fn execute(command: &Command) -> Result<()> {
    let common = command.common();
    let cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
    let mut rec = RunRecord::create(&common.out)?;
    rec.write("config.json", snapshot(&cfg).as_bytes())?;
    let run = serde_json::json!({
        "command": command.name(),
        "seed": common.seed,
        "extra": command.extras(),
    });
    rec.write("run.json", format!("{}\n", serde_json::to_string_pretty(&run).expect("serializes")).as_bytes())?;
    pool.install(|| dispatch(command, &cfg, common.seed, &mut rec))?;
    rec.finish()?;
    Ok(())
}

fn dispatch(command: &Command, cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    match command {
        Command::GenTask(_) => gen_task(cfg, seed, rec),
        Command::TrainGen(_) => train_gen(cfg, seed, rec),
        Command::Synth { checkpoint, .. } => synth(cfg, seed, checkpoint.as_deref(), rec),
        Command::EvalMmd { checkpoint, synthetic, .. } => {
            eval_mmd(cfg, seed, checkpoint.as_deref(), synthetic.as_deref(), rec)
        }
        Command::TrainClf { data, .. } => train_clf(cfg, seed, data.as_deref(), rec),
        Command::ReplaceAugment(_) => replace_augment(cfg, seed, rec),
        Command::ScaleSweep(_) => scale_sweep(cfg, seed, rec),
        Command::Ablate(_) => ablate(cfg, seed, rec),
        Command::Bound(_) => bound(cfg, seed, rec),
        Command::Mia(_) => mia(cfg, seed, rec),
    }
}

fn gen_task(cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let exp = cfg.experiment();
    let task = SeedContext::new(&exp, seed).task()?;
    let mut table = Table::new(&["split", "size", "dim", "num_classes", "min_class_count", "max_class_count"]);
    let splits: Vec<&LabeledDataset> =
        [Some(&task.train), Some(&task.test), task.ood_test.as_ref(), Some(&task.pretrain_pool)]
            .into_iter()
            .flatten()
            .collect();
    for d in splits {
        let counts = d.class_counts();
        rec.write(&format!("{}.csv", d.split().name()), dataset_csv(d).as_bytes())?;
        table.push(vec![
            d.split().name().into(),
            d.len().into(),
            d.dim().into(),
            d.num_classes().into(),
            counts.iter().copied().min().unwrap_or(0).into(),
            counts.iter().copied().max().unwrap_or(0).into(),
        ]);
    }
    rec.write_table("metrics.csv", &table)?;
    println!("gen-task: wrote {} splits to {}", table.len(), rec.dir().display());
    Ok(())
}

fn train_gen(cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let exp = cfg.experiment();
    let ctx = SeedContext::new(&exp, seed);
    let gen = ctx.generator(cfg.toggles)?;
    let mut gen = (*gen).clone();
    gen.toggles = cfg.toggles;
    let ckpt = gen.to_checkpoint();
    rec.write("generator.ckpt", &ckpt.to_bytes())?;
    let mut curves = Table::new(&["phase", "epoch", "simple", "mmd", "total"]);
    let mut series: Vec<Series> = Vec::new();
    for e in &gen.curves.epochs {
        let phase = serde_json::to_value(e.phase).expect("serializes");
        let phase = phase.as_str().unwrap_or_default().to_string();
        curves.push(vec![phase.clone().into(), e.epoch.into(), e.simple.into(), e.mmd.into(), e.total.into()]);
        match series.iter_mut().find(|s| s.name == phase) {
            Some(s) => s.points.push((e.epoch as f64, e.total)),
            None => series.push(Series {
                name: phase,
                points: vec![(e.epoch as f64, e.total)],
            }),
        }
    }
    rec.write_table("curves.csv", &curves)?;
    let mut metrics = Table::new(&["phase", "epochs", "final_simple", "final_mmd", "final_total"]);
    for s in &series {
        let last = gen
            .curves
            .epochs
            .iter()
            .rev()
            .find(|e| serde_json::to_value(e.phase).expect("serializes").as_str() == Some(s.name.as_str()))
            .expect("phase has epochs");
        metrics.push(vec![
            s.name.clone().into(),
            s.points.len().into(),
            last.simple.into(),
            last.mmd.into(),
            last.total.into(),
        ]);
    }
    rec.write_table("metrics.csv", &metrics)?;
    let plot = PlotSpec {
        title: format!("generator training ({})", cfg.toggles.label()),
        x_label: "epoch".into(),
        y_label: "loss".into(),
        log_x: false,
        log_y: false,
        log_floor: 0.0,
    };
    rec.write("curves.svg", line_plot(&plot, &series).as_bytes())?;
    println!("train-gen: {} epochs logged, checkpoint in {}", curves.len(), rec.dir().display());
    Ok(())
}

fn load_generator(path: &Path) -> Result<Generator> {
    Generator::from_checkpoint(&Checkpoint::read_from(path)?)
}

fn synthetic_data(cfg: &RunConfig, ctx: &SeedContext, checkpoint: Option<&Path>) -> Result<LabeledDataset> {
    let task = ctx.task()?;
    let n = cfg.synth_size.unwrap_or(task.train.len());
    match checkpoint {
        Some(path) => {
            let gen = load_generator(path)?;
            synthesize_dataset(&gen, n, cfg.toggles, &task.train, &cfg.synthesis, ctx.sub_seed("synthesis"))
        }
        None => ctx.synthetic(cfg.toggles, n),
    }
}

fn synth(cfg: &RunConfig, seed: u64, checkpoint: Option<&Path>, rec: &mut RunRecord) -> Result<()> {
    let exp = cfg.experiment();
    let ctx = SeedContext::new(&exp, seed);
    let data = synthetic_data(cfg, &ctx, checkpoint)?;
    rec.write("synthetic.csv", dataset_csv(&data).as_bytes())?;
    let mut table = Table::new(&["class", "count"]);
    for (c, n) in data.class_counts().into_iter().enumerate() {
        table.push(vec![c.into(), n.into()]);
    }
    rec.write_table("metrics.csv", &table)?;
    println!("synth: {} points ({})", data.len(), cfg.toggles.label());
    Ok(())
}

fn read_dataset(path: &Path, split: Split) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_csv(&text, split)
}

fn eval_mmd(
    cfg: &RunConfig,
    seed: u64,
    checkpoint: Option<&Path>,
    synthetic: Option<&Path>,
    rec: &mut RunRecord,
) -> Result<()> {
    let exp = cfg.experiment();
    let ctx = SeedContext::new(&exp, seed);
    let syn = match synthetic {
        Some(p) => read_dataset(p, Split::Synthetic)?,
        None => synthetic_data(cfg, &ctx, checkpoint)?,
    };
    let r = ctx.report(&syn)?;
    let mut table = Table::new(&["mmd_sq", "conditional_divergence", "cardinality_term", "lambda", "combined"]);
    table.push(vec![
        r.mmd_sq.into(),
        r.conditional_divergence.into(),
        r.cardinality_term.into(),
        r.lambda.into(),
        r.combined.into(),
    ]);
    rec.write_table("metrics.csv", &table)?;
    println!("eval-mmd: mmd_sq = {}", report::fmt_num(r.mmd_sq));
    Ok(())
}

fn train_clf(cfg: &RunConfig, seed: u64, data: Option<&Path>, rec: &mut RunRecord) -> Result<()> {
    let exp = cfg.experiment();
    let ctx = SeedContext::new(&exp, seed);
    let task = ctx.task()?;
    let (source, train) = match data {
        Some(p) => ("file", read_dataset(p, Split::Train)?),
        None => ("real", task.train.clone()),
    };
    let net = train_classifier(&train, &cfg.classifier, ctx.sub_seed("classifier"))?;
    rec.write("classifier.ckpt", &net.to_checkpoint().to_bytes())?;
    let test_acc = accuracy(&net, &task.test)?;
    let ood_acc = match &task.ood_test {
        Some(o) => accuracy(&net, o)?,
        None => f64::NAN,
    };
    let mut table = Table::new(&["train_source", "train_size", "test_accuracy", "ood_accuracy"]);
    table.push(vec![source.into(), train.len().into(), test_acc.into(), ood_acc.into()]);
    rec.write_table("metrics.csv", &table)?;
    println!("train-clf: test accuracy {}", report::fmt_num(test_acc));
    Ok(())
}

fn replace_augment(cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let seeds = cfg.seeds(seed);
    let r = run_replace_augment(&cfg.experiment(), cfg.toggles, &seeds)?;
    let mut metrics = Table::new(&["arm", "split", "mean", "std"]);
    let mut per_seed = Table::new(&["seed", "arm", "split", "accuracy"]);
    let mut splits = vec![("test", &r.test)];
    if let Some(o) = &r.ood {
        splits.push(("ood_test", o));
    }
    for (split, triple) in splits {
        for (arm, stats) in [
            ("real-only", &triple.real_only),
            ("synthetic-only", &triple.synthetic_only),
            ("combined", &triple.combined),
        ] {
            metrics.push(vec![arm.into(), split.into(), stats.mean.into(), stats.std.into()]);
            for (s, v) in seeds.iter().zip(&stats.per_seed) {
                per_seed.push(vec![(*s).into(), arm.into(), split.into(), (*v).into()]);
            }
        }
    }
    rec.write_table("metrics.csv", &metrics)?;
    rec.write_table("per_seed.csv", &per_seed)?;
    let mut objective = Table::new(&["seed", "mmd_sq", "conditional_divergence", "cardinality_term", "lambda", "combined"]);
    for (s, o) in seeds.iter().zip(&r.reports) {
        objective.push(vec![
            (*s).into(),
            o.mmd_sq.into(),
            o.conditional_divergence.into(),
            o.cardinality_term.into(),
            o.lambda.into(),
            o.combined.into(),
        ]);
    }
    rec.write_table("objective.csv", &objective)?;
    println!(
        "replace-augment ({}): real {} synthetic {} combined {}",
        cfg.toggles.label(),
        report::fmt_num(r.test.real_only.mean),
        report::fmt_num(r.test.synthetic_only.mean),
        report::fmt_num(r.test.combined.mean)
    );
    Ok(())
}

fn scale_sweep(cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let seeds = cfg.seeds(seed);
    let c = run_scale_sweep(&cfg.experiment(), cfg.toggles, &cfg.scale_ks, &seeds)?;
    let mut metrics = Table::new(&["k", "size", "mean", "std", "ood_mean", "ood_std"]);
    for p in &c.points {
        let (om, os) = p.ood.as_ref().map_or((f64::NAN, f64::NAN), |o| (o.mean, o.std));
        metrics.push(vec![p.k.into(), p.size.into(), p.synthetic.mean.into(), p.synthetic.std.into(), om.into(), os.into()]);
    }
    rec.write_table("metrics.csv", &metrics)?;
    let mut summary = Table::new(&["spearman", "real_only_mean", "real_ood_mean"]);
    summary.push(vec![
        c.spearman.into(),
        c.real_only.mean.into(),
        c.real_ood.as_ref().map_or(f64::NAN, |o| o.mean).into(),
    ]);
    rec.write_table("summary.csv", &summary)?;
    let mut series = vec![Series {
        name: "synthetic, test".into(),
        points: c.points.iter().map(|p| (p.k, p.synthetic.mean)).collect(),
    }];
    if c.points.iter().all(|p| p.ood.is_some()) {
        series.push(Series {
            name: "synthetic, ood".into(),
            points: c.points.iter().map(|p| (p.k, p.ood.as_ref().expect("checked").mean)).collect(),
        });
    }
    series.push(Series {
        name: "real-only, test".into(),
        points: c.points.iter().map(|p| (p.k, c.real_only.mean)).collect(),
    });
    let plot = PlotSpec {
        title: format!("accuracy against synthetic scale ({})", cfg.toggles.label()),
        x_label: "synthetic size / real size".into(),
        y_label: "accuracy".into(),
        log_x: false,
        log_y: false,
        log_floor: 0.0,
    };
    rec.write("scale.svg", line_plot(&plot, &series).as_bytes())?;
    println!("scale-sweep: spearman {}", report::fmt_num(c.spearman));
    Ok(())
}

fn ablate(cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let seeds = cfg.seeds(seed);
    let t = run_ablation_grid(&cfg.experiment(), &seeds)?;
    let mut metrics = Table::new(&["latent_prior", "visual_guidance", "mmd_loss", "finetune", "label", "mean", "std"]);
    let mut per_seed = Table::new(&["label", "seed", "accuracy"]);
    for r in &t.rows {
        let g = r.toggles;
        metrics.push(vec![
            g.latent_prior.into(),
            g.visual_guidance.into(),
            g.mmd_loss.into(),
            g.finetune.into(),
            g.label().into(),
            r.synthetic.mean.into(),
            r.synthetic.std.into(),
        ]);
        for (s, v) in seeds.iter().zip(&r.synthetic.per_seed) {
            per_seed.push(vec![g.label().into(), (*s).into(), (*v).into()]);
        }
    }
    rec.write_table("metrics.csv", &metrics)?;
    rec.write_table("per_seed.csv", &per_seed)?;
    println!("ablate: {} rows", metrics.len());
    Ok(())
}

fn bound(cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let p = cfg.bound.params();
    let value = gen_bound(&p)?;
    let mut table = Table::new(&["log_cardinality_f", "delta", "sample_size", "bound"]);
    table.push(vec![p.log_cardinality_f.into(), p.delta.into(), p.sample_size.into(), value.into()]);
    rec.write_table("metrics.csv", &table)?;
    println!("{value:?}");
    if let Some(mc) = &cfg.bound.monte_carlo {
        let est = bound_violation_mc(&mc.experiment, mc.sample_size, mc.t, mc.trials, seed)?;
        let se = (est.analytic_cap.min(1.0) * (1.0 - est.analytic_cap.min(1.0)) / est.trials as f64).sqrt();
        let mut t = Table::new(&["sample_size", "t", "trials", "empirical_rate", "analytic_cap", "binomial_se"]);
        t.push(vec![
            est.sample_size.into(),
            est.t.into(),
            est.trials.into(),
            est.empirical_rate.into(),
            est.analytic_cap.into(),
            se.into(),
        ]);
        rec.write_table("bound_mc.csv", &t)?;
        println!(
            "monte carlo: violation rate {} against cap {}",
            report::fmt_num(est.empirical_rate),
            report::fmt_num(est.analytic_cap)
        );
    }
    Ok(())
}

fn mia(cfg: &RunConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let seeds = cfg.mia_seeds(seed);
    let exp = cfg.experiment();
    let mia_cfg = cfg.mia_config();
    let reports: Vec<MiaReport> = [MiaArm::Direct, MiaArm::Synthetic]
        .iter()
        .map(|&arm| run_mia_experiment(&exp, &mia_cfg, arm, &seeds))
        .collect::<Result<_>>()?;
    let mut metrics = Table::new(&["arm", "variant", "mean_tpr", "std_tpr"]);
    let mut per_seed = Table::new(&["arm", "seed", "variant", "tpr"]);
    let mut control = Table::new(&["arm", "shuffled_mean_tpr", "target_fpr", "tolerance"]);
    let mut series = Vec::new();
    for r in &reports {
        for (v, stats) in &r.tpr {
            metrics.push(vec![r.arm.name().into(), v.name().into(), stats.mean.into(), stats.std.into()]);
        }
        for s in &r.per_seed {
            for v in &s.variants {
                per_seed.push(vec![r.arm.name().into(), s.seed.into(), v.variant.name().into(), v.tpr_at_low_fpr.into()]);
            }
        }
        control.push(vec![
            r.arm.name().into(),
            r.shuffled.mean.into(),
            crate::privacy::LOW_FPR.into(),
            chance_tolerance(r.members).into(),
        ]);
        let first = &r.per_seed[0];
        let online = first
            .variants
            .iter()
            .find(|v| v.variant == LiraVariant::Online)
            .expect("online variant present");
        let mut roc = Table::new(&["fpr", "tpr"]);
        for (f, t) in online.roc.fpr.iter().zip(&online.roc.tpr) {
            roc.push(vec![Cell::Num(*f), Cell::Num(*t)]);
        }
        rec.write_table(&format!("roc_{}.csv", r.arm.name()), &roc)?;
        series.push(Series {
            name: format!("{} (seed {})", r.arm.name(), first.seed),
            points: online.roc.fpr.iter().copied().zip(online.roc.tpr.iter().copied()).collect(),
        });
    }
    rec.write_table("metrics.csv", &metrics)?;
    rec.write_table("per_seed.csv", &per_seed)?;
    rec.write_table("control.csv", &control)?;
    let plot = PlotSpec {
        title: "online LiRA ROC".into(),
        x_label: "false positive rate".into(),
        y_label: "true positive rate".into(),
        log_x: true,
        log_y: true,
        log_floor: 1e-4,
    };
    rec.write("roc.svg", line_plot(&plot, &series).as_bytes())?;
    for r in &reports {
        println!(
            "mia {}: online TPR at 0.1% FPR = {}",
            r.arm.name(),
            report::fmt_num(r.tpr(LiraVariant::Online).mean)
        );
    }
    Ok(())
}
