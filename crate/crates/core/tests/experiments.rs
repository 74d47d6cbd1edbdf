//! Direction checks and trained-model examples on the default task.
//!
//! These train real models and take a few minutes; they share one process so
//! the experiment cache serves the 5-seed runs to several tests.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use dmsynth::diffusion::NoisePredictor;
use dmsynth::rng::{seeded, stream};
use dmsynth::taskbench::{
    make_task, pretrain_generator, run_ablation_grid, run_replace_augment, synthesize_dataset, train_and_eval_classifier,
    ClassifierConfig, ExperimentConfig, GeneratorConfig, LabeledDataset, PipelineToggles, SeedContext, Split,
    SynthesisConfig, TaskSpec,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[test]
fn ablation_rows_keep_their_directions() {
    let table = run_ablation_grid(&ExperimentConfig::default(), &SEEDS).unwrap();
    let mean = |t: PipelineToggles| table.rows.iter().find(|r| r.toggles == t).unwrap().synthetic.mean;
    let off = mean(PipelineToggles::all_off());
    let lp = mean(PipelineToggles::new(true, false, false, false));
    let full = mean(PipelineToggles::full());
    assert!(full >= off, "full {full} vs off {off}");
    assert!(lp >= off, "LP {lp} vs off {off}");
}

#[test]
fn mmd_term_does_not_raise_evaluation_mmd() {
    let cfg = ExperimentConfig::default();
    let with = run_replace_augment(&cfg, PipelineToggles::new(false, false, true, true), &SEEDS).unwrap();
    let without = run_replace_augment(&cfg, PipelineToggles::new(false, false, false, true), &SEEDS).unwrap();
    assert!(
        with.eval_mmd.mean <= without.eval_mmd.mean,
        "gamma 0.05: {} vs gamma 0: {}",
        with.eval_mmd.mean,
        without.eval_mmd.mean
    );
}

#[test]
fn combined_arm_weakly_dominates() {
    let r = run_replace_augment(&ExperimentConfig::default(), PipelineToggles::full(), &SEEDS).unwrap();
    let floor = r.test.real_only.mean.min(r.test.synthetic_only.mean);
    assert!(r.test.combined.mean >= floor, "{} < {floor}", r.test.combined.mean);
    for arm in [&r.test.real_only, &r.test.synthetic_only, &r.test.combined] {
        assert_eq!(arm.per_seed.len(), SEEDS.len());
        assert_eq!(arm.mean, arm.per_seed.iter().sum::<f64>() / SEEDS.len() as f64);
    }
}

#[test]
fn conditioning_changes_the_noise_prediction() {
    let cfg = ExperimentConfig::default();
    let ctx = SeedContext::new(&cfg, 0);
    let gen = ctx.pretrained().unwrap();
    let mut rng = seeded(31);
    let probes = 500;
    let mut differ = 0;
    for i in 0..probes {
        let t = rng.random_range(1..=gen.schedule.horizon());
        let x = Array2::from_shape_fn((1, gen.data_dim()), |_| rng.sample::<f64, _>(StandardNormal) * 3.0);
        let c = i % gen.num_classes();
        let cond = gen.table.cond_matrix(&[Some(c)], &[None]).unwrap();
        let null = gen.table.cond_matrix(&[None], &[None]).unwrap();
        let eps_c = gen.denoiser.predict_noise(x.view(), &[t], cond.view()).unwrap();
        let eps_u = gen.denoiser.predict_noise(x.view(), &[t], null.view()).unwrap();
        if eps_c != eps_u {
            differ += 1;
        }
    }
    assert!(differ * 100 >= probes * 99, "{differ} of {probes}");
}

#[test]
fn two_mode_model_covers_both_modes() {
    let mut rng = seeded(41);
    let n = 2000;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| {
        let centre = if i % 2 == 0 { -3.0 } else { 3.0 };
        centre + 0.5 * rng.sample::<f64, _>(StandardNormal)
    });
    let data = LabeledDataset::new(x, vec![0; n], 1, Split::Pretrain).unwrap();
    let gen = pretrain_generator(&data, &GeneratorConfig::default(), 42).unwrap();
    let syn =
        synthesize_dataset(&gen, 1000, PipelineToggles::all_off(), &data, &SynthesisConfig::default(), 43).unwrap();
    let right = syn.x().column(0).iter().filter(|&&v| v > 0.0).count();
    let left = syn.len() - right;
    assert!(left >= 100 && right >= 100, "left {left}, right {right}");
}

#[test]
fn minimal_strength_keeps_samples_near_their_sources() {
    let cfg = ExperimentConfig::default();
    let ctx = SeedContext::new(&cfg, 0);
    let gen = ctx.pretrained().unwrap();
    let task = ctx.task().unwrap();
    let firsts: Vec<usize> = (0..task.train.num_classes())
        .map(|c| task.train.y().iter().position(|&y| y == c).unwrap())
        .collect();
    let pool = task.train.select(&firsts);
    let horizon = gen.schedule.horizon();
    let synthesis = SynthesisConfig {
        strength: 1.0 / horizon as f64,
        num_steps: 1,
        ..SynthesisConfig::default()
    };
    let toggles = PipelineToggles::new(true, false, false, false);
    let syn = synthesize_dataset(&gen, 300, toggles, &pool, &synthesis, 51).unwrap();
    let mut total = 0.0;
    for (row, &y) in syn.x().rows().into_iter().zip(syn.y()) {
        let src = pool.x().row(y).to_owned();
        total += (&row - &src).mapv(|v| v * v).sum().sqrt();
    }
    let mean = total / syn.len() as f64;
    let radius = 3.0 * (1.0 - gen.schedule.alpha_bar(1)).sqrt() * (syn.dim() as f64).sqrt();
    assert!(mean < radius, "mean displacement {mean} vs radius {radius}");
}

#[test]
fn linear_probe_separates_two_far_classes() {
    let spec = TaskSpec {
        num_classes: 2,
        dim: 2,
        components_per_class: 1,
        separation: 6.0,
        train_size: 1000,
        test_size: 1000,
        pool_size: 100,
        ood_shift: None,
        ..TaskSpec::default()
    };
    let task = make_task(&spec, 61).unwrap();
    let cfg = ClassifierConfig {
        hidden: vec![],
        ..ClassifierConfig::default()
    };
    let acc = train_and_eval_classifier(&task.train, &[&task.test], &cfg, 62).unwrap()[0];
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn classifier_memorizes_and_ignores_random_labels() {
    let task = make_task(&TaskSpec::default(), 71).unwrap();
    let cfg = ClassifierConfig::default();
    let acc = train_and_eval_classifier(&task.train, &[&task.train], &cfg, 72).unwrap()[0];
    assert!(acc >= 0.95, "memorization accuracy {acc}");

    // a net fit to random labels still carves the plane into class regions, so
    // accuracy varies across labelings far more than a binomial draw; compare the
    // mean over labelings with its standard error (binomial error as a floor)
    let c = task.train.num_classes();
    let p = 1.0 / c as f64;
    let accs: Vec<f64> = (0..5u64)
        .map(|k| {
            let mut labels: Vec<usize> = (0..task.train.len()).map(|i| i % c).collect();
            labels.shuffle(&mut stream(73, "labels", k));
            let noise = task.train.with_labels(labels).unwrap();
            train_and_eval_classifier(&noise, &[&task.test], &cfg, 74 + k).unwrap()[0]
        })
        .collect();
    let k = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / k;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let binomial = p * (1.0 - p) / task.test.len() as f64;
    let se = (var.max(binomial) / k).sqrt();
    assert!((mean - p).abs() <= 3.0 * se, "random-label accuracies {accs:?}, chance {p}, se {se}");
}
