//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all criteria with `cargo test --test acceptance`, or a subset with
//! `cargo test --test acceptance -- 1 4 9`. The process exits nonzero if any
//! selected criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use dmsynth::diffusion::{
    diffusion_loss_with_draw, draw_noise, forward_marginal_batch, guided_noise, loss_from_prediction, make_schedule,
    Denoiser, LossWeighting, NoisePredictor,
};
use dmsynth::matching::{batch_mmd_loss, mmd_sq_linear, mmd_sq_rbf, CombinedLoss, FeatureBatch, Source};
use dmsynth::nets::checkpoint::Checkpoint;
use dmsynth::nets::DenseNet;
use dmsynth::privacy::{chance_tolerance, run_mia_experiment, LiraVariant, MiaArm, MiaConfig, LOW_FPR};
use dmsynth::rng::{seeded, Rng};
use dmsynth::taskbench::{
    run_replace_augment, run_scale_sweep, ExperimentConfig, ExperimentResult, Generator, PipelineToggles,
};
use dmsynth::theory::{bound_violation_mc, gen_bound, BoundParams, FiniteClassExperiment};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_matrix(rng: &mut Rng, n: usize, d: usize, shift: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| normal(rng) + shift)
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut singles_exact = true;
    for i in 0..1000 {
        // batch size 1 is forced periodically so the equality case is always exercised
        let n = if i % 50 == 0 { 1 } else { rng.random_range(1..=256) };
        let d = rng.random_range(1..=16);
        let shift = rng.random_range(-2.0..2.0);
        let r = random_matrix(&mut rng, n, d, shift);
        let loss = batch_mmd_loss(r.view()).unwrap();
        let mean_sq = r.rows().into_iter().map(|row| row.dot(&row)).sum::<f64>() / n as f64;
        worst_gap = worst_gap.max(loss - mean_sq);
        if n == 1 && loss != mean_sq {
            singles_exact = false;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_gap <= 1e-9 && singles_exact && within_budget(elapsed, 5.0),
        format!("max(loss - mean sq norm) = {worst_gap:.3e}, batch-1 equality {singles_exact}, {elapsed:.2?}"),
    )
}

fn oracle_linear(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mean_dot = |u: &Array2<f64>, v: &Array2<f64>| {
        let mut s = 0.0;
        for x in u.rows() {
            for y in v.rows() {
                s += x.dot(&y);
            }
        }
        s / (u.nrows() * v.nrows()) as f64
    };
    mean_dot(a, a) + mean_dot(b, b) - 2.0 * mean_dot(a, b)
}

fn oracle_rbf(a: &Array2<f64>, b: &Array2<f64>, h: f64) -> f64 {
    let mean_k = |u: &Array2<f64>, v: &Array2<f64>| {
        let mut s = 0.0;
        for x in u.rows() {
            for y in v.rows() {
                let d2: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
                s += (-d2 / (2.0 * h * h)).exp();
            }
        }
        s / (u.nrows() * v.nrows()) as f64
    };
    mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(202);
    let (mut worst_lin, mut worst_rbf) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let (n, m) = (rng.random_range(2..=40), rng.random_range(2..=40));
        let shift = rng.random_range(0.5..2.0);
        let a = random_matrix(&mut rng, n, d, 0.0);
        let b = random_matrix(&mut rng, m, d, shift);
        let h = rng.random_range(0.5..3.0);
        let fa = FeatureBatch::new(a.clone(), Source::Real).unwrap();
        let fb = FeatureBatch::new(b.clone(), Source::Synthetic).unwrap();
        worst_lin = worst_lin.max(rel_err(mmd_sq_linear(&fa, &fb).unwrap(), oracle_linear(&a, &b), 1e-300));
        worst_rbf = worst_rbf.max(rel_err(mmd_sq_rbf(&fa, &fb, h).unwrap(), oracle_rbf(&a, &b, h), 1e-300));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_lin <= 1e-10 && worst_rbf <= 1e-10 && within_budget(elapsed, 10.0),
        format!("max rel err linear {worst_lin:.2e}, rbf {worst_rbf:.2e}, {elapsed:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let sched = make_schedule(200, 1e-4, 0.02).unwrap();
    let x0 = [1.5, -0.5];
    let trials = 100_000;
    let mut rng = seeded(303);
    let d = x0.len();
    let (mut sum_c, mut sq_c, mut sum_f, mut sq_f) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let t_end = sched.horizon();
    let (a_bar, s_bar) = (sched.alpha_bar(t_end).sqrt(), (1.0 - sched.alpha_bar(t_end)).sqrt());
    for _ in 0..trials {
        for j in 0..d {
            let mut x = x0[j];
            for t in 1..=t_end {
                x = sched.alpha(t).sqrt() * x + sched.beta(t).sqrt() * normal(&mut rng);
            }
            let closed = a_bar * x0[j] + s_bar * normal(&mut rng);
            sum_c[j] += x;
            sq_c[j] += x * x;
            sum_f[j] += closed;
            sq_f[j] += closed * closed;
        }
    }
    let n = trials as f64;
    let mut worst_z = 0.0f64;
    let mut worst_var = 0.0f64;
    for j in 0..d {
        let (mc, mf) = (sum_c[j] / n, sum_f[j] / n);
        let vc = (sq_c[j] - n * mc * mc) / (n - 1.0);
        let vf = (sq_f[j] - n * mf * mf) / (n - 1.0);
        let se = (vc / n + vf / n).sqrt();
        worst_z = worst_z.max((mc - mf).abs() / se);
        worst_var = worst_var.max((vc - vf).abs() / vf);
    }
    let elapsed = start.elapsed();
    outcome(
        worst_z <= 4.0 && worst_var <= 0.05 && within_budget(elapsed, 30.0),
        format!("mean gap {worst_z:.2} SE, variance rel gap {worst_var:.4}, {elapsed:.2?}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let sched = make_schedule(200, 1e-4, 0.02).unwrap();
    let mut den = Denoiser::new(2, 4, 4, &[16, 16], sched.horizon(), 404).unwrap();
    let mut rng = seeded(404);
    let n = 12;
    let x0 = random_matrix(&mut rng, n, 2, 0.0);
    let cond = random_matrix(&mut rng, n, 4, 0.0);
    let draw = draw_noise(&sched, n, 2, &mut rng);
    let gamma = 0.05;
    let weighting = LossWeighting::Simple;

    let x_t = forward_marginal_batch(&sched, x0.view(), &draw.t, draw.eps.view()).unwrap();
    let (eps_hat, tape) = den.forward_batch(x_t.view(), &draw.t, cond.view()).unwrap();
    let d = loss_from_prediction(&sched, weighting, draw.clone(), x_t, eps_hat).unwrap();
    let combined = CombinedLoss::from_diffusion(d, gamma).unwrap();
    let analytic = den.backward(&tape, combined.prediction_grad().view()).unwrap().params_flat();

    let base = den.net.params_flat();
    let total_at = |p: &[f64], den: &mut Denoiser| {
        den.net.set_params_flat(p).unwrap();
        let d = diffusion_loss_with_draw(&*den, &sched, x0.view(), cond.view(), weighting, draw.clone()).unwrap();
        CombinedLoss::from_diffusion(d, gamma).unwrap().total
    };
    let h = 1e-5;
    let floor = 1e-6;
    let mut worst = 0.0f64;
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + h;
        let up = total_at(&p, &mut den);
        p[i] = base[i] - h;
        let down = total_at(&p, &mut den);
        p[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric, floor));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && within_budget(elapsed, 30.0),
        format!("{} parameters, max rel err {worst:.2e} (floor {floor:e}), {elapsed:.2?}", base.len()),
    )
}

fn criterion_5() -> Outcome {
    let sched = make_schedule(200, 1e-4, 0.02).unwrap();
    let den = Denoiser::new(3, 5, 8, &[32, 32], sched.horizon(), 505).unwrap();
    let mut rng = seeded(505);
    let mut reductions_exact = true;
    let mut worst_score = 0.0f64;
    let batch = 10;
    for _ in 0..100 {
        let t = rng.random_range(1..=sched.horizon());
        let x = random_matrix(&mut rng, batch, 3, 0.0);
        let c = random_matrix(&mut rng, batch, 5, 0.0);
        let null = random_matrix(&mut rng, batch, 5, 0.0);
        let ts = vec![t; batch];
        let eps_c = den.predict_noise(x.view(), &ts, c.view()).unwrap();
        let eps_u = den.predict_noise(x.view(), &ts, null.view()).unwrap();
        let one = guided_noise(&den, &sched, x.view(), t, c.view(), null.view(), 1.0).unwrap();
        let zero = guided_noise(&den, &sched, x.view(), t, c.view(), null.view(), 0.0).unwrap();
        reductions_exact &= one.eps == eps_c && zero.eps == eps_u;
        let expect = (&eps_c - &eps_u) / (1.0 - sched.alpha_bar(t)).sqrt();
        for (a, b) in one.score_diff.iter().zip(expect.iter()) {
            worst_score = worst_score.max((a - b).abs());
        }
    }
    outcome(
        reductions_exact && worst_score <= 1e-12,
        format!("w=1/w=0 exact {reductions_exact}, max score diff error {worst_score:.2e} over 1000 inputs"),
    )
}

fn replace_results(cfg: &ExperimentConfig) -> (ExperimentResult, ExperimentResult) {
    let full = run_replace_augment(cfg, PipelineToggles::full(), &SEEDS).unwrap();
    let off = run_replace_augment(cfg, PipelineToggles::all_off(), &SEEDS).unwrap();
    (full, off)
}

fn criterion_6(cache: &mut Option<(ExperimentResult, ExperimentResult)>) -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let (full, off) = cache.get_or_insert_with(|| replace_results(&cfg));
    let syn_full = full.test.synthetic_only.mean;
    let syn_off = off.test.synthetic_only.mean;
    let real = full.test.real_only.mean;
    let combined = full.test.combined.mean;
    let elapsed = start.elapsed();
    outcome(
        syn_full > syn_off && combined >= real - 0.01 && within_budget(elapsed, 900.0),
        format!(
            "synthetic-only full {syn_full:.4} vs off {syn_off:.4}; combined {combined:.4} vs real {real:.4}; {elapsed:.1?}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let curve = run_scale_sweep(&cfg, PipelineToggles::full(), &[1.0, 2.0, 5.0, 10.0], &SEEDS).unwrap();
    let means: Vec<f64> = curve.points.iter().map(|p| p.synthetic.mean).collect();
    let elapsed = start.elapsed();
    let first = means[0];
    let last = *means.last().unwrap();
    let listed: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    outcome(
        curve.spearman > 0.0 && last >= first && within_budget(elapsed, 2700.0),
        format!(
            "acc at k=1,2,5,10: [{}], spearman {:.2}; {elapsed:.1?}",
            listed.join(", "),
            curve.spearman
        ),
    )
}

fn criterion_8(cache: &mut Option<(ExperimentResult, ExperimentResult)>) -> Outcome {
    let cfg = ExperimentConfig::default();
    let (full, off) = cache.get_or_insert_with(|| replace_results(&cfg));
    outcome(
        full.eval_mmd.mean < off.eval_mmd.mean,
        format!("eval MMD full {:.4} vs off {:.4}", full.eval_mmd.mean, off.eval_mmd.mean),
    )
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let exp = FiniteClassExperiment::default();
    let est = bound_violation_mc(&exp, 500, 0.1, 1000, 909).unwrap();
    let cap = est.analytic_cap;
    let limit = cap + 3.0 * (cap * (1.0 - cap) / est.trials as f64).sqrt();
    let bound = gen_bound(&BoundParams {
        log_cardinality_f: 20.0 * 2f64.ln(),
        delta: 0.05,
        sample_size: 10_000,
    })
    .unwrap();
    let pinned = 0.04105931792511036974;
    let elapsed = start.elapsed();
    outcome(
        est.empirical_rate <= limit && (bound - pinned).abs() <= 1e-10 && within_budget(elapsed, 60.0),
        format!(
            "violation rate {:.4} <= {limit:.4} (cap {cap:.6}); gen_bound error {:.1e}; {elapsed:.2?}",
            est.empirical_rate,
            (bound - pinned).abs()
        ),
    )
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mia = MiaConfig::default();
    let seeds = [0, 1, 2];
    let direct = run_mia_experiment(&cfg, &mia, MiaArm::Direct, &seeds).unwrap();
    let synthetic = run_mia_experiment(&cfg, &mia, MiaArm::Synthetic, &seeds).unwrap();
    let elapsed = start.elapsed();
    // the online variant is the primary comparison; the others are reported only
    let d = direct.tpr(LiraVariant::Online).mean;
    let s = synthetic.tpr(LiraVariant::Online).mean;
    let tol = chance_tolerance(direct.members);
    let control_ok = [&direct, &synthetic]
        .iter()
        .all(|r| (r.shuffled.mean - LOW_FPR).abs() <= chance_tolerance(r.members));
    let others: Vec<String> = [LiraVariant::Offline, LiraVariant::FixedVariance]
        .iter()
        .map(|&v| {
            format!(
                "{} {:.4}/{:.4}",
                v.name(),
                synthetic.tpr(v).mean,
                direct.tpr(v).mean
            )
        })
        .collect();
    outcome(
        s <= d && control_ok && within_budget(elapsed, 1800.0),
        format!(
            "online TPR@0.1% synthetic {s:.4} vs direct {d:.4}; shuffled {:.4}/{:.4} (chance {LOW_FPR}, tol {tol:.4}); \
             [{}]; {elapsed:.1?}",
            synthetic.shuffled.mean,
            direct.shuffled.mean,
            others.join(", ")
        ),
    )
}

const TINY_CONFIG: &str = r#"{
  "task": {"train_size": 90, "test_size": 60, "pool_size": 150},
  "generator": {
    "hidden": [16],
    "pretrain_epochs": 2,
    "finetune_epochs": 2,
    "batch_size": 32,
    "guidance_samples": 8,
    "encoder": {"hidden": [8], "epochs": 2}
  },
  "synthesis": {"num_steps": 4},
  "classifier": {"hidden": [8], "epochs": 3},
  "num_seeds": 2,
  "scale_ks": [0.5, 1],
  "bound": {"monte_carlo": {"trials": 40, "experiment": {
    "thresholds": [-1.0, 0.0, 1.0], "true_threshold": 0.0, "label_noise": 0.1, "eval_size": 2000, "eval_seed": 3}}},
  "mia": {"num_shadows": 4, "privacy_size": 40, "epoch_factor": 1, "classifier_hidden": [8], "shuffles": 2, "num_seeds": 1}
}"#;

fn run_cli(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dmsynth"))
        .args(args)
        .env("DMSYNTH_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.json");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let config = config.to_string_lossy().into_owned();
    let out_dir = |cmd: &str, run: usize| -> PathBuf { tmp.path().join(format!("{cmd}-{run}")) };

    let mut problems = Vec::new();
    let mut compared = 0;
    // train-gen runs first so synth and eval-mmd can reuse its checkpoint
    let commands = [
        "gen-task",
        "train-gen",
        "synth",
        "eval-mmd",
        "train-clf",
        "replace-augment",
        "scale-sweep",
        "ablate",
        "bound",
        "mia",
    ];
    let ckpt = out_dir("train-gen", 0).join("generator.ckpt").to_string_lossy().into_owned();
    for cmd in commands {
        let mut runs = Vec::new();
        for (run, threads) in ["1", "2"].into_iter().enumerate() {
            let dir = out_dir(cmd, run).to_string_lossy().into_owned();
            let mut args = vec![cmd, "--config", &config, "--seed", "7", "--out", &dir];
            if matches!(cmd, "synth" | "eval-mmd") {
                args.extend(["--checkpoint", &ckpt]);
            }
            let output = run_cli(&args, threads);
            if !output.status.success() {
                problems.push(format!("{cmd} exited {:?}: {}", output.status.code(), String::from_utf8_lossy(&output.stderr)));
            }
            runs.push(csv_files(Path::new(&dir)));
        }
        if runs[0].is_empty() {
            problems.push(format!("{cmd} wrote no CSV"));
        } else if runs[0] != runs[1] {
            problems.push(format!("{cmd} CSVs differ between runs"));
        }
        compared += runs[0].len();
    }

    for (run, file) in [("train-gen", "generator.ckpt"), ("train-clf", "classifier.ckpt")] {
        let a = std::fs::read(out_dir(run, 0).join(file)).unwrap_or_default();
        let b = std::fs::read(out_dir(run, 1).join(file)).unwrap_or_default();
        if a.is_empty() || a != b {
            problems.push(format!("{file} differs between runs"));
            continue;
        }
        let ckpt = Checkpoint::from_bytes(&a).unwrap();
        let again = if file == "generator.ckpt" {
            Generator::from_checkpoint(&ckpt).unwrap().to_checkpoint().to_bytes()
        } else {
            DenseNet::from_checkpoint(&ckpt).unwrap().to_checkpoint().to_bytes()
        };
        if again != a {
            problems.push(format!("{file} does not round-trip"));
        }
    }
    let elapsed = start.elapsed();
    let detail = if problems.is_empty() {
        format!("{} commands, {compared} CSVs identical across reruns, checkpoints round-trip; {elapsed:.1?}", commands.len())
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut replace_cache = None;
    let mut failures = 0;
    for k in 1..=11 {
        if !wanted(k) {
            continue;
        }
        let result = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(&mut replace_cache),
            7 => criterion_7(),
            8 => criterion_8(&mut replace_cache),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => criterion_11(),
        };
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {k:>2}: {status}: {}", result.detail);
        if !result.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
