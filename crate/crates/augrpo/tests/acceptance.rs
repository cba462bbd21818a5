//! Acceptance gate. Prints one PASS/FAIL line per criterion and fails if any
//! gating criterion fails. The ablation ordering is reported only.
//!
//! Run with `cargo test -p augrpo --test acceptance -- --nocapture` to see
//! the report.

use std::path::Path;
use std::time::Instant;

use augrpo::checkpoint;
use augrpo::commands::{self, BuildArgs, SynthArgs, TrainArgs};
use augrpo_core::dataset::{build_dataset, synth_pool, synthetic_split, BuildConfig, Dataset, Split, SyntheticSpec, TrainingSample};
use augrpo_core::grpo::{clipped_term, group_advantages, grpo_objective, kl_k3, GrpoConfig, RolloutLogProbs};
use augrpo_core::image::ssim;
use augrpo_core::policy::{
    grad_logp, grad_objective, group_objective, logp_letters, sample_with_features, FeatureVector, PolicyParams,
    PromptFeatures, Snapshots, FEATURE_DIM,
};
use augrpo_core::prompt::{Direction, PromptAssignment, TemplateBank};
use augrpo_core::reward::{format_reward, score, RewardWeights};
use augrpo_core::rng::{stream, Purpose, StreamRng};
use augrpo_core::sources::{judge_edit, judge_video, score_pair, MiningConfig, SynthParams, Verdict};
use augrpo_core::train::{run_training, AugCombo, Event, Formulation, StepMetrics, TrainConfig, Trainer};
use augrpo_core::triplet::{build_pair_sample, triplet_gt, Answer, PairSource, Sample, SampleKind, PAIR_CANONICAL};
use augrpo_core::Image;
use rand::Rng;

struct Gate {
    failed: Vec<&'static str>,
}

impl Gate {
    fn check(&mut self, name: &'static str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name);
        }
    }
}

fn rng(tag: u64) -> StreamRng {
    stream(tag, Purpose::Build, &[0xacce])
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn math_properties() -> (bool, String) {
    let t = Instant::now();
    let mut r = rng(1);
    let mut bad = Vec::new();
    for _ in 0..10_000 {
        let (a, b) = (r.gen_range(-50.0..0.0), r.gen_range(-50.0..0.0));
        let kl = kl_k3(a, b).unwrap();
        if kl < 0.0 || kl_k3(a, a).unwrap().abs() > 1e-12 || (a != b && kl <= 0.0) {
            bad.push(format!("kl({a},{b})={kl}"));
        }
    }
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    for _ in 0..10_000 {
        let n = r.gen_range(2..17);
        let rewards: Vec<f64> = (0..n)
            .map(|_| if r.gen() { f64::from(r.gen_range(0u8..3)) } else { r.gen_range(0.0..2.0) })
            .collect();
        if let Some(adv) = group_advantages(&rewards, 1e-8).unwrap().advantages {
            let m = adv.iter().sum::<f64>() / n as f64;
            let sd = (adv.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
            worst_mean = worst_mean.max(m.abs());
            worst_std = worst_std.max((sd - 1.0).abs());
        }
    }
    if worst_mean > 1e-9 || worst_std > 1e-9 {
        bad.push(format!("advantages mean {worst_mean:e} std {worst_std:e}"));
    }
    for _ in 0..10_000 {
        let (ratio, a, eps) = (r.gen_range(0.0..5.0), r.gen_range(-10.0..10.0), r.gen_range(0.01..0.99));
        if clipped_term(ratio, a, eps) > ratio * a {
            bad.push(format!("clipped_term({ratio},{a},{eps}) above r*A"));
        }
        if clipped_term(1.0, a, eps) != a {
            bad.push(format!("clipped_term(1,{a},{eps}) != {a}"));
        }
    }
    let cfg = GrpoConfig::default();
    let mut worst_shift: f64 = 0.0;
    for _ in 0..1_000 {
        let rewards: Vec<f64> = (0..8).map(|_| f64::from(r.gen_range(0u8..3))).collect();
        let base = group_advantages(&rewards, cfg.std_floor).unwrap();
        if base.skipped() {
            continue;
        }
        let c = r.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = rewards.iter().map(|x| x + c).collect();
        let logps: Vec<RolloutLogProbs> = (0..8)
            .map(|_| {
                let old = r.gen_range(-5.0..0.0);
                RolloutLogProbs { theta: old + r.gen_range(-0.3..0.3), old, reference: old + r.gen_range(-1.0..1.0) }
            })
            .collect();
        let j0 = grpo_objective(&base, &logps, &cfg).unwrap().objective;
        let j1 = grpo_objective(&group_advantages(&shifted, cfg.std_floor).unwrap(), &logps, &cfg).unwrap().objective;
        worst_shift = worst_shift.max((j0 - j1).abs() / (1.0 + j0.abs()));
    }
    if worst_shift > 1e-9 {
        bad.push(format!("shift changes objective by {worst_shift:e}"));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = bad.is_empty() && secs < 10.0;
    (pass, format!("{} violations, max shift drift {worst_shift:.1e}, {secs:.2}s (limit 10s) {}", bad.len(), bad.join("; ")))
}

fn random_features(r: &mut StreamRng, n: usize, dir: Direction) -> PromptFeatures {
    let slots = (0..n)
        .map(|_| {
            let mut f = [0.0; FEATURE_DIM];
            f[0] = 1.0;
            for v in &mut f[1..] {
                *v = r.gen_range(-1.0..1.0);
            }
            FeatureVector(f)
        })
        .collect();
    PromptFeatures::new(slots, dir)
}

fn random_params(r: &mut StreamRng) -> PolicyParams {
    PolicyParams::new(std::array::from_fn(|_| r.gen_range(-1.0..1.0)))
}

fn gradient_oracle() -> (bool, String) {
    let t = Instant::now();
    let mut r = rng(2);
    let h = 1e-5;
    let mut worst_logp: f64 = 0.0;
    for i in 0..100 {
        let dir = if i % 2 == 0 { Direction::Forward } else { Direction::Reverse };
        let pf = random_features(&mut r, if i % 3 == 0 { 1 } else { 3 }, dir);
        let p = random_params(&mut r);
        let letters = Answer((0..pf.len()).map(|_| r.gen()).collect());
        let g = grad_logp(&p, &pf, &letters).unwrap();
        for k in 0..FEATURE_DIM {
            let (mut up, mut dn) = (p, p);
            up.w[k] += h;
            dn.w[k] -= h;
            let fd = (logp_letters(&up, &pf, &letters).unwrap() - logp_letters(&dn, &pf, &letters).unwrap()) / (2.0 * h);
            worst_logp = worst_logp.max(rel_err(g[k], fd));
        }
    }
    let cfg = GrpoConfig::default();
    let mut worst_obj: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let dir = if r.gen() { Direction::Forward } else { Direction::Reverse };
        let pf = random_features(&mut r, 3, dir);
        let reference = random_params(&mut r);
        let old = random_params(&mut r);
        let mut theta = old;
        for w in &mut theta.w {
            *w += r.gen_range(-0.05..0.05);
        }
        let letters: Vec<Answer> = (0..8).map(|_| sample_with_features(&old, &pf, &mut r).letters).collect();
        let rewards: Vec<f64> = (0..8).map(|_| f64::from(r.gen_range(0u8..3))).collect();
        let stats = group_advantages(&rewards, 1e-8).unwrap();
        if stats.skipped() {
            continue;
        }
        // Points next to a clip boundary are not differentiable; resample.
        let near_edge = letters.iter().any(|l| {
            let ratio = (logp_letters(&theta, &pf, l).unwrap() - logp_letters(&old, &pf, l).unwrap()).exp();
            (ratio - (1.0 - cfg.clip_eps)).abs() < 1e-3 || (ratio - (1.0 + cfg.clip_eps)).abs() < 1e-3
        });
        if near_edge {
            continue;
        }
        let g = grad_objective(Snapshots { theta: &theta, old: &old, reference: &reference }, &stats, &pf, &letters, &cfg)
            .unwrap();
        let at = |t: &PolicyParams| {
            group_objective(Snapshots { theta: t, old: &old, reference: &reference }, &stats, &pf, &letters, &cfg)
                .unwrap()
                .objective
        };
        for k in 0..FEATURE_DIM {
            let (mut up, mut dn) = (theta, theta);
            up.w[k] += h;
            dn.w[k] -= h;
            worst_obj = worst_obj.max(rel_err(g[k], (at(&up) - at(&dn)) / (2.0 * h)));
        }
        done += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_logp <= 1e-6 && worst_obj <= 1e-4 && secs < 30.0;
    (pass, format!("log-prob rel err {worst_logp:.1e} (<=1e-6), objective rel err {worst_obj:.1e} (<=1e-4), {secs:.2}s (limit 30s)"))
}

fn all_strings(n: usize) -> Vec<Answer> {
    (0..1usize << n).map(|m| Answer((0..n).map(|k| m >> (n - 1 - k) & 1 == 1).collect())).collect()
}

const FORMAT_GOLDEN: &[(&str, u8)] = &[
    ("<think> </think> <answer>TFT</answer>", 1),
    ("<think>The first two match.</think><answer>TFF</answer>", 1),
    ("<think>\nreasoning\n</think>\n<answer>F</answer>", 1),
    ("   <think>x</think> <answer>T</answer>   ", 1),
    ("\n\t<think></think><answer></answer>\n", 1),
    ("<think>a</think>\n\n\n<answer>banana</answer>", 1),
    ("<think>a < b</think><answer>TT F</answer>", 1),
    ("<think>Comparing the images pair by pair.</think> <answer>FTT</answer>", 1),
    ("<think>x</think><answer>tft</answer>", 1),
    ("The answer is TFT", 0),
    ("", 0),
    ("<answer>TFT</answer>", 0),
    ("<think>x</think>", 0),
    ("<answer>T</answer><think>x</think>", 0),
    ("prefix <think>x</think><answer>T</answer>", 0),
    ("<think>x</think><answer>T</answer> suffix", 0),
    ("<think>x</think> between <answer>T</answer>", 0),
    ("<think>x</think><answer>T</answer><answer>F</answer>", 0),
    ("<think>a</think><think>b</think><answer>T</answer>", 0),
    ("<think><think>x</think></think><answer>T</answer>", 0),
    ("<think>x</think><answer>T", 0),
    ("<think>x<answer>T</answer>", 0),
    ("<think>x</think><answer><answer>T</answer></answer>", 0),
    ("<Think>x</Think><answer>T</answer>", 0),
    ("<think>x</think><answer>T</answer >", 0),
];

fn reward_oracle() -> (bool, String) {
    let w = RewardWeights::default();
    let mut bad = Vec::new();
    let mut expected_sets: Vec<Answer> = (1..=3).map(|odd| triplet_gt(odd).unwrap()).collect();
    let reverse: Vec<Answer> = expected_sets.iter().map(Answer::complement).collect();
    expected_sets.extend(reverse);
    expected_sets.extend([Answer(vec![true]), Answer(vec![false])]);
    for expected in &expected_sets {
        let hits: Vec<Answer> = all_strings(expected.len())
            .into_iter()
            .filter(|s| score(&format!("<think> </think> <answer>{s}</answer>"), expected, &w).accuracy == 1)
            .collect();
        if hits.len() != 1 || &hits[0] != expected {
            bad.push(format!("{expected}: {} hits", hits.len()));
        }
    }
    for (text, want) in FORMAT_GOLDEN {
        if format_reward(text) != *want {
            bad.push(format!("format({text:?}) != {want}"));
        }
    }
    (
        bad.is_empty(),
        format!("{} answer classes enumerated, {} format goldens, {}", expected_sets.len(), FORMAT_GOLDEN.len(), bad.join("; ")),
    )
}

fn filter_fidelity() -> (bool, String) {
    let cfg = MiningConfig::default();
    let base = Image::filled(100, 100, [100, 100, 100]).unwrap();
    let perturbed = |k: usize| {
        let mut b = base.clone();
        for i in 0..k {
            b.set_pixel(i % 100, i / 100, [131, 131, 131]);
        }
        b
    };
    let s79 = score_pair(&base, &perturbed(7900), &cfg).unwrap();
    let s81 = score_pair(&base, &perturbed(8100), &cfg).unwrap();
    let kept = judge_edit(&s79, &cfg) == Verdict::Keep;
    let dropped = judge_edit(&s81, &cfg) == Verdict::TooDifferent;
    let same = score_pair(&base, &base, &cfg).unwrap();
    let identical = (same.ssim - 1.0).abs() <= 1e-9 && judge_video(&same, &cfg) == Verdict::TooSimilar;
    let black = Image::filled(64, 64, [0, 0, 0]).unwrap();
    let white = Image::filled(64, 64, [255, 255, 255]).unwrap();
    let c1 = (0.01f64 * 255.0).powi(2);
    let closed = c1 / (255.0 * 255.0 + c1);
    let got = ssim(&black, &white).unwrap();
    let constant = (got - closed).abs() <= 1e-6;
    (
        kept && dropped && identical && constant,
        format!(
            "ratio {:.2} kept={kept}, ratio {:.2} dropped={dropped}, self-SSIM {:.12} filtered={identical}, 0-vs-255 SSIM {got:.3e} vs {closed:.3e}",
            s79.diff_ratio, s81.diff_ratio, same.ssim
        ),
    )
}

fn balance() -> (bool, String) {
    let pool = synth_pool(&SynthParams { size: 32, ..SynthParams::default() }, &MiningConfig::default(), 60, 11).unwrap();
    let cfg = BuildConfig { triplets: 600, pairs: 0, templates: 20, seed: 0 };
    let data = build_dataset(&pool, &cfg, Split::Train).unwrap().dataset;
    let classes = data.class_counts().unwrap();
    let counts: Vec<usize> = classes.values().copied().collect();
    let mut odd = [0usize; 3];
    for s in &data.samples {
        if let Sample::Triplet(t) = &s.sample {
            odd[t.odd_slot as usize - 1] += 1;
        }
    }
    let classes_ok = classes.len() == 6 && counts.iter().all(|c| c.abs_diff(100) <= 10);
    let odd_ok = odd.iter().all(|c| c.abs_diff(200) <= 20);
    let listing: Vec<String> = classes.iter().map(|((_, k), v)| format!("{k}:{v}")).collect();
    (classes_ok && odd_ok, format!("classes [{}] (100+-10), odd slots {odd:?} (200+-20)", listing.join(" ")))
}

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                out[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

const SMOOTH_WINDOW: usize = 50;
const CHECKPOINT_EVERY: usize = 50;

fn end_to_end(split: &augrpo_core::dataset::TrainEval) -> (bool, String) {
    let t = Instant::now();
    let cfg = TrainConfig { seed: 0, steps: 600, eval_every: CHECKPOINT_EVERY, ..TrainConfig::default() };
    let mut metrics: Vec<StepMetrics> = Vec::new();
    let report = run_training(&cfg, &split.train, &split.eval, PolicyParams::default(), |e| {
        if let Event::Step(m, _) = e {
            metrics.push(m.clone());
        }
    })
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let start = report.evals[0].result.triplet_exact.unwrap();
    let end = report.final_eval.triplet_exact.unwrap();
    let (mut steps, mut smoothed) = (Vec::new(), Vec::new());
    for c in (CHECKPOINT_EVERY..=metrics.len()).step_by(CHECKPOINT_EVERY) {
        let window = &metrics[c - SMOOTH_WINDOW..c];
        steps.push(c as f64);
        smoothed.push(window.iter().map(|m| m.mean_reward).sum::<f64>() / SMOOTH_WINDOW as f64);
    }
    let rho = spearman(&steps, &smoothed);
    let pass = end >= 0.70 && rho > 0.8 && secs < 300.0;
    let curve: Vec<String> = smoothed.iter().map(|v| format!("{v:.3}")).collect();
    (
        pass,
        format!(
            "triplet exact {start:.3} -> {end:.3} (>=0.70) in {} steps, spearman {rho:.3} (>0.8), {secs:.1}s (limit 300s); smoothed reward [{}]",
            cfg.steps,
            curve.join(" ")
        ),
    )
}

fn skip_rule() -> (bool, String) {
    let pool = synth_pool(&SynthParams { size: 32, ..SynthParams::default() }, &MiningConfig::default(), 8, 3).unwrap();
    let samples = pool
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pair = build_pair_sample(PairSource::Single { image: &p.a, id: &p.meta.id }, true, &mut rng(i as u64)).unwrap();
            TrainingSample {
                id: format!("same{i}"),
                sample: Sample::Pair(pair),
                assignment: PromptAssignment {
                    template_id: i % 20,
                    direction: if i % 2 == 0 { Direction::Forward } else { Direction::Reverse },
                    comparison_order: PAIR_CANONICAL.to_vec(),
                },
                split: Split::Train,
            }
        })
        .collect();
    let data = Dataset { samples, bank: TemplateBank::standard() };
    let mut init = PolicyParams::default();
    init.w[0] = 40.0;
    init.version = 3;
    let cfg = TrainConfig { batch_size: 8, ..TrainConfig::default() };
    let mut trainer = Trainer::new(cfg.clone(), &data, init).unwrap();
    let before = checkpoint::render(trainer.params(), cfg.lr);
    let m = trainer.step().unwrap().metrics;
    let after = checkpoint::render(trainer.params(), cfg.lr);
    let pass = before == after && m.skipped_all_correct == m.groups && !m.updated;
    (pass, format!("{} of {} groups all-correct, checkpoint identical: {}", m.skipped_all_correct, m.groups, before == after))
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for name in [commands::METRICS_FILE, commands::EVALS_FILE, commands::CHECKPOINT_FILE] {
        out.push((name.to_string(), std::fs::read(dir.join(name)).unwrap()));
    }
    let mut cks: Vec<_> = std::fs::read_dir(dir.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
    cks.sort();
    for p in cks {
        out.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
    }
    out
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    commands::synth(&SynthArgs { out: root.join("syn"), n: 24, seed: 4, size: 64, edits: 2 }).unwrap();
    commands::build(&BuildArgs {
        pairs: root.join("syn").join(commands::PAIRS_FILE),
        out: root.join("ds"),
        triplets: 48,
        pairs_n: 16,
        templates: 20,
        seed: 4,
        eval_triplets: None,
        eval_pairs: None,
        eval_fraction: 0.25,
    })
    .unwrap();
    let run = |name: &str| {
        let args = TrainArgs {
            dataset: root.join("ds"),
            out: root.join(name),
            steps: 30,
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.01,
            aug: AugCombo::WEAK_STRONG,
            seed: 9,
            lr: 0.05,
            batch_size: 16,
            formulation: Formulation::Both,
            max_grad_norm: 1.0,
            eval_every: 10,
            eval_view: augrpo_core::triplet::ViewKind::Strong,
        };
        commands::train_toy(&args).unwrap();
        read_dir_bytes(&root.join(name))
    };
    let (a, b) = (run("run_a"), run("run_b"));
    let same = a == b;
    let bytes: usize = a.iter().map(|(_, v)| v.len()).sum();
    (same && a.len() >= 6, format!("{} files, {bytes} bytes, byte-identical: {same}", a.len()))
}

const ABLATION_STEPS: usize = 200;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

fn ablation(split: &augrpo_core::dataset::TrainEval) -> (bool, String) {
    let mut means = Vec::new();
    for combo in [AugCombo::WEAK_STRONG, AugCombo::STRONG_STRONG, AugCombo::WEAK_WEAK] {
        let mut total = 0.0;
        for seed in ABLATION_SEEDS {
            let cfg = TrainConfig { seed, combo, steps: ABLATION_STEPS, ..TrainConfig::default() };
            let r = run_training(&cfg, &split.train, &split.eval, PolicyParams::default(), |_| {}).unwrap();
            total += r.final_eval.exact_match;
        }
        means.push((combo, total / ABLATION_SEEDS.len() as f64));
    }
    let ws = means[0].1;
    let pass = ws >= means[1].1 && ws >= means[2].1;
    let listing: Vec<String> = means.iter().map(|(c, m)| format!("({c}) {m:.3}")).collect();
    (pass, format!("{} seeds x {ABLATION_STEPS} steps, strong-view exact match {}", ABLATION_SEEDS.len(), listing.join(", ")))
}

#[test]
fn acceptance_suite() {
    let mut gate = Gate { failed: Vec::new() };
    let (p, d) = math_properties();
    gate.check("math-core properties", p, d);
    let (p, d) = gradient_oracle();
    gate.check("gradient oracle", p, d);
    let (p, d) = reward_oracle();
    gate.check("reward oracle", p, d);
    let (p, d) = filter_fidelity();
    gate.check("filter fidelity", p, d);
    let (p, d) = balance();
    gate.check("dataset balance", p, d);
    let split = synthetic_split(&SyntheticSpec::standard(), 0).unwrap();
    assert_eq!(split.train.count(SampleKind::Triplet), 512);
    let (p, d) = end_to_end(&split);
    gate.check("end-to-end toy training", p, d);
    let (p, d) = skip_rule();
    gate.check("skip rule", p, d);
    let (p, d) = determinism();
    gate.check("determinism", p, d);
    let (p, d) = ablation(&split);
    println!("{} ablation directionality (soft, not gating): {d}", if p { "PASS" } else { "FAIL" });
    assert!(gate.failed.is_empty(), "failed: {:?}", gate.failed);
}
