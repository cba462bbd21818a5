//! Subcommand implementations. Each returns a [`CliError`] whose exit code
//! classifies the failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use augrpo_core::dataset::{build_dataset, synth_pool, BuildConfig, Dataset, Split};
use augrpo_core::policy::PolicyParams;
use augrpo_core::reward::{score, RewardWeights};
use augrpo_core::rng::{self, Purpose};
use augrpo_core::sources::{mine_edit_pairs, mine_video_pairs, MiningConfig, MiningEvent, SynthParams};
use augrpo_core::train::{
    ablation_grid, evaluate, run_training, summarize_ablation, AugCombo, EvalSet, Event, Formulation, TrainConfig,
};
use augrpo_core::triplet::{Answer, AugPolicy, ViewKind};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::jsonl::{self, JsonlWriter};
use crate::manifest::{self, PairRecord};
use crate::store::{self, Meta};
use crate::{checkpoint, png};

#[derive(Debug, Parser)]
#[command(name = "augrpo", version, about = "Contrastive triplets and augmented GRPO on a toy policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic image pairs and their manifest.
    Synth(SynthArgs),
    /// Mine pairs from a frame or edit manifest.
    Mine(MineArgs),
    /// Build triplets, two-image samples and prompts from a pair manifest.
    BuildDataset(BuildArgs),
    /// Score responses against expected answers.
    Score(ScoreArgs),
    /// Train the toy policy with augmented GRPO.
    TrainToy(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train over an ablation grid and report per-cell accuracy.
    Ablate(AblateArgs),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Mine(a) => mine(&a),
        Command::BuildDataset(a) => build(&a),
        Command::Score(a) => score_file(&a),
        Command::TrainToy(a) => train_toy(&a).map(|_| ()),
        Command::Eval(a) => {
            let r = eval(&a)?;
            emit(&serde_json::to_string_pretty(&r)?)
        }
        Command::Ablate(a) => ablate(&a),
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) -> CliResult<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub edits: usize,
}

pub const PAIRS_FILE: &str = "pairs.jsonl";

/// Writes `n` synthetic pairs (with change masks) and `OUT/pairs.jsonl`.
pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let params = SynthParams { size: a.size, n_edits: a.edits, ..SynthParams::default() };
    let mining = MiningConfig::default();
    let pool = synth_pool(&params, &mining, a.n, a.seed)?;
    let mut records = Vec::with_capacity(pool.len());
    for (k, p) in pool.iter().enumerate() {
        let rel = |s: &str| format!("images/synth_{k:05}_{s}.png");
        png::write_png(&a.out.join(rel("a")), &p.a)?;
        png::write_png(&a.out.join(rel("b")), &p.b)?;
        let mask = p.known_diff_mask.as_deref().unwrap_or_default();
        png::write_mask(&a.out.join(rel("mask")), p.a.width(), p.a.height(), mask)?;
        let s = augrpo_core::sources::score_pair(&p.a, &p.b, &mining)?;
        records.push(PairRecord {
            pair_id: p.meta.id.clone(),
            origin: p.origin,
            path_a: rel("a"),
            path_b: rel("b"),
            ssim: s.ssim,
            diff_ratio: s.diff_ratio,
            path_mask: Some(rel("mask")),
            timestamps_ms: None,
        });
    }
    jsonl::write_all(&a.out.join(PAIRS_FILE), &records)?;
    info!("wrote {} synthetic pairs to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long, conflicts_with = "edit_manifest", required_unless_present = "edit_manifest")]
    pub video_manifest: Option<PathBuf>,
    #[arg(long)]
    pub edit_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub ssim_max: f64,
    #[arg(long, default_value_t = 0.8)]
    pub diff_ratio_max: f64,
    #[arg(long, default_value_t = 30.0)]
    pub pixel_threshold: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gap_seconds: f64,
    /// Frame rate; inferred from timestamps when absent.
    #[arg(long)]
    pub frame_rate: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub max_pairs_per_video: Option<usize>,
    /// Do not apply the diff-ratio ceiling to video pairs.
    #[arg(long)]
    pub no_video_diff_filter: bool,
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

/// Mines pairs; the output manifest references the source images in place.
pub fn mine(a: &MineArgs) -> CliResult<()> {
    let cfg = MiningConfig {
        gap_seconds: a.gap_seconds,
        ssim_max: a.ssim_max,
        diff_ratio_max: a.diff_ratio_max,
        pixel_threshold: a.pixel_threshold,
        frame_rate: a.frame_rate,
        video_diff_filter: !a.no_video_diff_filter,
        stride: a.stride,
        max_pairs_per_video: a.max_pairs_per_video,
    };
    cfg.validate()?;
    let mut records = Vec::new();
    let (mut rejected, mut skipped) = (0usize, 0usize);
    let mut collect = |events: Vec<MiningEvent>, paths: &dyn Fn(&str) -> (String, String)| {
        for ev in events {
            match ev {
                MiningEvent::Accepted { pair, scores } => {
                    let (path_a, path_b) = paths(&pair.meta.id);
                    records.push(PairRecord {
                        pair_id: pair.meta.id,
                        origin: pair.origin,
                        path_a,
                        path_b,
                        ssim: scores.ssim,
                        diff_ratio: scores.diff_ratio,
                        path_mask: None,
                        timestamps_ms: pair.meta.timestamps_ms,
                    });
                }
                MiningEvent::Rejected { id, verdict, scores } => {
                    log::debug!("{id}: {verdict:?} (ssim {:.4}, diff {:.4})", scores.ssim, scores.diff_ratio);
                    rejected += 1;
                }
                MiningEvent::Skipped { id, reason } => {
                    warn!("{id}: skipped: {reason}");
                    skipped += 1;
                }
            }
        }
    };
    if let Some(m) = &a.video_manifest {
        let frames = manifest::read_frame_manifest(m)?;
        let events = mine_video_pairs(&frames, &cfg, |p| png::read_png(p))?;
        collect(events, &|id| {
            let (i, j) = parse_video_id(id);
            (absolute(&frames[i].1), absolute(&frames[j].1))
        });
    } else if let Some(m) = &a.edit_manifest {
        let entries = manifest::read_edit_manifest(m)?;
        let events = mine_edit_pairs(&entries, &cfg, |p| png::read_png(p))?;
        collect(events, &|id| {
            let n: usize = id.trim_start_matches("edit:").parse().expect("edit ids carry the entry index");
            (absolute(&entries[n].0), absolute(&entries[n].1))
        });
    } else {
        return Err(CliError::Usage("one of --video-manifest or --edit-manifest is required".into()));
    }
    info!("kept {} pairs, rejected {rejected}, skipped {skipped}", records.len());
    jsonl::write_all(&a.out, &records)
}

fn parse_video_id(id: &str) -> (usize, usize) {
    let (i, j) = id
        .trim_start_matches("video:")
        .split_once('-')
        .expect("video ids carry both frame indices");
    (i.parse().expect("frame index"), j.parse().expect("frame index"))
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub triplets: usize,
    #[arg(long = "pairs-n", default_value_t = 0)]
    pub pairs_n: usize,
    #[arg(long, default_value_t = 20)]
    pub templates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Held-out triplets; defaults to half the training count.
    #[arg(long)]
    pub eval_triplets: Option<usize>,
    /// Held-out two-image samples; defaults to a quarter of the training count.
    #[arg(long)]
    pub eval_pairs: Option<usize>,
    /// Fraction of source pairs reserved for the held-out split.
    #[arg(long, default_value_t = 0.25)]
    pub eval_fraction: f64,
}

/// Splits the pair pool, builds both splits and writes the dataset directory.
pub fn build(a: &BuildArgs) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.eval_fraction) {
        return Err(CliError::Usage(format!("eval fraction {} outside [0, 1)", a.eval_fraction)));
    }
    let mut pool = manifest::load_pairs(&a.pairs)?;
    if pool.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs", a.pairs.display())));
    }
    let eval_t = a.eval_triplets.unwrap_or(a.triplets / 2);
    let eval_p = a.eval_pairs.unwrap_or(a.pairs_n / 4);
    pool.shuffle(&mut rng::stream(a.seed, Purpose::Build, &[u64::MAX]));
    let wants_eval = eval_t + eval_p > 0;
    let held = if wants_eval && pool.len() >= 2 {
        ((pool.len() as f64 * a.eval_fraction).round() as usize).clamp(1, pool.len() - 1)
    } else {
        0
    };
    if wants_eval && held == 0 {
        warn!("one source pair only; train and eval share it");
    }
    let (eval_pool, train_pool) = if held == 0 { (&pool[..], &pool[..]) } else { pool.split_at(held) };
    let cfg = |triplets, pairs| BuildConfig { triplets, pairs, templates: a.templates, seed: a.seed };
    let train = build_dataset(train_pool, &cfg(a.triplets, a.pairs_n), Split::Train)?;
    let mut samples = train.dataset.samples;
    let mut warnings = train.warnings;
    if wants_eval {
        let eval = build_dataset(eval_pool, &cfg(eval_t, eval_p), Split::Eval)?;
        samples.extend(eval.dataset.samples);
        warnings.extend(eval.warnings);
    }
    for w in &warnings {
        warn!("{w}");
    }
    let data = Dataset { samples, bank: train.dataset.bank };
    let meta = Meta { templates: a.templates, seed: a.seed, aug_policy: AugPolicy::default() };
    store::write_dataset(&a.out, &data, &meta)?;
    info!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub response_text: String,
    pub expected_answer: Answer,
}

pub fn score_file(a: &ScoreArgs) -> CliResult<()> {
    let reqs: Vec<ScoreRequest> = jsonl::read_all(&a.input)?;
    let weights = RewardWeights::default();
    let out: Vec<_> = reqs.iter().map(|r| score(&r.response_text, &r.expected_answer, &weights)).collect();
    jsonl::write_all(&a.out, &out)
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub clip_eps: f64,
    #[arg(long, default_value_t = 0.01)]
    pub kl_beta: f64,
    /// Rollout view and optimisation view.
    #[arg(long, default_value = "weak,strong")]
    pub aug: AugCombo,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// pairs, triplets or both.
    #[arg(long, default_value = "both")]
    pub formulation: Formulation,
    /// Gradient L2-norm ceiling; 0 disables rescaling.
    #[arg(long, default_value_t = 1.0)]
    pub max_grad_norm: f64,
    /// Evaluate (and checkpoint) every this many steps; 0 only at start and end.
    #[arg(long, default_value_t = 50)]
    pub eval_every: usize,
    #[arg(long, default_value = "strong")]
    pub eval_view: ViewKind,
}

impl TrainArgs {
    pub fn config(&self, aug: AugPolicy) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            seed: self.seed,
            steps: self.steps,
            grpo: augrpo_core::grpo::GrpoConfig {
                group_size: self.group_size,
                clip_eps: self.clip_eps,
                kl_beta: self.kl_beta,
                ..base.grpo
            },
            aug,
            combo: self.aug,
            formulation: self.formulation,
            lr: self.lr,
            batch_size: self.batch_size,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            eval_every: self.eval_every,
            eval_view: self.eval_view,
        }
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVALS_FILE: &str = "evals.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const REPORT_FILE: &str = "report.json";

/// Train and held-out parts of a dataset; a dataset without held-out
/// samples is evaluated on its training samples.
pub fn split_for_training(data: &Dataset) -> (Dataset, Dataset) {
    let train = data.split(Split::Train);
    let eval = data.split(Split::Eval);
    if eval.is_empty() {
        warn!("dataset has no held-out samples; evaluating on training samples");
        let all = train.clone();
        return (train, all);
    }
    (train, eval)
}

/// Trains and writes metrics, evaluations, checkpoints and a report to
/// `OUT`. Metrics are flushed every step; on a numeric abort the last
/// good parameters are checkpointed before the error is returned.
pub fn train_toy(a: &TrainArgs) -> CliResult<augrpo_core::train::TrainReport> {
    let (data, meta) = store::load_dataset(&a.dataset)?;
    let cfg = a.config(meta.aug_policy);
    cfg.validate()?;
    let (train, eval) = split_for_training(&data);
    std::fs::create_dir_all(&a.out)?;
    let mut metrics = JsonlWriter::create(&a.out.join(METRICS_FILE), true)?;
    let mut evals = JsonlWriter::create(&a.out.join(EVALS_FILE), true)?;
    let mut io_err: Option<CliError> = None;
    let mut last = PolicyParams::default();
    let started = Instant::now();
    let result = run_training(&cfg, &train, &eval, PolicyParams::default(), |ev| {
        let r = match ev {
            Event::Step(m, p) => {
                last = *p;
                if m.step % 50 == 0 {
                    info!("step {} reward {:.3} skip {:.2}", m.step, m.mean_reward, m.skip_rate);
                }
                metrics.write(m)
            }
            Event::Eval(e) => {
                info!("eval @{}: exact {:.3}", e.step, e.result.exact_match);
                let path = a.out.join(format!("checkpoints/step_{:06}.txt", e.step));
                evals.write(e).and_then(|_| checkpoint::write(&path, &last, cfg.lr))
            }
        };
        if let Err(e) = r {
            io_err.get_or_insert(e);
        }
    });
    metrics.finish()?;
    evals.finish()?;
    if let Some(e) = io_err {
        return Err(e);
    }
    let mut report = match result {
        Ok(r) => r,
        Err(e) => {
            checkpoint::write(&a.out.join(CHECKPOINT_FILE), &last, cfg.lr)?;
            return Err(e.into());
        }
    };
    report.wall_time_s = Some(started.elapsed().as_secs_f64());
    checkpoint::write(&a.out.join(CHECKPOINT_FILE), &report.final_params, cfg.lr)?;
    std::fs::write(a.out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    info!("final exact match {:.3}", report.final_eval.exact_match);
    Ok(report)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "strong")]
    pub view: ViewKind,
    /// View seed; defaults to the dataset seed so the saved views are used.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn eval(a: &EvalArgs) -> CliResult<augrpo_core::train::EvalResult> {
    let ck = checkpoint::read(&a.checkpoint)?;
    let (data, meta) = store::load_dataset(&a.dataset)?;
    let (_, held) = split_for_training(&data);
    let set = EvalSet::prepare(&held, &meta.aug_policy, a.view, a.seed.unwrap_or(meta.seed))?;
    Ok(evaluate(&ck.params, &set))
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated axes to vary: aug, formulation.
    #[arg(long, value_delimiter = ',', default_value = "aug,formulation")]
    pub axes: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Per-run rows as line-delimited JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn ablation_axes(axes: &[String]) -> CliResult<(Vec<AugCombo>, Vec<Formulation>)> {
    let base = TrainConfig::default();
    let (mut combos, mut forms) = (vec![base.combo], vec![base.formulation]);
    for a in axes {
        match a.trim() {
            "aug" => combos = AugCombo::ALL.to_vec(),
            "formulation" => forms = Formulation::ALL.to_vec(),
            other => return Err(CliError::Usage(format!("unknown ablation axis {other:?}"))),
        }
    }
    Ok((combos, forms))
}

pub fn ablate(a: &AblateArgs) -> CliResult<()> {
    let (combos, forms) = ablation_axes(&a.axes)?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let (data, meta) = store::load_dataset(&a.dataset)?;
    let (train, eval) = split_for_training(&data);
    let base = TrainConfig { steps: a.steps, lr: a.lr, aug: meta.aug_policy, ..TrainConfig::default() };
    base.validate()?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mut out = a.out.as_deref().map(|p| JsonlWriter::create(p, true)).transpose()?;
    let mut io_err = None;
    let rows = ablation_grid(&base, &train, &eval, &combos, &forms, &seeds, |row| {
        info!("{} {} seed {}: {:.3}", row.combo, row.formulation.as_str(), row.seed, row.eval.exact_match);
        if let Some(w) = out.as_mut() {
            if let Err(e) = w.write(row) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    if let Some(w) = out {
        w.finish()?;
    }
    let mut table = format!("{:<14} {:<11} {:>8}", "views", "formulation", "exact");
    for ((combo, form), acc) in summarize_ablation(&rows) {
        table.push_str(&format!("\n{:<14} {:<11} {:>8.3}", combo.to_string(), form.as_str(), acc));
    }
    emit(&table)
}
