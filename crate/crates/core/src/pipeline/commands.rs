use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::config::PipelineConfig;
use super::manifest::RunManifest;
use super::poses::{align_to_gt, read_pose_csv, write_pose_csv, AlignedPair, PoseFile, PoseRow, TranslationScale};
use super::{named_seed, write_atomic, PipelineError, Summary};
use crate::euroc::{
    build_pairs, load_camera_index, load_groundtruth, load_image, read_relative_gt, write_relative_gt,
    DatasetLayout, EurocError, FrameRecord, RelativeGtRow,
};
use crate::format::sig9;
use crate::frontend::{process_pair, PairResult, StageTimings};
use crate::image::GrayImage;
use crate::metrics::{
    chain_relative, compute_ate, compute_rpe, emit_ablation_table, rmse, AblationRow, AblationTables,
    AteReport, RpeReport, Trajectory,
};
use crate::refiner::{
    combine_branches, infer, load_model, save_model, split_tail, train_branch, train_combined,
    Activation, CombinedModel, FusionReport, MlpBranch, RefinerError, TrainConfig, TrainedBranch,
    TrainingSample,
};
use crate::se3::{DofVector, Transform, DOF_NAMES};
use crate::synthetic::{write_fixture_dataset, FixtureConfig, FixtureTruth};

/// Frames loaded at once by `run-vo`.
const FRAME_CHUNK: usize = 32;

/// Explicit input files; unset entries default to the output directory.
#[derive(Clone, Debug, Default)]
pub struct EvalInputs {
    pub raw: Option<PathBuf>,
    pub refined: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl EvalInputs {
    fn raw(&self, cfg: &PipelineConfig) -> PathBuf {
        self.raw.clone().unwrap_or_else(|| cfg.out("raw_poses.csv"))
    }

    fn gt(&self, cfg: &PipelineConfig) -> PathBuf {
        self.gt.clone().unwrap_or_else(|| cfg.out("relative_gt.csv"))
    }

    fn model(&self, cfg: &PipelineConfig) -> PathBuf {
        self.model.clone().unwrap_or_else(|| cfg.out("model.odof"))
    }
}

fn load_frames(cfg: &PipelineConfig, layout: &DatasetLayout) -> Result<Vec<FrameRecord>, PipelineError> {
    let mut frames = load_camera_index(&layout.camera_index())?;
    if cfg.dataset.max_frames > 0 {
        frames.truncate(cfg.dataset.max_frames);
    }
    if frames.len() < 2 {
        return Err(EurocError::TooFewFrames {
            path: layout.camera_index(),
            count: frames.len(),
        }
        .into());
    }
    Ok(frames)
}

fn load_gt_rows(path: &Path) -> Result<Vec<RelativeGtRow>, PipelineError> {
    Ok(read_relative_gt(path)?)
}

fn micros(s: &Summary) -> Summary {
    s.scaled(1e6)
}

fn timing_csv(rows: &[(String, Summary)]) -> String {
    let mut out = String::from("stage,samples,mean_us,median_us,p95_us\n");
    for (name, s) in rows {
        let _ = writeln!(out, "{name},{},{:.3},{:.3},{:.3}", s.samples, s.mean, s.median, s.p95);
    }
    out
}

fn timing_text(rows: &[(String, Summary)]) -> String {
    let mut out = format!("{:<11} {:>7} {:>12} {:>12} {:>12}\n", "stage", "samples", "mean µs", "median µs", "p95 µs");
    for (name, s) in rows {
        let _ = writeln!(out, "{name:<11} {:>7} {:>12.1} {:>12.1} {:>12.1}", s.samples, s.mean, s.median, s.p95);
    }
    out
}

/// Stage summaries in microseconds. Stage rows use successful pairs (all
/// pairs if none succeeded); the `pair` row always uses every pair.
fn stage_summaries(results: &[PairResult]) -> Vec<(String, Summary)> {
    let ok: Vec<&StageTimings> = results.iter().filter(|r| !r.failed()).map(|r| &r.diagnostics.timings).collect();
    let all: Vec<&StageTimings> = results.iter().map(|r| &r.diagnostics.timings).collect();
    let src = if ok.is_empty() { &all } else { &ok };
    let stage = |f: fn(&StageTimings) -> f64| micros(&Summary::of(&src.iter().map(|t| f(t)).collect::<Vec<_>>()));
    vec![
        ("harris".into(), stage(|t| t.harris)),
        ("shi_tomasi".into(), stage(|t| t.shi_tomasi)),
        ("track".into(), stage(|t| t.track)),
        ("essential".into(), stage(|t| t.estimate)),
        ("recover".into(), stage(|t| t.recover)),
        ("pair".into(), micros(&Summary::of(&all.iter().map(|t| t.total).collect::<Vec<_>>()))),
    ]
}

#[derive(Clone, Debug)]
pub struct ConvertSummary {
    pub pairs: usize,
    pub dropped: usize,
    pub output: PathBuf,
    pub text: String,
}

pub fn cmd_convert_gt(cfg: &PipelineConfig) -> Result<ConvertSummary, PipelineError> {
    let started = Instant::now();
    let layout = cfg.validate_dataset()?;
    let frames = load_frames(cfg, &layout)?;
    let gt = load_groundtruth(&layout.groundtruth())?;
    let set = build_pairs(&frames, &gt.records, cfg.dataset.max_extrapolation_ns)?;
    let rows: Vec<RelativeGtRow> = set
        .pairs
        .iter()
        .map(|p| RelativeGtRow {
            timestamp_a: p.frame_a.timestamp,
            timestamp_b: p.frame_b.timestamp,
            dof: p.gt_dof,
        })
        .collect();
    let output = cfg.out("relative_gt.csv");
    std::fs::create_dir_all(&cfg.output_dir).map_err(PipelineError::io(&cfg.output_dir))?;
    write_relative_gt(&output, &rows).map_err(PipelineError::io(&output))?;

    let mut m = RunManifest::new("convert-gt", cfg);
    m.counts.frames = frames.len();
    m.counts.pairs = rows.len();
    m.stage_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    m.details = json!({ "dropped_pairs": set.dropped, "normalization_warnings": gt.normalization_warnings });
    m.add_output(&output)?;
    m.write()?;
    let text = format!(
        "wrote {} relative ground-truth pairs to {} ({} dropped outside coverage, {} quaternion renormalization warnings)\n",
        rows.len(),
        output.display(),
        set.dropped,
        gt.normalization_warnings
    );
    Ok(ConvertSummary {
        pairs: rows.len(),
        dropped: set.dropped,
        output,
        text,
    })
}

#[derive(Clone, Debug)]
pub struct RunVoSummary {
    pub frames: usize,
    pub pairs: usize,
    pub failures: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    /// Per-stage wall times in microseconds.
    pub stages: Vec<(String, Summary)>,
    pub output: PathBuf,
    pub text: String,
}

pub fn cmd_run_vo(cfg: &PipelineConfig) -> Result<RunVoSummary, PipelineError> {
    let started = Instant::now();
    let layout = cfg.validate_dataset()?;
    let frames = load_frames(cfg, &layout)?;
    let mut results: Vec<PairResult> = Vec::with_capacity(frames.len() - 1);
    let mut first = 0;
    while first + 1 < frames.len() {
        let last = (first + FRAME_CHUNK).min(frames.len() - 1);
        let images: Vec<GrayImage> = frames[first..=last]
            .par_iter()
            .map(|f| load_image(&layout.image_path(f)))
            .collect::<Result<_, _>>()?;
        let chunk: Vec<PairResult> = (first..last)
            .into_par_iter()
            .map(|i| process_pair(&images[i - first], &images[i - first + 1], &cfg.camera, &cfg.frontend_for_pair(i)))
            .collect::<Result<_, _>>()?;
        results.extend(chunk);
        first = last;
    }

    let rows: Vec<PoseRow> = results
        .iter()
        .enumerate()
        .map(|(i, r)| PoseRow {
            timestamp_a: frames[i].timestamp,
            timestamp_b: frames[i + 1].timestamp,
            dof: r.dof,
            inliers: r.diagnostics.inliers,
            failed: r.failed(),
        })
        .collect();
    let mut failure_reasons = BTreeMap::new();
    for r in &results {
        if let Some(f) = &r.diagnostics.failure {
            *failure_reasons.entry(f.to_string()).or_insert(0) += 1;
        }
    }
    let failures = rows.iter().filter(|r| r.failed).count();
    let gimbal = results.iter().filter(|r| r.diagnostics.gimbal_lock).count();
    let output = cfg.out("raw_poses.csv");
    write_pose_csv(
        &output,
        &PoseFile {
            scale: TranslationScale::Unit,
            rows,
        },
    )?;
    let stages = stage_summaries(&results);
    let timings = cfg.out("run_vo_timings.csv");
    write_atomic(&timings, timing_csv(&stages).as_bytes())?;

    let mut m = RunManifest::new("run-vo", cfg);
    m.counts.frames = frames.len();
    m.counts.pairs = results.len();
    m.counts.failures = failures;
    m.stage_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    for (name, s) in &stages {
        m.stage_seconds.insert(name.clone(), s.mean * 1e-6 * s.samples as f64);
    }
    m.details = json!({ "failure_reasons": failure_reasons, "gimbal_lock_pairs": gimbal, "stages_us": stages });
    m.add_output(&output)?;
    m.add_output(&timings)?;
    m.write()?;

    let mut text = format!(
        "{} pairs from {} frames ({} mode), {} failed\n",
        results.len(),
        frames.len(),
        cfg.mode,
        failures
    );
    for (reason, n) in &failure_reasons {
        let _ = writeln!(text, "  {n} × {reason}");
    }
    text.push_str(&timing_text(&stages));
    let _ = writeln!(text, "wrote {}", output.display());
    Ok(RunVoSummary {
        frames: frames.len(),
        pairs: results.len(),
        failures,
        failure_reasons,
        stages,
        output,
        text,
    })
}

/// Aligned pairs split into the training-plus-validation block and the held-out test block.
fn split_dev_test<'a>(cfg: &PipelineConfig, aligned: &'a [AlignedPair]) -> (&'a [AlignedPair], &'a [AlignedPair]) {
    let dev = ((aligned.len() as f64) * (cfg.split.train + cfg.split.validation)).round() as usize;
    aligned.split_at(dev.min(aligned.len()))
}

fn samples_of(pairs: &[AlignedPair]) -> Vec<TrainingSample> {
    pairs
        .iter()
        .map(|p| TrainingSample {
            input: p.estimate,
            target: p.gt,
            failed: p.failed,
        })
        .collect()
}

struct FittedModel {
    model: CombinedModel,
    branches: Vec<TrainedBranch>,
    fusion: FusionReport,
}

fn fit_model(samples: &[TrainingSample], tc: &TrainConfig) -> Result<FittedModel, RefinerError> {
    let branches: Vec<TrainedBranch> = (0..6)
        .into_par_iter()
        .map(|d| train_branch(samples, d, tc))
        .collect::<Result<_, _>>()?;
    let combined = combine_branches(branches.iter().map(|b| b.branch.clone()).collect())?;
    let (model, fusion) = train_combined(&combined, samples, tc)?;
    Ok(FittedModel {
        model,
        branches,
        fusion,
    })
}

fn per_dof_rmse(pairs: &[AlignedPair], f: impl Fn(&AlignedPair) -> DofVector) -> [f64; 6] {
    let ok: Vec<(DofVector, DofVector)> = pairs.iter().filter(|p| !p.failed).map(|p| (f(p), p.gt)).collect();
    std::array::from_fn(|d| {
        let errs: Vec<f64> = ok.iter().map(|(e, g)| e.get(d) - g.get(d)).collect();
        rmse(&errs).unwrap_or(f64::NAN)
    })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    /// Validation RMSE per DoF of the raw input.
    pub before: [f64; 6],
    /// Validation RMSE per DoF of the combined model.
    pub after: [f64; 6],
    pub best_epochs: [usize; 6],
    pub fusion: FusionReport,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub test_pairs: usize,
    pub model: PathBuf,
    pub text: String,
}

pub fn cmd_train(cfg: &PipelineConfig, inputs: &EvalInputs) -> Result<TrainSummary, PipelineError> {
    let started = Instant::now();
    let raw_path = inputs.raw(cfg);
    let raw = read_pose_csv(&raw_path)?;
    let gt = load_gt_rows(&inputs.gt(cfg))?;
    let aligned = align_to_gt(&raw, &gt, &raw_path)?;
    let (dev, test) = split_dev_test(cfg, &aligned);
    let tc = cfg.train_config();
    let samples = samples_of(dev);
    let fitted = fit_model(&samples, &tc)?;
    let (train_block, val_block) = split_tail(dev, tc.validation_fraction);
    let before = per_dof_rmse(val_block, |p| p.estimate);
    let after = per_dof_rmse(val_block, |p| infer(&fitted.model, &p.estimate));

    let mut m = RunManifest::new("train", cfg);
    let curves_dir = cfg.out("curves");
    for b in &fitted.branches {
        let mut csv = String::from("epoch,train_loss,val_loss\n");
        for e in &b.curve {
            let _ = writeln!(csv, "{},{},{}", e.epoch, sig9(e.train_loss), sig9(e.val_loss));
        }
        let path = curves_dir.join(format!("{}.csv", DOF_NAMES[b.branch.dof_index]));
        write_atomic(&path, csv.as_bytes())?;
        m.add_output(&path)?;
    }
    let model_path = cfg.out("model.odof");
    let metadata = json!({
        "activation": tc.activation,
        "hidden": tc.hidden,
        "seed": cfg.seed,
        "config_hash": m.config_hash,
    })
    .to_string();
    save_model(&fitted.model, &metadata, &model_path)?;
    m.add_output(&model_path)?;
    m.counts.pairs = aligned.len();
    m.counts.failures = aligned.iter().filter(|p| p.failed).count();
    m.stage_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    let best_epochs: [usize; 6] = std::array::from_fn(|d| fitted.branches[d].best_epoch);
    m.details = json!({
        "validation_rmse_before": before,
        "validation_rmse_after": after,
        "best_epochs": best_epochs,
        "fusion": { "pre_fusion_val_loss": fitted.fusion.pre_fusion_val_loss, "val_loss": fitted.fusion.val_loss, "accepted": fitted.fusion.accepted },
        "blocks": { "train": train_block.len(), "validation": val_block.len(), "test": test.len() },
    });
    m.write()?;

    let mut text = format!(
        "trained {} branches on {} pairs (validation {}, held-out test {})\n{:<4} {:>14} {:>14} {:>9}\n",
        tc.activation,
        train_block.len(),
        val_block.len(),
        test.len(),
        "dof",
        "val RMSE raw",
        "val RMSE model",
        "change"
    );
    for d in 0..6 {
        let _ = writeln!(
            text,
            "{:<4} {:>14.6} {:>14.6} {:>8.1}%",
            DOF_NAMES[d],
            before[d],
            after[d],
            pct_change(before[d], after[d])
        );
    }
    let _ = writeln!(
        text,
        "fusion head {}: validation loss {:.6e} -> {:.6e}\nwrote {}",
        if fitted.fusion.accepted { "accepted" } else { "kept at its prior value" },
        fitted.fusion.pre_fusion_val_loss,
        fitted.fusion.val_loss,
        model_path.display()
    );
    Ok(TrainSummary {
        before,
        after,
        best_epochs,
        fusion: fitted.fusion,
        train_pairs: train_block.len(),
        validation_pairs: val_block.len(),
        test_pairs: test.len(),
        model: model_path,
        text,
    })
}

fn pct_change(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        100.0 * (after - before) / before
    } else {
        f64::NAN
    }
}

#[derive(Clone, Debug)]
pub struct InferSummary {
    pub rows: usize,
    pub refined: usize,
    /// Per-call latency in microseconds.
    pub latency: Summary,
    pub output: PathBuf,
    pub text: String,
}

pub fn cmd_infer(cfg: &PipelineConfig, inputs: &EvalInputs) -> Result<InferSummary, PipelineError> {
    let started = Instant::now();
    let model_path = inputs.model(cfg);
    let (model, metadata) = load_model(&model_path)?;
    let raw_path = inputs.raw(cfg);
    let raw = read_pose_csv(&raw_path)?;
    // Unit-direction translations take their length from ground truth.
    let metric_rows: Vec<PoseRow> = match raw.scale {
        TranslationScale::Metric => raw.rows.clone(),
        TranslationScale::Unit => {
            let gt = load_gt_rows(&inputs.gt(cfg))?;
            let index: BTreeMap<(i64, i64), &PoseRow> =
                raw.rows.iter().map(|r| ((r.timestamp_a, r.timestamp_b), r)).collect();
            align_to_gt(&raw, &gt, &raw_path)?
                .iter()
                .map(|p| PoseRow {
                    dof: p.estimate,
                    ..*index[&(p.timestamp_a, p.timestamp_b)]
                })
                .collect()
        }
    };
    let mut latencies = Vec::with_capacity(metric_rows.len());
    let rows: Vec<PoseRow> = metric_rows
        .iter()
        .map(|r| {
            if r.failed {
                return *r;
            }
            let t = Instant::now();
            let dof = infer(&model, &r.dof);
            latencies.push(t.elapsed().as_secs_f64());
            PoseRow { dof, ..*r }
        })
        .collect();
    let latency = micros(&Summary::of(&latencies));
    let output = cfg.out("refined_poses.csv");
    let refined = latencies.len();
    write_pose_csv(
        &output,
        &PoseFile {
            scale: TranslationScale::Metric,
            rows,
        },
    )?;

    let mut m = RunManifest::new("infer", cfg);
    m.counts.pairs = metric_rows.len();
    m.counts.failures = metric_rows.len() - refined;
    m.stage_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    m.details = json!({ "model": model_path, "model_metadata": metadata, "latency_us": latency });
    m.add_output(&output)?;
    m.write()?;
    let text = format!(
        "refined {refined} of {} pairs; inference latency mean {:.2} µs, median {:.2} µs, p95 {:.2} µs\nwrote {}\n",
        metric_rows.len(),
        latency.mean,
        latency.median,
        latency.p95,
        output.display()
    );
    Ok(InferSummary {
        rows: metric_rows.len(),
        refined,
        latency,
        output,
        text,
    })
}

/// Chains estimate and ground truth from a shared identity start.
fn trajectories(pairs: &[AlignedPair], path: &Path) -> Result<(Trajectory, Trajectory), PipelineError> {
    if let Some(i) = (1..pairs.len()).find(|&i| pairs[i].timestamp_a != pairs[i - 1].timestamp_b) {
        return Err(PipelineError::Alignment {
            path: path.to_path_buf(),
            message: format!("pairs {} and {} are not consecutive; cannot chain a trajectory", i, i + 1),
        });
    }
    let mut stamps = vec![pairs[0].timestamp_a];
    stamps.extend(pairs.iter().map(|p| p.timestamp_b));
    let est: Vec<DofVector> = pairs.iter().map(|p| p.estimate).collect();
    let gt: Vec<DofVector> = pairs.iter().map(|p| p.gt).collect();
    Ok((
        chain_relative(&Transform::identity(), &stamps, &est)?,
        chain_relative(&Transform::identity(), &stamps, &gt)?,
    ))
}

fn reports(cfg: &PipelineConfig, pairs: &[AlignedPair], path: &Path) -> Result<(RpeReport, AteReport, Trajectory, Trajectory), PipelineError> {
    let est: Vec<DofVector> = pairs.iter().map(|p| p.estimate).collect();
    let gt: Vec<DofVector> = pairs.iter().map(|p| p.gt).collect();
    let failed: Vec<bool> = pairs.iter().map(|p| p.failed).collect();
    let rpe = compute_rpe(&est, &gt, &failed)?;
    let (te, tg) = trajectories(pairs, path)?;
    let ate = compute_ate(&te, &tg, cfg.eval.align)?;
    Ok((rpe, ate, te, tg))
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub raw: (RpeReport, AteReport),
    pub refined: Option<(RpeReport, AteReport)>,
    /// Relative change of "RPE Trans." and "Mean ATE", in percent.
    pub rpe_change_pct: Option<f64>,
    pub ate_change_pct: Option<f64>,
    pub tables: AblationTables,
    pub text: String,
}

pub fn cmd_eval(cfg: &PipelineConfig, inputs: &EvalInputs) -> Result<EvalSummary, PipelineError> {
    let started = Instant::now();
    let gt = load_gt_rows(&inputs.gt(cfg))?;
    let raw_path = inputs.raw(cfg);
    let raw_pairs = align_to_gt(&read_pose_csv(&raw_path)?, &gt, &raw_path)?;
    let (rpe, ate, traj_raw, traj_gt) = reports(cfg, &raw_pairs, &raw_path)?;
    let mut m = RunManifest::new("eval", cfg);
    let mut rows = vec![AblationRow {
        label: "raw".into(),
        rpe: Some(rpe),
        ate: Some(ate),
    }];
    let write_traj = |name: &str, t: &Trajectory, m: &mut RunManifest| -> Result<(), PipelineError> {
        let path = cfg.out(name);
        write_atomic(&path, crate::metrics::trajectory_to_text(t).as_bytes())?;
        m.add_output(&path)
    };
    write_traj("traj_gt.txt", &traj_gt, &mut m)?;
    write_traj("traj_raw.txt", &traj_raw, &mut m)?;

    let mut refined = None;
    if let Some(path) = &inputs.refined {
        let pairs = align_to_gt(&read_pose_csv(path)?, &gt, path)?;
        let (r, a, traj, _) = reports(cfg, &pairs, path)?;
        write_traj("traj_refined.txt", &traj, &mut m)?;
        rows.push(AblationRow {
            label: "refined".into(),
            rpe: Some(r),
            ate: Some(a),
        });
        refined = Some((r, a));
    }
    let tables = emit_ablation_table(&rows, cfg.eval.units);
    let rpe_change_pct = refined.map(|(r, _)| pct_change(rpe.rpe_trans_mean, r.rpe_trans_mean));
    let ate_change_pct = refined.map(|(_, a)| pct_change(ate.ate_mean, a.ate_mean));

    let mut text = format!("{}\n{}", tables.rpe_text, tables.ate_text);
    let _ = writeln!(
        text,
        "{} pairs, {} failed; ATE {}",
        rpe.pairs + rpe.failed,
        rpe.failed,
        if cfg.eval.align { "after rigid alignment" } else { "without alignment" }
    );
    if let (Some(r), Some(a)) = (rpe_change_pct, ate_change_pct) {
        let _ = writeln!(text, "relative RMSE change, refined vs raw: RPE Trans. {r:+.2}%, Mean ATE {a:+.2}%");
    }
    let rpe_path = cfg.out("eval_rpe.csv");
    let ate_path = cfg.out("eval_ate.csv");
    let text_path = cfg.out("eval.txt");
    write_atomic(&rpe_path, tables.rpe_csv.as_bytes())?;
    write_atomic(&ate_path, tables.ate_csv.as_bytes())?;
    write_atomic(&text_path, text.as_bytes())?;
    for p in [&rpe_path, &ate_path, &text_path] {
        m.add_output(p)?;
    }
    m.counts.pairs = raw_pairs.len();
    m.counts.failures = rpe.failed;
    m.stage_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    m.details = json!({ "raw": { "rpe": rpe, "ate": ate }, "refined": refined.map(|(r, a)| json!({ "rpe": r, "ate": a })), "units": cfg.eval.units });
    m.write()?;
    Ok(EvalSummary {
        raw: (rpe, ate),
        refined,
        rpe_change_pct,
        ate_change_pct,
        tables,
        text,
    })
}

#[derive(Clone, Debug)]
pub struct AblateSummary {
    pub rows: Vec<AblationRow>,
    /// Raw frontend errors on the same block, for reference.
    pub baseline: AblationRow,
    /// Activations whose training diverged, with the error.
    pub diverged: Vec<(Activation, String)>,
    pub tables: AblationTables,
    pub text: String,
}

/// Trains one model per activation on the training and validation blocks
/// and reports errors on the held-out test block.
pub fn cmd_ablate(
    cfg: &PipelineConfig,
    inputs: &EvalInputs,
    activations: Option<&[Activation]>,
) -> Result<AblateSummary, PipelineError> {
    let started = Instant::now();
    let activations = activations.unwrap_or(&cfg.ablate.activations);
    if activations.is_empty() {
        return Err(PipelineError::Usage("no activations to compare".into()));
    }
    let raw_path = inputs.raw(cfg);
    let gt = load_gt_rows(&inputs.gt(cfg))?;
    let aligned = align_to_gt(&read_pose_csv(&raw_path)?, &gt, &raw_path)?;
    let (dev, test) = split_dev_test(cfg, &aligned);
    if test.is_empty() {
        return Err(PipelineError::Usage(
            "held-out test block is empty; lower split.train + split.validation".into(),
        ));
    }
    let samples = samples_of(dev);
    let (rpe, ate, _, _) = reports(cfg, test, &raw_path)?;
    let baseline = AblationRow {
        label: "raw (no refinement)".into(),
        rpe: Some(rpe),
        ate: Some(ate),
    };

    let mut rows = Vec::new();
    let mut diverged = Vec::new();
    for &act in activations {
        let tc = TrainConfig {
            activation: act,
            ..cfg.train_config()
        };
        let row = match fit_model(&samples, &tc) {
            Ok(f) => {
                let refined: Vec<AlignedPair> = test
                    .iter()
                    .map(|p| AlignedPair {
                        estimate: if p.failed { p.estimate } else { infer(&f.model, &p.estimate) },
                        ..*p
                    })
                    .collect();
                let (r, a, _, _) = reports(cfg, &refined, &raw_path)?;
                AblationRow {
                    label: act.label().into(),
                    rpe: Some(r),
                    ate: Some(a),
                }
            }
            Err(e @ RefinerError::Divergence { .. }) => {
                diverged.push((act, e.to_string()));
                AblationRow {
                    label: act.label().into(),
                    rpe: None,
                    ate: None,
                }
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    let tables = emit_ablation_table(&rows, cfg.eval.units);
    let reference = emit_ablation_table(std::slice::from_ref(&baseline), cfg.eval.units);
    let mut text = format!(
        "activation ablation on the held-out test block ({} pairs)\n\n{}\n{}\nreference:\n{}\n{}",
        test.len(),
        tables.rpe_text,
        tables.ate_text,
        reference.rpe_text,
        reference.ate_text
    );
    for (act, e) in &diverged {
        let _ = writeln!(text, "{act}: {e}");
    }
    let mut m = RunManifest::new("ablate", cfg);
    let paths = [cfg.out("ablation_rpe.csv"), cfg.out("ablation_ate.csv"), cfg.out("ablation.txt")];
    write_atomic(&paths[0], tables.rpe_csv.as_bytes())?;
    write_atomic(&paths[1], tables.ate_csv.as_bytes())?;
    write_atomic(&paths[2], text.as_bytes())?;
    for p in &paths {
        m.add_output(p)?;
    }
    m.counts.pairs = aligned.len();
    m.stage_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    m.details = json!({ "activations": activations, "diverged": diverged.iter().map(|d| d.0).collect::<Vec<_>>() });
    m.write()?;
    Ok(AblateSummary {
        rows,
        baseline,
        diverged,
        tables,
        text,
    })
}

#[derive(Clone, Debug)]
pub struct BenchSummary {
    pub pairs: usize,
    /// harris, shi_tomasi, track, essential, recover, pair, infer; microseconds.
    pub stages: Vec<(String, Summary)>,
    pub fps: f64,
    pub hardware: String,
    pub text: String,
}

fn hardware_identity() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown CPU".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}, {threads} threads, {}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

/// Sequential timing over at least `bench.min_pairs` pairs, cycling the
/// available frames, plus single-call inference latency.
pub fn cmd_bench(cfg: &PipelineConfig, inputs: &EvalInputs) -> Result<BenchSummary, PipelineError> {
    let layout = cfg.validate_dataset()?;
    let mut frames = load_frames(cfg, &layout)?;
    frames.truncate(cfg.bench.min_pairs + 1);
    let images: Vec<GrayImage> = frames
        .iter()
        .map(|f| load_image(&layout.image_path(f)))
        .collect::<Result<_, _>>()?;
    let distinct = images.len() - 1;
    let mut results = Vec::with_capacity(cfg.bench.min_pairs);
    for i in 0..cfg.bench.min_pairs.max(distinct) {
        let j = i % distinct;
        results.push(process_pair(&images[j], &images[j + 1], &cfg.camera, &cfg.frontend_for_pair(j))?);
    }

    let model_path = inputs.model(cfg);
    let (model, model_source) = if inputs.model.is_some() || model_path.exists() {
        (load_model(&model_path)?.0, model_path.display().to_string())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(named_seed(cfg.seed, "bench"));
        let branches: Vec<MlpBranch> = (0..6)
            .map(|d| MlpBranch::new(d, &cfg.train.hidden, cfg.train.activation, &mut rng))
            .collect();
        (combine_branches(branches)?, "untrained default architecture".into())
    };
    let inputs_dof: Vec<DofVector> = results.iter().map(|r| r.dof).collect();
    let mut latencies = Vec::with_capacity(cfg.bench.infer_calls);
    let mut sink = 0.0;
    for i in 0..cfg.bench.infer_calls {
        let x = &inputs_dof[i % inputs_dof.len()];
        let t = Instant::now();
        let y = infer(&model, x);
        latencies.push(t.elapsed().as_secs_f64());
        sink += y.tx;
    }
    std::hint::black_box(sink);

    let mut stages = stage_summaries(&results);
    stages.push(("infer".into(), micros(&Summary::of(&latencies))));
    let pair_median_s = stages.iter().find(|s| s.0 == "pair").map(|s| s.1.median * 1e-6).unwrap_or(f64::NAN);
    let fps = 1.0 / pair_median_s;
    let hardware = hardware_identity();
    let failures = results.iter().filter(|r| r.failed()).count();
    let mut text = format!(
        "{} pairs ({} distinct, {} failed), {} mode, on {}\n",
        results.len(),
        distinct,
        failures,
        cfg.mode,
        hardware
    );
    text.push_str(&timing_text(&stages));
    let _ = writeln!(text, "effective rate: {fps:.1} frames per second (1 / median pair time)");
    let _ = writeln!(text, "reference: 35 to 64 frames per second on a Core i7 laptop has been reported for this design; informational only");
    let _ = writeln!(text, "inference model: {model_source}");

    let mut m = RunManifest::new("bench", cfg);
    let csv_path = cfg.out("bench.csv");
    let txt_path = cfg.out("bench.txt");
    write_atomic(&csv_path, timing_csv(&stages).as_bytes())?;
    write_atomic(&txt_path, text.as_bytes())?;
    m.add_output(&csv_path)?;
    m.add_output(&txt_path)?;
    m.counts.frames = images.len();
    m.counts.pairs = results.len();
    m.counts.failures = failures;
    m.details = json!({ "hardware": hardware, "fps": fps, "stages_us": stages, "inference_model": model_source });
    m.write()?;
    Ok(BenchSummary {
        pairs: results.len(),
        stages,
        fps,
        hardware,
        text,
    })
}

/// Writes a rendered fixture sequence plus a matching `dofvo.toml`.
pub fn cmd_synth_dataset(root: &Path, fixture: &FixtureConfig) -> Result<(FixtureTruth, PathBuf), PipelineError> {
    let truth = write_fixture_dataset(root, fixture)?;
    let pairs = fixture.frames.saturating_sub(1);
    let root_abs = std::path::absolute(root).map_err(PipelineError::io(root))?;
    let mut cfg = PipelineConfig::default();
    cfg.dataset.root = root_abs.clone();
    cfg.output_dir = root_abs.join("out");
    cfg.camera = fixture.intrinsics;
    // Leaves at least 10 batches in the training-plus-validation block.
    cfg.train.batch_size = (pairs * 9 / 100).clamp(1, 64);
    let path = root.join("dofvo.toml");
    write_atomic(&path, cfg.to_toml().as_bytes())?;
    Ok((truth, path))
}
