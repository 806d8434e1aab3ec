//! The end-to-end run: generate a world, simulate demonstration drives,
//! segment them into actions, annotate frames, train the predictor, infer
//! on the held-out drives, and score the result. Every stage writes one
//! JSON artifact into the workspace and the whole run is summarized by a
//! manifest of content hashes, so two runs with the same seed can be
//! compared file-for-file.
//!
//! Frames are never stored: every image is re-rendered on demand from the
//! world and the capture pose, which keeps the artifact set small and the
//! run reproducible from the seed alone.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::annotation::{build_dataset, CompleteAffordance, Frame, PartialAffordance};
use crate::artifacts::{
    read_json, write_json, write_text, Manifest, ANNOTATIONS_FILE, CHECKPOINT_FILE, DRIVES_FILE,
    METRICS_FILE, METRICS_TEXT_FILE, PREDICTIONS_FILE, SEGMENTATION_FILE, WORLD_FILE,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, render_report, MetricsReport};
use crate::hdphmm::{fit, semantic_relabel, ActionSequence};
use crate::net::{infer_full, train, NetConfig, NetParams};
use crate::rng::derive_seed;
use crate::sampler::SamplerConfig;
use crate::synthgen::{
    generate_world, ground_truth_for_frames, render_frame, simulate_drive, Image, RoadGraph,
    SmoothedPath, TURN_RADIUS,
};
use crate::trajectory::{estimate_angular_speed, Trajectory};

/// One simulated demonstration and its capture points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriveRecord {
    pub trajectory: Trajectory,
    pub frames: Vec<Frame>,
}

/// Per-drive segmentation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub run_id: String,
    pub occupied_states: usize,
    pub emission_means: Vec<f64>,
    pub sequence: ActionSequence,
}

/// Where an annotated frame's pixels come from: drive index and pose index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub drive: usize,
    pub pose_index: usize,
}

/// The training set: one partial affordance per frame, plus the recipe to
/// re-render each frame's image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub annotations: Vec<PartialAffordance>,
    pub frame_refs: Vec<FrameRef>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: NetParams,
    /// Exact configs the run used, derived seeds included.
    pub net: NetConfig,
    pub sampler: SamplerConfig,
    pub steps_run: usize,
    pub diverged_at: Option<usize>,
    pub loss_totals: Vec<f64>,
}

/// Predictions and ground truth for the held-out drives, aligned by index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSet {
    pub predictions: Vec<CompleteAffordance>,
    pub truth: Vec<CompleteAffordance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub grid: usize,
    pub model: MetricsReport,
    /// The same frames scored against a predictor that always answers
    /// "straight only", the floor any trained model must clear.
    pub always_straight: MetricsReport,
}

pub fn compute_world(cfg: &PipelineConfig) -> Result<RoadGraph> {
    generate_world(derive_seed(cfg.seed, "world"), &cfg.world)
}

pub fn compute_drives(cfg: &PipelineConfig, world: &RoadGraph) -> Result<Vec<DriveRecord>> {
    let base = derive_seed(cfg.seed, "drives");
    (0..cfg.drives.count)
        .map(|d| {
            let run_id = format!("d{d:02}");
            let trajectory = simulate_drive(
                world,
                &world.route_edges,
                &cfg.drives.noise,
                derive_seed(base, &run_id),
                &run_id,
            )?;
            // The last pose has no future and cannot be annotated; stop
            // captures one short of it.
            let frames = (0..trajectory.poses.len().saturating_sub(1))
                .step_by(cfg.drives.frame_stride)
                .map(|i| Frame {
                    frame_id: format!("{run_id}_p{i:05}"),
                    pose_index: i,
                })
                .collect();
            Ok(DriveRecord { trajectory, frames })
        })
        .collect()
}

pub fn compute_segmentation(
    cfg: &PipelineConfig,
    drives: &[DriveRecord],
) -> Result<Vec<SegmentationRecord>> {
    drives
        .iter()
        .map(|rec| {
            let run_id = rec.trajectory.run_id.clone();
            let series = estimate_angular_speed(&rec.trajectory)?;
            let mut model_cfg = cfg.hdphmm.model.clone();
            model_cfg.seed = derive_seed(cfg.seed, &format!("hdphmm_{run_id}"));
            let fit_out = fit(&series, &model_cfg)?;
            let sequence = semantic_relabel(&fit_out, cfg.hdphmm.straight_band);
            Ok(SegmentationRecord {
                run_id,
                occupied_states: fit_out.occupied_states,
                emission_means: fit_out.emission_means,
                sequence,
            })
        })
        .collect()
}

/// Drive indices used for training (the rest are held out).
pub fn training_drives(cfg: &PipelineConfig) -> std::ops::Range<usize> {
    0..cfg.drives.count - cfg.drives.holdout
}

pub fn compute_annotations(
    cfg: &PipelineConfig,
    drives: &[DriveRecord],
    segmentation: &[SegmentationRecord],
) -> Result<AnnotationSet> {
    if segmentation.len() != drives.len() {
        return Err(Error::InvalidConfig(format!(
            "{} segmentation records for {} drives",
            segmentation.len(),
            drives.len()
        )));
    }
    let train_range = training_drives(cfg);
    let mut by_frame_id: HashMap<&str, FrameRef> = HashMap::new();
    for d in train_range.clone() {
        for f in &drives[d].frames {
            by_frame_id.insert(
                f.frame_id.as_str(),
                FrameRef {
                    drive: d,
                    pose_index: f.pose_index,
                },
            );
        }
    }
    let inputs: Vec<_> = train_range
        .map(|d| {
            (
                drives[d].trajectory.clone(),
                segmentation[d].sequence.clone(),
                drives[d].frames.clone(),
            )
        })
        .collect();
    let outcome = build_dataset(&cfg.camera, &inputs, cfg.annotation.max_dist);
    let frame_refs = outcome
        .annotations
        .iter()
        .map(|a| by_frame_id[a.frame_id.as_str()])
        .collect();
    Ok(AnnotationSet {
        annotations: outcome.annotations,
        frame_refs,
        skipped: outcome.skipped,
    })
}

fn render_ref(
    cfg: &PipelineConfig,
    world: &RoadGraph,
    drives: &[DriveRecord],
    r: FrameRef,
) -> Image {
    render_frame(
        &cfg.camera,
        world,
        &drives[r.drive].trajectory.poses[r.pose_index],
    )
}

pub fn compute_training(
    cfg: &PipelineConfig,
    world: &RoadGraph,
    drives: &[DriveRecord],
    set: &AnnotationSet,
) -> Result<Checkpoint> {
    let mut net_cfg = cfg.net.clone();
    net_cfg.seed = derive_seed(cfg.seed, "net");
    let mut sampler_cfg = cfg.sampler.clone();
    sampler_cfg.seed = derive_seed(cfg.seed, "sampler");
    let out = train(
        &set.annotations,
        |i| Ok(render_ref(cfg, world, drives, set.frame_refs[i])),
        &net_cfg,
        &sampler_cfg,
    )?;
    Ok(Checkpoint {
        params: out.params,
        net: net_cfg,
        sampler: sampler_cfg,
        steps_run: out.steps_run,
        diverged_at: out.diverged_at,
        loss_totals: out.loss_history.iter().map(|w| w.total).collect(),
    })
}

pub fn compute_predictions(
    cfg: &PipelineConfig,
    world: &RoadGraph,
    drives: &[DriveRecord],
    checkpoint: &Checkpoint,
) -> Result<PredictionSet> {
    let path = SmoothedPath::from_route(world, &world.route_edges, TURN_RADIUS)?;
    let mut predictions = Vec::new();
    let mut poses = Vec::new();
    for d in training_drives(cfg).end..cfg.drives.count {
        for f in &drives[d].frames {
            let pose = drives[d].trajectory.poses[f.pose_index];
            let img = render_frame(&cfg.camera, world, &pose);
            predictions.push(infer_full(
                &checkpoint.params,
                &img,
                &checkpoint.net,
                &f.frame_id,
            )?);
            poses.push((f.frame_id.clone(), pose));
        }
    }
    let truth = ground_truth_for_frames(world, &path, &cfg.camera, &poses, cfg.annotation.max_dist);
    Ok(PredictionSet { predictions, truth })
}

/// The presence-only predictor that answers "straight" for every frame.
pub fn always_straight_predictions(truth: &[CompleteAffordance]) -> Vec<CompleteAffordance> {
    truth
        .iter()
        .map(|t| {
            let mut aff = CompleteAffordance {
                frame_id: t.frame_id.clone(),
                classes: Default::default(),
            };
            aff.classes[crate::hdphmm::Action::Straight.index()].present = true;
            aff.classes[crate::hdphmm::Action::Straight.index()].score = 1.0;
            aff
        })
        .collect()
}

pub fn compute_metrics(cfg: &PipelineConfig, set: &PredictionSet) -> Result<MetricsArtifact> {
    let grid = cfg.eval_grid();
    let model = evaluate(&set.predictions, &set.truth, grid)?;
    let baseline = always_straight_predictions(&set.truth);
    let always_straight = evaluate(&baseline, &set.truth, grid)?;
    Ok(MetricsArtifact {
        grid,
        model,
        always_straight,
    })
}

fn wrap<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

fn run_stages(cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<MetricsArtifact> {
    let ws = cfg.workspace.as_path();
    let t0 = Instant::now();

    let (world, drives) = wrap("gen", || {
        let world = compute_world(cfg)?;
        write_json(&ws.join(WORLD_FILE), &world)?;
        manifest.record(ws, "world", WORLD_FILE)?;
        let drives = compute_drives(cfg, &world)?;
        write_json(&ws.join(DRIVES_FILE), &drives)?;
        manifest.record(ws, "drives", DRIVES_FILE)?;
        Ok((world, drives))
    })?;
    let frames: usize = drives.iter().map(|d| d.frames.len()).sum();
    eprintln!(
        "[gen] {} junctions, {} drives, {} frames ({:.1}s)",
        world.junctions.len(),
        drives.len(),
        frames,
        t0.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let segmentation = wrap("segment", || {
        let segmentation = compute_segmentation(cfg, &drives)?;
        write_json(&ws.join(SEGMENTATION_FILE), &segmentation)?;
        manifest.record(ws, "segmentation", SEGMENTATION_FILE)?;
        Ok(segmentation)
    })?;
    eprintln!(
        "[segment] occupied states per drive: {:?} ({:.1}s)",
        segmentation
            .iter()
            .map(|s| s.occupied_states)
            .collect::<Vec<_>>(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let annotations = wrap("annotate", || {
        let set = compute_annotations(cfg, &drives, &segmentation)?;
        write_json(&ws.join(ANNOTATIONS_FILE), &set)?;
        manifest.record(ws, "annotations", ANNOTATIONS_FILE)?;
        Ok(set)
    })?;
    eprintln!(
        "[annotate] {} frames labeled, {} skipped ({:.1}s)",
        annotations.annotations.len(),
        annotations.skipped,
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let checkpoint = wrap("train", || {
        let ckpt = compute_training(cfg, &world, &drives, &annotations)?;
        write_json(&ws.join(CHECKPOINT_FILE), &ckpt)?;
        manifest.record(ws, "checkpoint", CHECKPOINT_FILE)?;
        Ok(ckpt)
    })?;
    eprintln!(
        "[train] {} steps, diverged_at {:?}, last windowed loss {:?} ({:.1}s)",
        checkpoint.steps_run,
        checkpoint.diverged_at,
        checkpoint.loss_totals.last(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let predictions = wrap("infer", || {
        let set = compute_predictions(cfg, &world, &drives, &checkpoint)?;
        write_json(&ws.join(PREDICTIONS_FILE), &set)?;
        manifest.record(ws, "predictions", PREDICTIONS_FILE)?;
        Ok(set)
    })?;
    eprintln!(
        "[infer] {} held-out frames ({:.1}s)",
        predictions.predictions.len(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let metrics = wrap("eval", || {
        let metrics = compute_metrics(cfg, &predictions)?;
        write_json(&ws.join(METRICS_FILE), &metrics)?;
        manifest.record(ws, "metrics", METRICS_FILE)?;
        write_text(&ws.join(METRICS_TEXT_FILE), &render_report(&metrics.model))?;
        manifest.record(ws, "metrics", METRICS_TEXT_FILE)?;
        Ok(metrics)
    })?;
    eprintln!(
        "[eval] direction accuracy {:.3} vs always-straight {:.3} ({:.1}s, total {:.1}s)",
        metrics.model.direction_accuracy,
        metrics.always_straight.direction_accuracy,
        t.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64()
    );

    Ok(metrics)
}

/// Run every stage into `cfg.workspace`. On a stage failure the partial
/// manifest is still written and the error names the stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.workspace).map_err(|e| Error::Stage {
        stage: "gen",
        source: Box::new(Error::Format {
            path: cfg.workspace.clone(),
            detail: e.to_string(),
        }),
    })?;
    let mut manifest = Manifest::default();
    let run = run_stages(cfg, &mut manifest);
    let saved = manifest.save(&cfg.workspace);
    run?;
    saved?;
    Ok(manifest)
}

/// Reload the prediction set and recompute metrics; used by the `eval`
/// subcommand and handy for tests.
pub fn eval_from_files(cfg: &PipelineConfig) -> Result<MetricsArtifact> {
    let set: PredictionSet = read_json(&cfg.workspace.join(PREDICTIONS_FILE))?;
    compute_metrics(cfg, &set)
}
