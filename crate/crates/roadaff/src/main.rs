//! Command-line front end. Configuration is layered: built-in defaults,
//! then `--config FILE`, then namespaced per-key flags (`--net.lr 0.002`),
//! then the dedicated `--seed` / `--workspace` globals.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use roadaff::artifacts::{
    read_json, write_json, write_text, ANNOTATIONS_FILE, CHECKPOINT_FILE, DRIVES_FILE,
    METRICS_FILE, METRICS_TEXT_FILE, PREDICTIONS_FILE, SEGMENTATION_FILE, WORLD_FILE,
};
use roadaff::config::{apply_override, PipelineConfig};
use roadaff::eval::render_report;
use roadaff::pipeline::{
    compute_annotations, compute_drives, compute_predictions, compute_segmentation,
    compute_training, compute_world, eval_from_files, run_pipeline, AnnotationSet, Checkpoint,
    DriveRecord, SegmentationRecord,
};
use roadaff::synthgen::RoadGraph;
use roadaff::{Error, Result};

/// Declares one optional string-valued flag per overridable config key,
/// named exactly like the key (`--net.lr 0.002`). Values are parsed by
/// [`apply_override`], so flag and file share one parser.
macro_rules! override_flags {
    ($($flag:literal => $field:ident),* $(,)?) => {
        #[derive(clap::Args)]
        struct Overrides {
            $(
                #[arg(long = $flag, global = true, value_name = "VALUE",
                      help_heading = "Config overrides", hide_short_help = true)]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut pairs = Vec::new();
                $(
                    if let Some(value) = &self.$field {
                        pairs.push(($flag, value.as_str()));
                    }
                )*
                pairs
            }
        }
    };
}

override_flags! {
    "world.junctions" => world_junctions,
    "world.leg_min" => world_leg_min,
    "world.leg_max" => world_leg_max,
    "world.stub_len" => world_stub_len,
    "world.road_width" => world_road_width,
    "drives.count" => drives_count,
    "drives.holdout" => drives_holdout,
    "drives.frame_stride" => drives_frame_stride,
    "drives.lateral_std" => drives_lateral_std,
    "drives.heading_std" => drives_heading_std,
    "drives.speed_std" => drives_speed_std,
    "hdphmm.gamma" => hdphmm_gamma,
    "hdphmm.alpha" => hdphmm_alpha,
    "hdphmm.kappa" => hdphmm_kappa,
    "hdphmm.truncation" => hdphmm_truncation,
    "hdphmm.iterations" => hdphmm_iterations,
    "hdphmm.burn_in" => hdphmm_burn_in,
    "hdphmm.straight_band" => hdphmm_straight_band,
    "annotation.max_dist" => annotation_max_dist,
    "sampler.straight_keep_ratio" => sampler_straight_keep_ratio,
    "sampler.mirror_prob" => sampler_mirror_prob,
    "net.lr" => net_lr,
    "net.iterations" => net_iterations,
    "net.rounds" => net_rounds,
    "net.batch_size" => net_batch_size,
    "net.positive_threshold" => net_positive_threshold,
    "net.max_dist" => net_max_dist,
    "eval.grid" => eval_grid,
}

#[derive(Parser)]
#[command(
    name = "roadaff",
    about = "Infer road affordances from vehicle trajectories and train a weakly supervised predictor",
    version
)]
struct Cli {
    /// TOML config file; missing keys fall back to built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; every module seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory all artifacts are read from and written to.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the road network and simulate the demonstration drives.
    Gen,
    /// Segment each drive's angular-speed series into driving actions.
    Segment,
    /// Project future poses through the camera into per-frame labels.
    Annotate,
    /// Train the multi-task predictor on the annotated frames.
    Train,
    /// Predict affordances for the held-out drives.
    Infer,
    /// Score predictions against ground truth.
    Eval {
        /// Also write per-class bar data (TSV) for plotting.
        #[arg(long)]
        report: bool,
    },
    /// Run every stage in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for (key, value) in cli.overrides.pairs() {
        apply_override(&mut cfg, key, value)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(ws) = &cli.workspace {
        cfg.workspace = ws.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn per_class_bars(metrics: &roadaff::pipeline::MetricsArtifact) -> String {
    let mut out = String::from("class\tprecision\trecall\taccuracy\tsupport\n");
    for (k, name) in roadaff::hdphmm::CLASSES.iter().enumerate() {
        let s = &metrics.model.per_class[k];
        out.push_str(&format!(
            "{name}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            s.precision, s.recall, s.accuracy, metrics.model.presence_support[k]
        ));
    }
    out
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ws = cfg.workspace.clone();
    let ensure_ws = || {
        std::fs::create_dir_all(&ws).map_err(|e| Error::Format {
            path: ws.clone(),
            detail: e.to_string(),
        })
    };

    match &cli.command {
        Command::Gen => {
            ensure_ws()?;
            let world = compute_world(&cfg)?;
            write_json(&ws.join(WORLD_FILE), &world)?;
            let drives = compute_drives(&cfg, &world)?;
            write_json(&ws.join(DRIVES_FILE), &drives)?;
            let frames: usize = drives.iter().map(|d| d.frames.len()).sum();
            eprintln!(
                "wrote {WORLD_FILE} ({} junctions) and {DRIVES_FILE} ({} drives, {frames} frames)",
                world.junctions.len(),
                drives.len()
            );
        }
        Command::Segment => {
            let drives: Vec<DriveRecord> = read_json(&ws.join(DRIVES_FILE))?;
            let segmentation = compute_segmentation(&cfg, &drives)?;
            write_json(&ws.join(SEGMENTATION_FILE), &segmentation)?;
            eprintln!(
                "wrote {SEGMENTATION_FILE} (occupied states per drive: {:?})",
                segmentation
                    .iter()
                    .map(|s| s.occupied_states)
                    .collect::<Vec<_>>()
            );
        }
        Command::Annotate => {
            let drives: Vec<DriveRecord> = read_json(&ws.join(DRIVES_FILE))?;
            let segmentation: Vec<SegmentationRecord> = read_json(&ws.join(SEGMENTATION_FILE))?;
            let set = compute_annotations(&cfg, &drives, &segmentation)?;
            write_json(&ws.join(ANNOTATIONS_FILE), &set)?;
            eprintln!(
                "wrote {ANNOTATIONS_FILE} ({} frames labeled, {} skipped)",
                set.annotations.len(),
                set.skipped
            );
        }
        Command::Train => {
            let world: RoadGraph = read_json(&ws.join(WORLD_FILE))?;
            let drives: Vec<DriveRecord> = read_json(&ws.join(DRIVES_FILE))?;
            let set: AnnotationSet = read_json(&ws.join(ANNOTATIONS_FILE))?;
            let ckpt = compute_training(&cfg, &world, &drives, &set)?;
            write_json(&ws.join(CHECKPOINT_FILE), &ckpt)?;
            eprintln!(
                "wrote {CHECKPOINT_FILE} ({} steps, diverged_at {:?})",
                ckpt.steps_run, ckpt.diverged_at
            );
        }
        Command::Infer => {
            let world: RoadGraph = read_json(&ws.join(WORLD_FILE))?;
            let drives: Vec<DriveRecord> = read_json(&ws.join(DRIVES_FILE))?;
            let ckpt: Checkpoint = read_json(&ws.join(CHECKPOINT_FILE))?;
            let set = compute_predictions(&cfg, &world, &drives, &ckpt)?;
            write_json(&ws.join(PREDICTIONS_FILE), &set)?;
            eprintln!(
                "wrote {PREDICTIONS_FILE} ({} held-out frames)",
                set.predictions.len()
            );
        }
        Command::Eval { report } => {
            let metrics = eval_from_files(&cfg)?;
            write_json(&ws.join(METRICS_FILE), &metrics)?;
            write_text(&ws.join(METRICS_TEXT_FILE), &render_report(&metrics.model))?;
            if *report {
                write_text(&ws.join("metrics_per_class.tsv"), &per_class_bars(&metrics))?;
            }
            println!("{}", render_report(&metrics.model));
            eprintln!(
                "direction accuracy {:.3} vs always-straight {:.3}",
                metrics.model.direction_accuracy, metrics.always_straight.direction_accuracy
            );
        }
        Command::Pipeline => {
            let manifest = run_pipeline(&cfg)?;
            eprintln!(
                "pipeline complete: {} artifacts in {}",
                manifest.entries.len(),
                ws.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Stage { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
