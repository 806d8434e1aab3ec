use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending run, frame, or file without a backtrace.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("trajectory {run_id}: needs at least 2 poses, got {count}")]
    TooFewPoses { run_id: String, count: usize },

    #[error("trajectory {run_id}: timestamp does not increase at pose {index}")]
    NonMonotoneTimestamp { run_id: String, index: usize },

    #[error("trajectory {run_id}: degenerate timestep at pose {index}")]
    DegenerateTimestep { run_id: String, index: usize },

    #[error("trajectory {run_id}: zero spacing between poses {index} and {next}", next = index + 1)]
    ZeroSpacing { run_id: String, index: usize },

    #[error(
        "trajectory {run_id}: route length {actual_m:.1} m differs from reference {reference_m:.1} m by more than 20%"
    )]
    RouteMismatch {
        run_id: String,
        reference_m: f64,
        actual_m: f64,
    },

    #[error("no trajectories given")]
    NoTrajectories,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("series too short: {len} positions, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("frame {frame_id}: no future pose projects into view")]
    FrameUnlabelable { frame_id: String },

    #[error("route is disconnected: {0}")]
    DisconnectedRoute(String),

    #[error("image {width}x{height} too small for a {view_w}x{view_h} view")]
    ImageTooSmall {
        width: usize,
        height: usize,
        view_w: usize,
        view_h: usize,
    },

    #[error("no valid crop position: {0}")]
    NoValidPosition(String),

    #[error("invalid label vector: {0}")]
    InvalidLabel(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("prediction/truth frame sets differ: {0}")]
    FrameMismatch(String),

    #[error("{path}: line {line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
