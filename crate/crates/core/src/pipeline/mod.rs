//! Training, evaluation, tiled inference and diagnostic figures.
//!
//! A training run writes into its output directory:
//!
//! - `run.toml`: the resolved [`RunConfig`];
//! - `metrics.tsv`: the metrics log, see [`checkpoint`];
//! - `checkpoints/step-NNNNNNN/`: checkpoint directories.

pub mod checkpoint;
mod config;
mod diagnose;
mod evaluate;
mod optim;
mod plot;
mod predict;
mod train;

pub use checkpoint::{
    latest_checkpoint, load_checkpoint, read_metrics_log, CheckpointMeta, HistoryEntry, MetricRecord,
};
pub use config::RunConfig;
pub use diagnose::{
    diagnose_hough, hough_diagnosis, DiagnoseConfig, DiagnoseOutput, HoughDiagnosis,
    PredictionSource,
};
pub use evaluate::{
    evaluate, evaluate_scenes, predict_samples, Constant, EvalReport, GroundTruth, SceneScore,
    Segmenter, IOU_THRESHOLD,
};
pub use optim::Adam;
pub use plot::{plot_metrics, plot_runs, RunLog};
pub use predict::{
    checkpoint_tiles, overlay, predict, predict_probabilities, tile_starts, PredictOutput, TileConfig,
    DEFAULT_OVERLAP,
};
pub use train::{train, train_on, TrainOutcome, Trainer, CONFIG_FILE, METRICS_FILE};
