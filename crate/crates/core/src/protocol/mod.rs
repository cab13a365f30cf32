//! Incremental training protocol: task streams, training, evaluation and calibration.

mod ablation;
mod config;
mod eval;
mod experiment;
mod report;
mod state;
mod stream;

pub use ablation::{parse_toggles, run_ablation, AblationPlan, AblationRow, Sweep, Toggle};
pub use config::{default_tau_grid, parse_grid, Components, TrainConfig};
pub use eval::{
    calibrate_tau, calibration_confidences, calibration_score, decide, decide_batch,
    decide_from_probs, evaluate, evaluate_at, sample_scores, select_tau, Decision, MetricRecord,
    SampleScore,
};
pub use experiment::{train_static_ep2, Experiment, ProtocolKind};
pub use report::{metrics_table, per_class_table, write_jsonl, write_scores_csv, write_step_log};
pub use state::{ProtocolState, StepRecord};
pub use stream::{build_stream_ep1, build_stream_ep2, holdout_classes, Task, TaskStream};
