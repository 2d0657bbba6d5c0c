//! Config, the training loop, evaluation and experiment presets.

pub mod ablation;
pub mod config;
pub mod controller;
pub mod efficiency;
pub mod eval;
pub mod metrics;
pub mod train;

pub use ablation::{ablation_suite, ablation_variants, AblationReport, ABLATION_PRESETS};
pub use config::{GroupConfig, RunConfig};
pub use controller::{build_learner, Controller, GroupEvent};
pub use efficiency::{efficiency_probe, EfficiencyConfig, EfficiencyRow};
pub use eval::{evaluate, play_match, zero_shot_eval, CrossPlayReport, MatchResult, Side, ZeroShotRow};
pub use metrics::{read_metrics, MetricsRow, METRICS_HEADER};
pub use train::{out_root, train, train_seed, LoopEvent, Session, TrainReport, OUT_ENV};
