//! Configuration, optimisation, checkpoints and run artefacts.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod optim;
pub mod policy;
pub mod report;
pub mod stats;
pub mod trainer;

pub use checkpoint::{init_network, select_best, Checkpoint};
pub use config::{config_help, EvalConfig, Lcmt, RunConfig, CONFIG_KEYS};
pub use data::TrainingSet;
pub use optim::Adam;
pub use policy::DiffusionPolicy;
pub use stats::{channel_stats, stats_csv, ChannelStats};
pub use trainer::{
    action_mse, evaluate_checkpoint, metrics_csv, parse_metrics_csv, train, EpochMetrics, TrainOutcome,
    METRICS_CSV_HEADER,
};
