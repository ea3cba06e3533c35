//! Experiment harness: JSON configuration, excitation datasets, closed-loop
//! servo episodes with trajectory logging, CSV export, and the CLI front end.

pub mod cli;
pub mod config;
pub mod csv_log;
pub mod dataset;
pub mod episode;

pub use cli::{build_estimator, cli_main};
pub use config::{
    build_gains, build_plant, build_region, DatasetConfig, EstimatorConfig, ExperimentConfig,
    GainsConfig, PlacementConfig, PlantConfig, PolicyConfig, TargetConfig,
};
pub use csv_log::{load_csv, parse_csv, save_csv, write_csv};
pub use dataset::{collect_dataset, load_dataset, save_dataset, Dataset, ExcitationPolicy, MotionRecord};
pub use episode::{
    bootstrap_jacobian, run_servo_episode, EpisodeStatus, Estimator, LogRow, TrajectoryLog,
};
