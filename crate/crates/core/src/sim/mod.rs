//! Scenario runner: configuration, presets, execution and run manifests.

mod config;
mod manifest;
pub mod presets;
mod run;

pub use config::{
    AccessScheme, AllocationConfig, CoverageConfig, LuminaireConfig, Metric, MulticellConfig,
    OfdmConfig, PairingConfig, PowerMapConfig, ReceiverConfig, ScenarioConfig, StrategyName,
    SweepConfig, UsersConfig, Violation,
};
pub use manifest::RunManifest;
pub use run::{generate, prepare, run, Output, RunError, RunOptions};
