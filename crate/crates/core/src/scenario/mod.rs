//! Scenario configs, presets and the step loop that runs them.

mod config;
mod runner;

pub use config::{
    validate_config, ActivationConfig, AnalysisConfig, BackendConfig, BackendKind, ConfigError,
    ExportConfig, Injection, ItemSource, Platform, PopulationConfig, RunConfig, RuntimeConfig,
    Scenario, StoreSection, ValidConfig, DILEMMA_QUESTION,
};
pub use runner::{
    counterfactual_items, run_scenario, Exposure, RunError, RunReport, Simulation, StepReport,
};
