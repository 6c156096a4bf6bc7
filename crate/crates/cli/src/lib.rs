//! Command-line orchestration of the stance pipeline: one run-configuration
//! file, one subcommand per stage, artifacts and provenance under the
//! configured output directory.

pub mod config;
pub mod stages;

pub use config::{validate_config, ConfigError, EffectiveConfig};
pub use stages::{run_command, Command, StageError};
