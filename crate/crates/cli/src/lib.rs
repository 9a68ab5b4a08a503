//! Front end for camforge: run configuration, scene files, heatmap rendering
//! and the `gen`, `explain`, `evaluate` and `channels` commands.

pub mod commands;
pub mod config;
pub mod render;
pub mod scene_io;

pub use commands::{cmd_channels, cmd_evaluate, cmd_explain, cmd_gen};
pub use config::{Backend, ConfigError, Method, RunConfig};
