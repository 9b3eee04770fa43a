//! Command-line pipeline around `robust_doa_core`: configuration, mask
//! files, JSON/CSV artifacts with manifests, and the stage commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod maskfile;
pub mod output;

pub use commands::Context;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Bundled configurations by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("desk-baseline", include_str!("../configs/desk_baseline.toml")),
    ("desk-qstar", include_str!("../configs/desk_qstar.toml")),
    ("desk-optimize", include_str!("../configs/desk_optimize.toml")),
    ("fine-baseline", include_str!("../configs/fine_baseline.toml")),
    ("fine-qstar", include_str!("../configs/fine_qstar.toml")),
    ("fine-optimize", include_str!("../configs/fine_optimize.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
