//! Configuration, presets, run orchestration and oracle comparison for the `cri` binary.

pub mod compare;
pub mod config;
pub mod expr;
pub mod runner;
pub mod scenarios;

use std::path::Path;

use config::{parse_config, ConfigError, Overrides, RunConfig};

/// Loads `arg` as a config file, or as a preset name when no such file exists.
pub fn load_config(arg: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let path = Path::new(arg);
    if path.exists() {
        return parse_config(path, overrides);
    }
    scenarios::load(arg, overrides).unwrap_or_else(|| {
        Err(ConfigError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or preset (see list-scenarios)"),
        })
    })
}
