//! Named presets shipped with the binary.

use std::path::Path;

use crate::config::{parse_config_str, ConfigError, Overrides, RunConfig};

const PRESETS: &[(&str, &str)] = &[
    ("constant", include_str!("../scenarios/constant.json")),
    ("neg-k2-sine", include_str!("../scenarios/neg-k2-sine.json")),
    ("neg-k2-sine-jacobi", include_str!("../scenarios/neg-k2-sine-jacobi.json")),
    ("neg-k1-sine", include_str!("../scenarios/neg-k1-sine.json")),
    ("neg-k3-mixed", include_str!("../scenarios/neg-k3-mixed.json")),
    ("neg-2d-k2", include_str!("../scenarios/neg-2d-k2.json")),
    ("pos-k2-near-constant", include_str!("../scenarios/pos-k2-near-constant.json")),
    ("pos-k2-large", include_str!("../scenarios/pos-k2-large.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// `(name, description)` for every preset.
pub fn descriptions() -> Vec<(&'static str, String)> {
    PRESETS
        .iter()
        .map(|(name, src)| {
            let desc = serde_json::from_str::<serde_json::Value>(src)
                .ok()
                .and_then(|v| v.get("description").and_then(|d| d.as_str()).map(String::from))
                .unwrap_or_default();
            (*name, desc)
        })
        .collect()
}

pub fn load(name: &str, overrides: &Overrides) -> Option<Result<RunConfig, ConfigError>> {
    source(name).map(|src| parse_config_str(src, Path::new("."), name, overrides))
}
