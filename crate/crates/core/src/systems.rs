//! Test systems shipped with the tool.

use crate::config::{load_config_str, ConfigError, LoadedConfig};

macro_rules! system {
    ($name:literal) => {
        ($name, include_str!(concat!("../systems/", $name, ".json")))
    };
}

pub const BUILTIN: &[(&str, &str)] = &[
    system!("cantor"),
    system!("half"),
    system!("diag_affine"),
    system!("triangular_affine"),
    system!("nonlinear_triangular"),
    system!("quadratic"),
    system!("conformal_pair"),
    system!("bad_ratio"),
    system!("cantor4"),
    system!("gtc_family"),
    system!("cantor_family"),
];

pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn load_builtin(name: &str) -> Result<LoadedConfig, ConfigError> {
    let text = builtin_text(name).ok_or_else(|| ConfigError::UnknownSystem(name.to_string()))?;
    load_config_str(text)
}
