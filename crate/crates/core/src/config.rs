//! JSON run configuration: system definition, optional family and measure,
//! and command parameters.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimators::ScaleRange;
use crate::ifs::{
    direct_product, DeclaredClass, DomainBox, DomainFlag, IfsError, IfsSpec, ParamShape, SmoothMap, TranslationalFamily,
};
use crate::measures::{BernoulliMeasure, MeasureError};
use crate::smallmat::MAX_DIM;
use crate::symbolic::MAX_ALPHABET;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("alphabet must have at least 2 symbols")]
    AlphabetTooSmall,
    #[error("{path}: {source}")]
    Ifs {
        path: String,
        #[source]
        source: IfsError,
    },
    #[error("measure: {0}")]
    Measure(#[from] MeasureError),
    #[error("unknown builtin system '{0}'")]
    UnknownSystem(String),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    #[serde(default)]
    pub flags: Vec<DomainFlag>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub components: Vec<String>,
    /// Rows of the Jacobian; derived symbolically when absent.
    #[serde(default)]
    pub jacobian: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DeclaredEntry {
    Class(DeclaredClass),
    Product { product: Vec<SystemConfig> },
}

/// An IFS on its own, as used for product factors.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dimension: usize,
    pub alphabet_size: usize,
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub maps: Vec<MapConfig>,
    #[serde(default)]
    pub declared_class: Vec<DeclaredEntry>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub radius: f64,
    #[serde(default)]
    pub shape: ParamShape,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub probabilities: Vec<f64>,
}

/// Command parameters; all optional, command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub depth: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub delta: Option<f64>,
    pub scales: Option<ScaleConfig>,
    pub r_grid: Option<Vec<f64>>,
    /// Pairs of eventually periodic codings, e.g. `["per:1", "per:2"]`.
    pub pairs: Option<Vec<[String; 2]>>,
    pub t0: Option<Vec<f64>>,
    pub n_draws: Option<usize>,
    pub cloud_size: Option<usize>,
    pub n_mc: Option<usize>,
    pub agreement_tol: Option<f64>,
    pub psi_bound: Option<f64>,
    pub grid: Option<usize>,
    pub sup_samples: Option<usize>,
    pub z_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleConfig {
    pub largest: f64,
    pub smallest: f64,
    pub n_scales: usize,
}

impl From<ScaleConfig> for ScaleRange {
    fn from(s: ScaleConfig) -> Self {
        ScaleRange {
            largest: s.largest,
            smallest: s.smallest,
            n_scales: s.n_scales,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub alphabet_size: usize,
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub maps: Vec<MapConfig>,
    #[serde(default)]
    pub declared_class: Vec<DeclaredEntry>,
    pub family: Option<FamilyConfig>,
    pub measure: Option<MeasureConfig>,
    #[serde(default)]
    pub run: RunParams,
}

impl RunConfig {
    fn system(&self) -> SystemConfig {
        SystemConfig {
            dimension: self.dimension,
            alphabet_size: self.alphabet_size,
            domain: self.domain.clone(),
            maps: self.maps.clone(),
            declared_class: self.declared_class.clone(),
        }
    }
}

/// A validated configuration with its constructed objects.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub raw: RunConfig,
    pub spec: IfsSpec,
    pub family: Option<TranslationalFamily>,
    pub measure: Option<BernoulliMeasure>,
    /// sha256 of the config text, hex encoded.
    pub hash: String,
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })
}

pub fn load_config_str(text: &str) -> Result<LoadedConfig, ConfigError> {
    let raw = parse_config(text)?;
    let spec = build_system(&raw.system(), "")?;
    let family = raw
        .family
        .as_ref()
        .map(|fc| {
            TranslationalFamily::new(spec.clone(), fc.radius, fc.shape).map_err(|source| ConfigError::Ifs {
                path: "family".into(),
                source,
            })
        })
        .transpose()?;
    let measure = raw
        .measure
        .as_ref()
        .map(|m| {
            if m.probabilities.len() != spec.alphabet_size() {
                return Err(schema(
                    "measure.probabilities",
                    format!(
                        "expected {} probabilities, got {}",
                        spec.alphabet_size(),
                        m.probabilities.len()
                    ),
                ));
            }
            Ok(BernoulliMeasure::new(m.probabilities.clone())?)
        })
        .transpose()?;
    Ok(LoadedConfig {
        raw,
        spec,
        family,
        measure,
        hash: config_hash(text),
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_config_str(&text)
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn build_system(cfg: &SystemConfig, prefix: &str) -> Result<IfsSpec, ConfigError> {
    let d = cfg.dimension;
    if d == 0 || d > MAX_DIM {
        return Err(schema(
            join(prefix, "dimension"),
            format!("must be in 1..={MAX_DIM}, got {d}"),
        ));
    }
    if cfg.alphabet_size < 2 {
        return Err(ConfigError::AlphabetTooSmall);
    }
    if cfg.alphabet_size > MAX_ALPHABET {
        return Err(schema(
            join(prefix, "alphabet_size"),
            format!("at most {MAX_ALPHABET} symbols are supported, got {}", cfg.alphabet_size),
        ));
    }

    let mut classes = Vec::new();
    let mut factors = None;
    for (k, entry) in cfg.declared_class.iter().enumerate() {
        match entry {
            DeclaredEntry::Class(c) => classes.push(*c),
            DeclaredEntry::Product { product } => {
                if factors.is_some() {
                    return Err(schema(
                        join(prefix, &format!("declared_class[{k}]")),
                        "at most one product entry",
                    ));
                }
                let path = join(prefix, &format!("declared_class[{k}].product"));
                let built = product
                    .iter()
                    .enumerate()
                    .map(|(m, c)| build_system(c, &format!("{path}[{m}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                factors = Some((path, built));
            }
        }
    }

    let spec = match factors {
        Some((path, built)) => {
            if !cfg.maps.is_empty() || cfg.domain.is_some() {
                return Err(schema(
                    join(prefix, "maps"),
                    "a product system takes its maps and domain from the factors",
                ));
            }
            let spec = direct_product(&built).map_err(|source| ConfigError::Ifs { path, source })?;
            if spec.dim() != d {
                return Err(schema(
                    join(prefix, "dimension"),
                    format!("factors give dimension {}, config says {d}", spec.dim()),
                ));
            }
            spec
        }
        None => {
            let domain_cfg = cfg
                .domain
                .as_ref()
                .ok_or_else(|| schema(join(prefix, "domain"), "missing field `domain`"))?;
            let domain = build_domain(domain_cfg, d, &join(prefix, "domain"))?;
            if cfg.maps.len() != cfg.alphabet_size {
                return Err(schema(
                    join(prefix, "maps"),
                    format!("alphabet_size is {} but {} maps are given", cfg.alphabet_size, cfg.maps.len()),
                ));
            }
            let maps = cfg
                .maps
                .iter()
                .enumerate()
                .map(|(i, m)| build_map(m, d, &join(prefix, &format!("maps[{i}]"))))
                .collect::<Result<Vec<_>, _>>()?;
            IfsSpec::new(maps, domain, classes.clone()).map_err(|source| ConfigError::Ifs {
                path: if prefix.is_empty() {
                    "system".into()
                } else {
                    prefix.to_string()
                },
                source,
            })?
        }
    };
    if spec.alphabet_size() != cfg.alphabet_size {
        return Err(schema(
            join(prefix, "alphabet_size"),
            format!("system has {} maps, config says {}", spec.alphabet_size(), cfg.alphabet_size),
        ));
    }
    Ok(spec)
}

fn build_domain(cfg: &DomainConfig, d: usize, path: &str) -> Result<DomainBox, ConfigError> {
    if cfg.min.len() != d || cfg.max.len() != d {
        return Err(schema(path, format!("min and max need {d} entries")));
    }
    DomainBox::new(cfg.min.clone(), cfg.max.clone())
        .map(|b| b.with_flags(cfg.flags.clone()))
        .map_err(|source| ConfigError::Ifs {
            path: path.to_string(),
            source,
        })
}

fn build_map(cfg: &MapConfig, d: usize, path: &str) -> Result<SmoothMap, ConfigError> {
    if cfg.components.len() != d {
        return Err(schema(
            join(path, "components"),
            format!("expected {d} components, got {}", cfg.components.len()),
        ));
    }
    let comps: Vec<&str> = cfg.components.iter().map(String::as_str).collect();
    let jac: Option<Vec<&str>> = match &cfg.jacobian {
        None => None,
        Some(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(schema(join(path, "jacobian"), format!("expected {d}x{d} rows")));
            }
            Some(rows.iter().flatten().map(String::as_str).collect())
        }
    };
    SmoothMap::parse(d, &comps, jac.as_deref()).map_err(|source| ConfigError::Ifs {
        path: path.to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANTOR: &str = r#"{
        "dimension": 1, "alphabet_size": 2,
        "domain": {"min": [0], "max": [1]},
        "maps": [{"components": ["x1/3"]}, {"components": ["x1/3 + 2/3"]}]
    }"#;

    #[test]
    fn cantor_theta() {
        let c = load_config_str(CANTOR).unwrap();
        assert!((c.spec.theta() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn single_map_rejected() {
        let text = r#"{"dimension": 1, "alphabet_size": 1, "domain": {"min": [0], "max": [1]},
            "maps": [{"components": ["x1/2"]}]}"#;
        let err = load_config_str(text).unwrap_err();
        assert_eq!(err.to_string(), "alphabet must have at least 2 symbols");
    }

    #[test]
    fn unknown_key_has_path() {
        let text = CANTOR.replace("\"max\": [1]", "\"max\": [1], \"colour\": 3");
        let err = load_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("domain") && err.contains("colour"), "{err}");
    }

    #[test]
    fn parse_error_names_map_and_position() {
        let text = CANTOR.replace("x1/3 + 2/3", "x1/3 + * 2");
        let err = load_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("maps[1]") && err.contains("position"), "{err}");
    }

    #[test]
    fn derived_jacobian_matches_given() {
        let given = r#"{"dimension": 2, "alphabet_size": 2, "domain": {"min": [0, 0], "max": [1, 1]},
            "maps": [
              {"components": ["0.3*x1 + 0.01*sin(x1)", "0.2*x1 + 0.25*x2"],
               "jacobian": [["0.3 + 0.01*cos(x1)", "0"], ["0.2", "0.25"]]},
              {"components": ["0.3*x1 + 0.5", "0.3*x2 + 0.5"]}
            ]}"#;
        let derived = given.replace(r#","jacobian": [["0.3 + 0.01*cos(x1)", "0"], ["0.2", "0.25"]]"#, "");
        let a = load_config_str(given).unwrap();
        let b = load_config_str(&derived).unwrap();
        for x in [[0.1, 0.7], [0.9, 0.2]] {
            let ja = a.spec.jacobian(0, &x).unwrap();
            let jb = b.spec.jacobian(0, &x).unwrap();
            assert!(ja.sub(&jb).max_abs() < 1e-15);
        }
    }

    #[test]
    fn product_config() {
        let text = r#"{"dimension": 2, "alphabet_size": 2, "declared_class": ["affine", {"product": [
            {"dimension": 1, "alphabet_size": 2, "domain": {"min": [0], "max": [1]},
             "maps": [{"components": ["x1/3"]}, {"components": ["x1/3 + 2/3"]}]},
            {"dimension": 1, "alphabet_size": 2, "domain": {"min": [0], "max": [1]},
             "maps": [{"components": ["x1/2"]}, {"components": ["x1/2 + 1/2"]}]}
        ]}]}"#;
        let c = load_config_str(text).unwrap();
        assert_eq!(c.spec.dim(), 2);
        assert_eq!(c.spec.factors().len(), 2);
        assert!(c.spec.declared_class().contains(&DeclaredClass::Product));
    }

    #[test]
    fn measure_length_checked() {
        let text = CANTOR.replace("\"maps\"", "\"measure\": {\"probabilities\": [1.0]}, \"maps\"");
        let err = load_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("measure.probabilities"), "{err}");
    }
}
