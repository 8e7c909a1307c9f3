//! TOML experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nnc_core::quantizer::{ActivationSource, QuantizationScheme, ScalePolicy};
use serde::Deserialize;

/// Keys from training-oriented configs that are accepted and ignored.
const TRAINING_KEYS: &[&str] = &[
    "optimizer",
    "epochs",
    "batch_size",
    "learning_rate",
    "loss",
    "train",
    "training",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    #[default]
    PerLayer,
    PerNetwork,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default)]
    pub policy: Policy,
    /// Fractional bits for the per-network policy.
    pub n: Option<i32>,
    /// Manual activation formats for the per-layer policy, by node id.
    pub manual: Option<BTreeMap<String, i32>>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            width: default_width(),
            policy: Policy::default(),
            n: None,
            manual: None,
        }
    }
}

fn default_width() -> u32 {
    16
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub scheme: SchemeConfig,
    pub calibration: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Upper bound on the number of dataset samples evaluated.
    pub iterations: Option<usize>,
    #[serde(flatten)]
    extra: BTreeMap<String, toml::Value>,
}

impl ExperimentConfig {
    /// Parse `text`; relative paths resolve against `base`. Returns the
    /// config and warnings for ignored keys.
    pub fn parse(text: &str, base: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        let mut warnings = Vec::new();
        for key in cfg.extra.keys() {
            if TRAINING_KEYS.contains(&key.as_str()) {
                warnings.push(format!("ignoring training key `{key}`"));
            } else {
                return Err(ConfigError::Invalid(format!("unknown key `{key}`")));
            }
        }
        if ![8, 9, 16].contains(&cfg.scheme.width) {
            return Err(ConfigError::Invalid(format!(
                "scheme.width must be 8, 9 or 16, got {}",
                cfg.scheme.width
            )));
        }
        match cfg.scheme.policy {
            Policy::PerNetwork if cfg.scheme.n.is_none() => {
                return Err(ConfigError::Invalid("scheme.policy = \"per-network\" needs scheme.n".into()))
            }
            Policy::PerNetwork if cfg.scheme.manual.is_some() => {
                return Err(ConfigError::Invalid(
                    "scheme.manual only applies to the per-layer policy".into(),
                ))
            }
            _ => {}
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.model);
        resolve(&mut cfg.output_dir);
        cfg.calibration.as_mut().map(resolve);
        cfg.dataset.as_mut().map(resolve);
        Ok((cfg, warnings))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn quantization_scheme(&self) -> QuantizationScheme {
        let s = &self.scheme;
        match (s.policy, &s.manual) {
            (Policy::PerNetwork, _) => QuantizationScheme::per_network(s.width, s.n.unwrap_or(0)),
            (Policy::PerLayer, None) => QuantizationScheme::per_layer(s.width),
            (Policy::PerLayer, Some(map)) => QuantizationScheme {
                width: s.width,
                policy: ScalePolicy::PerLayerDerived,
                activation_source: ActivationSource::Manual(map.clone()),
            },
        }
    }

    /// Whether quantization needs activation statistics.
    pub fn needs_calibration(&self) -> bool {
        self.scheme.policy == Policy::PerLayer && self.scheme.manual.is_none()
    }
}

/// `path` must exist; a missing file is a configuration error.
pub fn require(path: &Path, key: &str) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{key} `{}` does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn full_config() {
        let (cfg, warnings) = parse(
            r#"
model = "m.json"
dataset = "/abs/data.json"
iterations = 10
epochs = 30
[scheme]
width = 16
policy = "per-network"
n = 9
"#,
        )
        .unwrap();
        assert_eq!(cfg.model, Path::new("/base/m.json"));
        assert_eq!(cfg.dataset.as_deref(), Some(Path::new("/abs/data.json")));
        assert_eq!(cfg.output_dir, Path::new("/base/out"));
        assert_eq!(cfg.quantization_scheme(), QuantizationScheme::per_network(16, 9));
        assert_eq!(warnings, ["ignoring training key `epochs`"]);
        assert!(!cfg.needs_calibration());
    }

    #[test]
    fn defaults_and_manual() {
        let (cfg, _) = parse("model = \"m.json\"\n[scheme.manual]\ninput = 7\n").unwrap();
        assert_eq!(cfg.scheme.width, 16);
        assert!(matches!(
            cfg.quantization_scheme().activation_source,
            ActivationSource::Manual(ref m) if m["input"] == 7
        ));
        assert!(parse("model = \"m.json\"").unwrap().0.needs_calibration());
    }

    #[test]
    fn schema_errors() {
        for bad in [
            "",
            "model = 3",
            "model = \"m\"\nbogus = 1",
            "model = \"m\"\n[scheme]\nwidth = 12",
            "model = \"m\"\n[scheme]\npolicy = \"per-network\"",
            "model = \"m\"\n[scheme]\nwidht = 8",
        ] {
            assert!(parse(bad).is_err(), "{bad:?}");
        }
    }
}
