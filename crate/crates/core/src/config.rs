//! The experiment file: one JSON document with a section per pipeline
//! stage. Unknown keys are rejected with their full key path, and every
//! resolved leaf records whether it came from the user, a published
//! setting, or a local default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::ViewSamplerConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::interpret::InterpretConfig;
use crate::losses::LossConfig;
use crate::prototypes::PrototypeConfig;
use crate::signal::ingest::DatasetKind;
use crate::signal::{SyntheticGenConfig, Task};
use crate::train::{PretrainConfig, TrainConfig};

/// Environment variable naming the default dataset root.
pub const DATA_ROOT_ENV: &str = "PROTOMM_DATA_ROOT";

/// File name of the resolved config inside a run directory.
pub const RESOLVED_NAME: &str = "config.json";
pub const ORIGINS_NAME: &str = "config_origins.json";

/// Leaves whose defaults are the published training recipe.
const PUBLISHED_KEYS: &[&str] = &[
    "augmentation.num_views",
    "augmentation.specs",
    "encoder.kernel_size",
    "encoder.stride",
    "encoder.embed_dim",
    "encoder.block_layout",
    "loss.alpha",
    "training.learning_rate",
    "training.weight_decay",
    "training.batch_size",
    "training.max_epochs",
    "training.wall_clock_budget_hours",
    "evaluation.composition",
    "interpret.k",
    "interpret.top_k",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root for `ingest`; falls back to `PROTOMM_DATA_ROOT`.
    pub root: Option<PathBuf>,
    pub dataset: Option<DatasetKind>,
    pub task: Task,
    pub synthetic: SyntheticGenConfig,
}

impl DataConfig {
    pub fn resolved_root(&self) -> Option<PathBuf> {
        self.root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub augmentation: ViewSamplerConfig,
    pub encoder: EncoderConfig,
    pub prototypes: PrototypeConfig,
    pub loss: LossConfig,
    pub training: TrainConfig,
    pub evaluation: ProbeConfig,
    pub interpret: InterpretConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Paper,
    Default,
    User,
}

pub type Origins = BTreeMap<String, Origin>;

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Rejects keys of `user` absent from the default layout. Objects whose
/// default is an empty map are free-form and not descended into.
fn check_keys(user: &Value, layout: &Value, prefix: &str) -> Result<()> {
    if let (Value::Object(u), Value::Object(l)) = (user, layout) {
        for (k, v) in u {
            let path = join(prefix, k);
            match l.get(k) {
                None => {
                    return Err(Error::Config {
                        path,
                        message: "unknown key".into(),
                    })
                }
                Some(inner) => check_keys(v, inner, &path)?,
            }
        }
    }
    Ok(())
}

fn leaves(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, inner) in map {
                leaves(inner, &join(prefix, k), out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn user_sets(user: &Value, path: &str) -> bool {
    let mut cur = user;
    for part in path.split('.') {
        match cur.get(part) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

fn prefixed(res: Result<()>, prefix: &str) -> Result<()> {
    res.map_err(|e| match e {
        Error::Config { path, message } if !path.starts_with(prefix) => Error::Config {
            path: join(prefix, &path),
            message,
        },
        other => other,
    })
}

impl ExperimentConfig {
    /// Parses a config document; absent keys take their defaults.
    pub fn from_json(text: &str) -> Result<(Self, Origins)> {
        let user: Value = serde_json::from_str(text)?;
        if !user.is_object() {
            return Err(Error::Config {
                path: String::new(),
                message: "config must be a JSON object".into(),
            });
        }
        let layout = serde_json::to_value(Self::default())?;
        check_keys(&user, &layout, "")?;
        let cfg: Self = serde_path_to_error::deserialize(&user).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        let origins = cfg.origins(&user)?;
        Ok((cfg, origins))
    }

    pub fn load(path: &Path) -> Result<(Self, Origins)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Origin of every resolved leaf given the document the user wrote.
    pub fn origins(&self, user: &Value) -> Result<Origins> {
        let mut keys = Vec::new();
        leaves(&serde_json::to_value(self)?, "", &mut keys);
        Ok(keys
            .into_iter()
            .map(|k| {
                let origin = if user_sets(user, &k) {
                    Origin::User
                } else if PUBLISHED_KEYS.contains(&k.as_str()) {
                    Origin::Paper
                } else {
                    Origin::Default
                };
                (k, origin)
            })
            .collect())
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            training: self.training.clone(),
            loss: self.loss.clone(),
            prototypes: self.prototypes.clone(),
            encoder: self.encoder.clone(),
            augmentation: self.augmentation.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        prefixed(self.data.synthetic.validate(), "data.synthetic")?;
        self.pretrain_config().validate().map_err(|e| match e {
            Error::LayerCount { computed, expected } => Error::Config {
                path: "encoder.block_layout".into(),
                message: format!("layout has {computed} weighted layers, expected {expected}"),
            },
            other => other,
        })?;
        self.evaluation.validate()?;
        self.interpret.validate()?;
        if self.interpret.k > self.prototypes.count {
            return Err(Error::Config {
                path: "interpret.k".into(),
                message: format!("exceeds prototypes.count = {}", self.prototypes.count),
            });
        }
        Ok(())
    }

    /// Writes the resolved config and its origins into `dir`.
    pub fn persist(&self, origins: &Origins, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(RESOLVED_NAME, serde_json::to_string_pretty(self)?)?;
        write(ORIGINS_NAME, serde_json::to_string_pretty(origins)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_path(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_is_all_defaults() {
        let (cfg, origins) = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(origins["training.learning_rate"], Origin::Paper);
        assert_eq!(origins["prototypes.count"], Origin::Default);
        assert!(origins.values().all(|o| *o != Origin::User));
    }

    #[test]
    fn every_published_key_exists() {
        let (_, origins) = ExperimentConfig::from_json("{}").unwrap();
        for k in PUBLISHED_KEYS {
            assert!(origins.contains_key(*k), "{k}");
        }
    }

    #[test]
    fn user_values_are_marked() {
        let (cfg, origins) =
            ExperimentConfig::from_json(r#"{"loss": {"alpha": 0.25}, "training": {"seed": 7}}"#).unwrap();
        assert_eq!(cfg.loss.alpha, 0.25);
        assert_eq!(cfg.training.seed, 7);
        assert_eq!(origins["loss.alpha"], Origin::User);
        assert_eq!(origins["training.seed"], Origin::User);
    }

    #[test]
    fn alpha_out_of_range_names_its_key() {
        assert_eq!(err_path(r#"{"loss": {"alpha": 1.5}}"#), "loss.alpha");
    }

    #[test]
    fn unknown_keys_name_their_path() {
        assert_eq!(err_path(r#"{"trainig": {}}"#), "trainig");
        assert_eq!(err_path(r#"{"training": {"lr": 1}}"#), "training.lr");
        assert_eq!(err_path(r#"{"data": {"synthetic": {"states": 3}}}"#), "data.synthetic.states");
    }

    #[test]
    fn type_errors_name_their_path() {
        assert_eq!(err_path(r#"{"training": {"batch_size": "big"}}"#), "training.batch_size");
    }

    #[test]
    fn nested_validation_is_prefixed() {
        assert_eq!(err_path(r#"{"data": {"synthetic": {"n_latent_states": 1}}}"#), "data.synthetic.n_latent_states");
        assert_eq!(err_path(r#"{"encoder": {"block_layout": [1, 1]}}"#), "encoder.block_layout");
        assert_eq!(err_path(r#"{"prototypes": {"count": 4}}"#), "interpret.k");
    }

    #[test]
    fn persisted_config_round_trips() {
        let (cfg, origins) = ExperimentConfig::from_json(r#"{"encoder": {"embed_dim": 32}}"#).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.persist(&origins, dir.path()).unwrap();
        let (back, _) = ExperimentConfig::load(&dir.path().join(RESOLVED_NAME)).unwrap();
        assert_eq!(back, cfg);
        let o: Origins = serde_json::from_str(&std::fs::read_to_string(dir.path().join(ORIGINS_NAME)).unwrap()).unwrap();
        assert_eq!(o["encoder.embed_dim"], Origin::User);
    }
}
