use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_friedman_like, gen_madelon_like, load_csv, MadelonSpec, PartitionStrategy, VflDataset};
use crate::error::{Error, Result};
use crate::protocol::{GateInit, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FedsdgFs,
    OriginalGate,
    AllFeatures,
    GiniFilter,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FedsdgFs => "fedsdg_fs",
            Method::OriginalGate => "original_gate",
            Method::AllFeatures => "all_features",
            Method::GiniFilter => "gini_filter",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedsdg_fs" => Ok(Method::FedsdgFs),
            "original_gate" => Ok(Method::OriginalGate),
            "all_features" => Ok(Method::AllFeatures),
            "gini_filter" => Ok(Method::GiniFilter),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected fedsdg_fs, original_gate, all_features or gini_filter)"
            ))),
        }
    }
}

/// `secure` runs the encrypted protocol; `plaintext` runs the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Secure,
    Plaintext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Inproc,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Madelon {
        n_informative: usize,
        #[serde(default)]
        n_redundant: usize,
        #[serde(default)]
        n_noisy: usize,
        n_samples: usize,
        #[serde(default = "default_class_sep")]
        class_sep: f64,
        #[serde(default = "default_two")]
        n_classes: usize,
        #[serde(default = "default_two")]
        clusters_per_class: usize,
    },
    Friedman {
        n_noisy: usize,
        n_samples: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
    },
}

fn default_class_sep() -> f64 {
    2.0
}
fn default_two() -> usize {
    2
}
fn default_noise() -> f64 {
    1.0
}
fn default_label() -> String {
    "label".into()
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let m = MadelonSpec::default();
        DatasetSpec::Madelon {
            n_informative: m.n_informative,
            n_redundant: m.n_redundant,
            n_noisy: m.n_noisy,
            n_samples: m.n_samples,
            class_sep: m.class_sep,
            n_classes: m.n_classes,
            clusters_per_class: m.clusters_per_class,
        }
    }
}

impl DatasetSpec {
    /// Generates or loads the dataset. Relative CSV paths resolve against
    /// `base`.
    pub fn build(&self, seed: u64, base: Option<&Path>) -> Result<VflDataset> {
        match self {
            DatasetSpec::Madelon {
                n_informative,
                n_redundant,
                n_noisy,
                n_samples,
                class_sep,
                n_classes,
                clusters_per_class,
            } => gen_madelon_like(
                &MadelonSpec {
                    n_informative: *n_informative,
                    n_redundant: *n_redundant,
                    n_noisy: *n_noisy,
                    n_samples: *n_samples,
                    class_sep: *class_sep,
                    n_classes: *n_classes,
                    clusters_per_class: *clusters_per_class,
                },
                seed,
            ),
            DatasetSpec::Friedman {
                n_noisy,
                n_samples,
                noise_std,
            } => gen_friedman_like(*n_noisy, *n_samples, *noise_std, seed),
            DatasetSpec::Csv { path, label_column } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                load_csv(&p, label_column, None)
            }
        }
    }
}

/// One experiment: data, split, method and the training hyperparameters
/// under `[train]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    /// Seed for data generation, the train/test split and the partition.
    /// Defaults to `train.seed`.
    pub data_seed: Option<u64>,
    pub clients: usize,
    pub partition: PartitionStrategy,
    pub method: Method,
    pub engine: EngineKind,
    pub transport: TransportKind,
    pub test_fraction: f64,
    /// Features kept by `gini_filter`.
    pub gini_k: Option<usize>,
    /// Fraction of the training rows held out for early stopping when
    /// `train.patience` is set.
    pub validation_fraction: f64,
    /// Send only open embedding slots when predicting on the test split.
    pub predict_gated: bool,
    pub out_dir: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            dataset: DatasetSpec::default(),
            data_seed: None,
            clients: 2,
            partition: PartitionStrategy::Random,
            method: Method::FedsdgFs,
            engine: EngineKind::Secure,
            transport: TransportKind::Inproc,
            test_fraction: 0.2,
            gini_k: None,
            validation_fraction: 0.1,
            predict_gated: true,
            out_dir: None,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, reporting the dotted path of the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::load_unchecked(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without the cross-field checks, for callers that apply
    /// overrides and validate afterwards.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        parse_toml(&read(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.train.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.clients == 0 {
            return Err(Error::Config("clients: need at least one client".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction: {} is not in (0, 1)", self.test_fraction)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction: {} is not in (0, 1)",
                self.validation_fraction
            )));
        }
        if self.gini_k == Some(0) {
            return Err(Error::Config("gini_k: must keep at least one feature".into()));
        }
        if self.method == Method::GiniFilter && self.gini_k.is_none() {
            return Err(Error::Config("gini_k: required by method gini_filter".into()));
        }
        Ok(())
    }

    /// Training configuration after the method's adjustments.
    pub fn method_train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        match self.method {
            Method::FedsdgFs => {}
            Method::OriginalGate => {
                t.init = GateInit::Constant;
                t.pin_embedding_gates = true;
            }
            Method::AllFeatures | Method::GiniFilter => {
                t.lambda = 0.0;
                t.pin_feature_gates = true;
                t.pin_embedding_gates = true;
            }
        }
        t
    }
}

/// Input to `gen-data`: a dataset spec, a seed and an output CSV path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpecFile {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
}

impl DataSpecFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read(path)?)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner().message().trim()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_rejects_unknown_keys() {
        let cfg = ExperimentConfig::from_toml("method = \"all_features\"\n[train]\nseed = 4\n").unwrap();
        assert_eq!(cfg.method, Method::AllFeatures);
        assert_eq!(cfg.train.seed, 4);
        assert_eq!(cfg.data_seed(), 4);
        let err = ExperimentConfig::from_toml("[train]\nsigmaa = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("train"), "{err}");
        let err = ExperimentConfig::from_toml("[dataset]\nkind = \"madelon\"\nn_informative = 5\nn_samples = 10\nbogus = 1\n")
            .unwrap_err();
        assert!(err.to_string().contains("dataset"), "{err}");
        let err = ExperimentConfig::from_toml("clients = \"two\"\n").unwrap_err();
        assert!(err.to_string().contains("clients"), "{err}");
    }

    #[test]
    fn gini_filter_needs_k() {
        assert!(ExperimentConfig::from_toml("method = \"gini_filter\"\n").is_err());
        assert!(ExperimentConfig::from_toml("method = \"gini_filter\"\ngini_k = 3\n").is_ok());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn original_gate_is_fedsdg_with_constant_init_and_open_embeddings() {
        let base = ExperimentConfig::default();
        let og = ExperimentConfig {
            method: Method::OriginalGate,
            ..base.clone()
        };
        let mut expected = base.train.clone();
        expected.init = GateInit::Constant;
        expected.pin_embedding_gates = true;
        assert_eq!(og.method_train_config(), expected);
    }
}
