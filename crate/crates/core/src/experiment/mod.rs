//! End-to-end pipeline: preprocess, oversample, train and evaluate, and the
//! method × classifier × seed comparison grid.

mod compare;
mod stages;

pub use compare::{cmd_compare, lower_median, CellFailure, GridMetadata, GridResult};
pub use stages::{
    cmd_oversample, cmd_preprocess, cmd_train_eval, read_synthetic_csv, split_digest, write_synthetic_csv, Counts,
    Outcome,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::classifiers::{ClassifierConfigs, ClassifierError, ClassifierKind};
use crate::data::{BlobFixture, DataError, Normalization, Schema};
use crate::metrics::{MetricsError, DEFAULT_THRESHOLD};
use crate::oversample::{GanConfig, Method, OversampleError, SmoteConfig, TvaeConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    DataFile {
        path: PathBuf,
        #[source]
        source: DataError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error("leakage guard: {0}")]
    Leakage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Oversample(#[from] OversampleError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Everything one run needs. Every field has a default, so `{}` is a valid
/// config that runs the blob fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Labeled CSV. Without it the generated blob fixture is used.
    pub dataset: Option<PathBuf>,
    pub schema: Schema,
    pub fixture: BlobFixture,
    pub deduplicate: bool,
    pub train_fraction: f64,
    /// Columns to min-max scale. Unset means `amount_time` for a dataset
    /// file and `none` for the fixture.
    pub normalization: Option<Normalization>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub classifiers: Vec<ClassifierKind>,
    pub n_synthetic: usize,
    pub threshold: f64,
    pub smote: SmoteConfig,
    pub gan: GanConfig,
    pub tvae: TvaeConfig,
    pub classifier_params: ClassifierConfigs,
    /// Rows from another generator, used by the `external` method.
    pub external_synthetic: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            schema: Schema::Creditcard,
            fixture: BlobFixture::default(),
            deduplicate: false,
            train_fraction: 0.8,
            normalization: None,
            seeds: vec![1, 2, 3],
            methods: Method::BUILTIN.to_vec(),
            classifiers: ClassifierKind::ALL.to_vec(),
            n_synthetic: 5000,
            threshold: DEFAULT_THRESHOLD,
            smote: SmoteConfig::default(),
            gan: GanConfig::default(),
            tvae: TvaeConfig::default(),
            classifier_params: ClassifierConfigs::default(),
            external_synthetic: None,
            out_dir: PathBuf::from("forge-out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.external_synthetic].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.classifiers.is_empty() {
            return bad("classifiers must not be empty");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if !distinct(&self.methods) || !distinct(&self.classifiers) || !distinct(&self.seeds) {
            return bad("methods, classifiers and seeds must not repeat");
        }
        if self.methods.contains(&Method::External) && self.external_synthetic.is_none() {
            return bad("method external needs external_synthetic");
        }
        for p in [&self.dataset, &self.external_synthetic].into_iter().flatten() {
            if !p.exists() {
                return Err(ExperimentError::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                });
            }
        }
        Ok(())
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization.clone().unwrap_or(match self.dataset {
            Some(_) => Normalization::AmountTime,
            None => Normalization::None,
        })
    }

    /// Same config restricted to one seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}

fn distinct<T: Eq + std::hash::Hash>(items: &[T]) -> bool {
    items.iter().collect::<std::collections::HashSet<_>>().len() == items.len()
}

/// Where every artifact of a run lives under `out_dir`.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }

    pub fn train_csv(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("train.csv")
    }

    pub fn test_csv(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("test.csv")
    }

    pub fn scaler_json(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("scaler.json")
    }

    pub fn counts_json(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("counts.json")
    }

    pub fn method_dir(&self, seed: u64, m: Method) -> PathBuf {
        self.seed_dir(seed).join("oversample").join(m.name())
    }

    pub fn synthetic_csv(&self, seed: u64, m: Method) -> PathBuf {
        self.method_dir(seed, m).join("synthetic.csv")
    }

    pub fn trace_csv(&self, seed: u64, m: Method) -> PathBuf {
        self.method_dir(seed, m).join("trace.csv")
    }

    pub fn checkpoint(&self, seed: u64, m: Method) -> PathBuf {
        self.method_dir(seed, m).join("checkpoint.json")
    }

    pub fn report_json(&self, seed: u64, m: Method, c: ClassifierKind) -> PathBuf {
        self.seed_dir(seed).join("reports").join(format!("{}__{}.json", m.name(), c.name()))
    }

    pub fn compare_dir(&self) -> PathBuf {
        self.root.join("compare")
    }
}

pub(crate) fn create_dir(p: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(p).map_err(|source| ExperimentError::Io {
        path: p.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(dir) = p.parent() {
        create_dir(dir)?;
    }
    fs::write(p, bytes).map_err(|source| ExperimentError::Io {
        path: p.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<(), ExperimentError> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact types serialize");
    s.push('\n');
    write_file(p, s)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T, ExperimentError> {
    if !p.exists() {
        return Err(ExperimentError::MissingArtifact(p.to_path_buf()));
    }
    let text = fs::read_to_string(p).map_err(|source| ExperimentError::Io {
        path: p.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
        path: p.to_path_buf(),
        source,
    })
}
