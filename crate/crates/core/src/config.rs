//! Declarative experiment descriptions (JSON).
//!
//! Method sections (`fedpm`, `qsgd`, `signsgd`, `sgld`, `none`) are optional
//! and fall back to defaults tuned for the desk-scale tasks. Relative paths
//! are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecParams;
use crate::data::SplitMode;
use crate::error::{Error, Result};
use crate::methods::{LocalHyper, QsgdParams, ResetSchedule, SignParams};
use crate::model::ModelKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fedpm,
    Qsgd,
    Signsgd,
    Sgld,
    /// Uncompressed float32 federated averaging.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Klms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        n_train: usize,
        n_test: usize,
        dim: usize,
        #[serde(default = "default_margin")]
        margin: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_margin() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default)]
    pub c_max: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Iid,
            c_max: None,
        }
    }
}

/// How KLMS blocks are laid out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Partitioning {
    /// Clients split by realized KL; the server merges and re-triggers.
    #[default]
    Adaptive,
    /// Constant blocks of `block_size`, never updated.
    Fixed { block_size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedPmConfig {
    pub prior: f64,
    pub reset: ResetSchedule,
    /// Probabilities are kept in `[eps, 1 - eps]` when used as scores or
    /// as the codec reference.
    pub eps: f64,
    /// Scale of the frozen random weights.
    pub init_gain: f64,
}

impl Default for FedPmConfig {
    fn default() -> Self {
        Self {
            prior: 1.0,
            reset: ResetSchedule::Never,
            eps: 1e-3,
            init_gain: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgldConfig {
    pub step: f64,
    /// Defaults to `step * clients`.
    pub server_lr: Option<f64>,
    /// Defaults to the value that makes the aggregate noise variance `2 * step`.
    pub noise_std: Option<f64>,
    /// Gaussian prior precision on the parameters.
    pub prior_precision: f64,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            server_lr: None,
            noise_std: None,
            prior_precision: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvgConfig {
    pub server_lr: f64,
}

impl Default for AvgConfig {
    fn default() -> Self {
        Self { server_lr: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub method: Method,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub dataset: DatasetSpec,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    pub clients: usize,
    pub participants: usize,
    pub rounds: u32,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub codec: CodecParams,
    #[serde(default)]
    pub partitioning: Partitioning,
    /// Local optimizer; defaults depend on the method.
    #[serde(default)]
    pub local: Option<LocalHyper>,
    #[serde(default)]
    pub fedpm: FedPmConfig,
    #[serde(default = "default_qsgd")]
    pub qsgd: QsgdParams,
    #[serde(default = "default_signsgd")]
    pub signsgd: SignParams,
    #[serde(default)]
    pub sgld: SgldConfig,
    #[serde(default)]
    pub none: AvgConfig,
    pub seed: u64,
    /// Output directory for `metrics.csv` and `summary.json`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_variant() -> Variant {
    Variant::Klms
}

fn default_model() -> ModelKind {
    ModelKind::Logistic
}

fn default_qsgd() -> QsgdParams {
    QsgdParams {
        levels: 1,
        server_lr: 1.0,
    }
}

fn default_signsgd() -> SignParams {
    SignParams {
        temperature: 0.01,
        server_lr: 0.01,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(origin, e.to_string()))
    }

    /// Reads, parses, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Synthetic { .. } => {}
            DatasetSpec::Csv { train, test } => {
                fix(train);
                fix(test);
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
        }
        if let Some(out) = &mut self.output {
            fix(out);
        }
    }

    /// Local optimizer in effect: the configured one, or 3 epochs (1 for
    /// Langevin) of batch-128 SGD at rate 0.1.
    pub fn local_hyper(&self) -> LocalHyper {
        self.local.clone().unwrap_or(LocalHyper {
            lr: 0.1,
            batch_size: 128,
            epochs: if self.method == Method::Sgld { 1 } else { 3 },
        })
    }

    pub fn sgld_server_lr(&self) -> f64 {
        self.sgld.server_lr.unwrap_or(self.sgld.step * self.clients as f64)
    }

    pub fn sgld_noise_std(&self) -> f64 {
        self.sgld.noise_std.unwrap_or_else(|| {
            crate::methods::SgldParams::calibrated_noise_std(self.sgld.step, self.sgld_server_lr(), self.participants)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be > 0, got {v}")))
            }
        };
        if self.clients == 0 {
            return Err(Error::config("clients", "must be >= 1"));
        }
        if self.participants == 0 || self.participants > self.clients {
            return Err(Error::config(
                "participants",
                format!("must be in 1..={}, got {}", self.clients, self.participants),
            ));
        }
        if self.split.c_max == Some(0) {
            return Err(Error::config("split.c_max", "must be >= 1"));
        }
        match &self.dataset {
            DatasetSpec::Synthetic {
                n_train,
                n_test,
                dim,
                margin,
            } => {
                if *n_train < self.clients {
                    return Err(Error::config(
                        "dataset.n_train",
                        "must be at least the number of clients",
                    ));
                }
                if *n_test == 0 {
                    return Err(Error::config("dataset.n_test", "must be >= 1"));
                }
                if *dim == 0 {
                    return Err(Error::config("dataset.dim", "must be >= 1"));
                }
                if !(*margin >= 0.0 && margin.is_finite()) {
                    return Err(Error::config("dataset.margin", "must be >= 0"));
                }
            }
            DatasetSpec::Csv { train, test } => {
                check_file("dataset.train", train)?;
                check_file("dataset.test", test)?;
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                check_file("dataset.train_images", train_images)?;
                check_file("dataset.train_labels", train_labels)?;
                check_file("dataset.test_images", test_images)?;
                check_file("dataset.test_labels", test_labels)?;
            }
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return Err(Error::config("model.hidden", "must be >= 1"));
        }
        self.codec.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("codec.{path}"), message),
            other => other,
        })?;
        if let Partitioning::Fixed { block_size } = self.partitioning {
            if block_size == 0 || block_size > self.codec.max_block_size {
                return Err(Error::config(
                    "partitioning.block_size",
                    format!("must be in 1..={}, got {block_size}", self.codec.max_block_size),
                ));
            }
        }
        if let Some(local) = &self.local {
            local.validate("local")?;
        }
        match self.method {
            Method::Fedpm => {
                positive("fedpm.prior", self.fedpm.prior)?;
                positive("fedpm.init_gain", self.fedpm.init_gain)?;
                if !(self.fedpm.eps > 0.0 && self.fedpm.eps < 0.5) {
                    return Err(Error::config(
                        "fedpm.eps",
                        format!("must be in (0, 0.5), got {}", self.fedpm.eps),
                    ));
                }
                if let ResetSchedule::Every { every: 0 } = self.fedpm.reset {
                    return Err(Error::config("fedpm.reset.every", "must be >= 1"));
                }
            }
            Method::Qsgd => self.qsgd.validate()?,
            Method::Signsgd => self.signsgd.validate()?,
            Method::Sgld => {
                positive("sgld.step", self.sgld.step)?;
                positive("sgld.server_lr", self.sgld_server_lr())?;
                positive("sgld.noise_std", self.sgld_noise_std())?;
                if !(self.sgld.prior_precision >= 0.0 && self.sgld.prior_precision.is_finite()) {
                    return Err(Error::config("sgld.prior_precision", "must be >= 0"));
                }
                if self.variant == Variant::Baseline {
                    self.qsgd.validate()?;
                }
            }
            Method::None => {
                positive("none.server_lr", self.none.server_lr)?;
                if self.variant == Variant::Klms {
                    return Err(Error::config("variant", "method \"none\" only has a baseline variant"));
                }
            }
        }
        Ok(())
    }
}

fn check_file(field: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(field, format!("file not found: {}", path.display())))
    }
}
