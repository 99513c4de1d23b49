//! Run configuration.
//!
//! Settings are layered: built-in defaults, then a preset, then a TOML config
//! file, then command-line flags. The file uses flat sections (`[run]`,
//! `[optimizer]`, `[schedule]`, `[model]`, `[data]`); every key is unique
//! across sections and has a flag of the same name (`weight_decay` ->
//! `--weight-decay`). A run manifest (`manifest.json`) is also accepted as a
//! config file and reproduces the run it describes.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Activation, ModelKind, ModelSpec};
use crate::optim::{KoalaHyper, RMode, Schedule, ScheduleKind, Variant, DEFAULT_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[value(name = "koala_pp")]
    KoalaPp,
    #[value(name = "koala_pp_ns")]
    KoalaPpNs,
    #[value(name = "koala_v")]
    KoalaV,
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn is_kalman(self) -> bool {
        matches!(self, Self::KoalaPp | Self::KoalaPpNs | Self::KoalaV)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Sym,
    Ns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RModeName {
    Ema,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Constant,
    Multistep,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Mlp,
    #[value(name = "logistic_regression")]
    LogisticRegression,
    #[value(name = "quadratic_bowl")]
    QuadraticBowl,
    Rosenbrock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    #[value(name = "two_moons")]
    TwoMoons,
    #[value(name = "gaussian_blobs")]
    GaussianBlobs,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Preset {
    #[value(name = "cifar10-style")]
    #[serde(rename = "cifar10-style")]
    Cifar10Style,
    #[value(name = "cifar100-style")]
    #[serde(rename = "cifar100-style")]
    Cifar100Style,
    #[value(name = "lm-style")]
    #[serde(rename = "lm-style")]
    LmStyle,
}

/// One layer of settings; `None` means "inherit from the layer below".
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    // [run]
    /// Hyperparameter preset applied beneath the config file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Run several seeds in parallel, each into `<out>/seed-<s>`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Emit per-step diagnostics rows.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    // [optimizer]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Process-noise variance Q.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// Initial uncertainty std; v_1 = sigma0^2 H_1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_mode: Option<RModeName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_fixed: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,

    // [schedule]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleName>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<u32>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Cosine horizon; defaults to `epochs`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_epochs: Option<u32>,

    // [model]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelName>,
    /// Hidden layer widths of the MLP.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bowl_dim: Option<usize>,
    /// Ratio of largest to smallest bowl curvature (geometric spacing).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bowl_condition: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rosenbrock_dim: Option<usize>,

    // [data]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blob_std: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fraction: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl Settings {
    /// `self` with every field that `top` sets replaced.
    pub fn overlay(mut self, top: &Settings) -> Settings {
        overlay!(self, top;
            preset, optimizer, epochs, batch_size, seed, seeds, diagnostics, out,
            lr, q, sigma0, variant, r_mode, r_alpha, r_fixed, eps, weight_decay,
            momentum, beta1, beta2, adam_eps,
            schedule, milestones, gamma, total_epochs,
            model, hidden, activation, bowl_dim, bowl_condition, rosenbrock_dim,
            dataset, n_samples, noise, centers, blob_std, data_path, label_column, val_fraction,
        );
        self
    }

    pub fn defaults() -> Settings {
        Settings {
            preset: None,
            optimizer: Some(OptimizerKind::KoalaPp),
            epochs: Some(30),
            batch_size: Some(32),
            seed: Some(42),
            seeds: None,
            diagnostics: Some(false),
            out: Some(PathBuf::from("runs/latest")),
            lr: Some(1.0),
            q: Some(0.1),
            sigma0: Some(0.1),
            variant: Some(VariantName::Sym),
            r_mode: Some(RModeName::Ema),
            r_alpha: Some(0.9),
            r_fixed: Some(1.0),
            eps: Some(DEFAULT_EPS),
            weight_decay: Some(0.0),
            momentum: Some(0.9),
            beta1: Some(0.9),
            beta2: Some(0.999),
            adam_eps: Some(1e-8),
            schedule: Some(ScheduleName::Constant),
            milestones: Some(vec![]),
            gamma: Some(0.1),
            total_epochs: None,
            model: Some(ModelName::Mlp),
            hidden: Some(vec![16]),
            activation: Some(ActivationName::Tanh),
            bowl_dim: Some(50),
            bowl_condition: Some(10.0),
            rosenbrock_dim: Some(2),
            dataset: Some(DatasetName::TwoMoons),
            n_samples: Some(400),
            noise: Some(0.1),
            centers: Some(3),
            blob_std: Some(0.5),
            data_path: None,
            label_column: Some("label".into()),
            val_fraction: Some(0.2),
        }
    }

    /// Hyperparameter presets. They only set defaults; the underlying runs are
    /// desk scale.
    pub fn preset(preset: Preset) -> Settings {
        match preset {
            Preset::Cifar10Style => Settings {
                sigma0: Some(0.1),
                q: Some(0.1),
                lr: Some(1.0),
                weight_decay: Some(5e-4),
                schedule: Some(ScheduleName::Multistep),
                milestones: Some(vec![100, 150]),
                gamma: Some(0.1),
                ..Settings::default()
            },
            Preset::Cifar100Style => Settings {
                sigma0: Some(0.2),
                q: Some(0.2),
                lr: Some(2.0),
                weight_decay: Some(5e-4),
                ..Settings::default()
            },
            Preset::LmStyle => Settings {
                sigma0: Some(0.1),
                q: Some(0.1),
                lr: Some(2e-3),
                weight_decay: Some(1e-4),
                ..Settings::default()
            },
        }
    }

    /// Parses a TOML config file, or the `settings` object of a run manifest
    /// when the file ends in `.json`.
    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text)?;
            let settings = manifest
                .get("settings")
                .ok_or_else(|| Error::Config(format!("{}: no `settings` object in manifest", path.display())))?;
            return serde_json::from_value(settings.clone())
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())));
        }
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Settings, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let mut flat = toml::Table::new();
        for (key, value) in table {
            match value {
                toml::Value::Table(section) => {
                    if !["run", "optimizer", "schedule", "model", "data"].contains(&key.as_str()) {
                        return Err(format!("unknown section [{key}]"));
                    }
                    for (k, v) in section {
                        if flat.insert(k.clone(), v).is_some() {
                            return Err(format!("key `{k}` set twice"));
                        }
                    }
                }
                other => {
                    if flat.insert(key.clone(), other).is_some() {
                        return Err(format!("key `{key}` set twice"));
                    }
                }
            }
        }
        Settings::deserialize(toml::Value::Table(flat)).map_err(|e| e.to_string())
    }

    /// Defaults, then the preset named anywhere in `layers`, then `layers` in order.
    pub fn resolve_layers(layers: &[Settings]) -> Settings {
        let user = layers.iter().fold(Settings::default(), |acc, l| acc.overlay(l));
        let mut base = Settings::defaults();
        if let Some(p) = user.preset {
            base = base.overlay(&Settings::preset(p));
        }
        base.overlay(&user)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons { n: usize, noise: f64 },
    GaussianBlobs { n: usize, centers: usize, std: f64 },
    Csv { path: PathBuf, label_column: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineHyper {
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

/// Fully resolved, validated run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub optimizer: OptimizerKind,
    pub koala: KoalaHyper,
    pub baseline: BaselineHyper,
    pub schedule: Schedule,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub val_fraction: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub diagnostics: bool,
    pub out: PathBuf,
}

fn need<T: Clone>(value: &Option<T>, key: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

impl RunConfig {
    /// Resolves fully layered settings (see [`Settings::resolve_layers`]).
    pub fn from_settings(s: &Settings) -> Result<RunConfig> {
        let optimizer = need(&s.optimizer, "optimizer")?;
        let epochs = need(&s.epochs, "epochs")?;
        if epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }

        let variant = match (optimizer, need(&s.variant, "variant")?) {
            (OptimizerKind::KoalaPpNs, _) | (_, VariantName::Ns) => Variant::Asymmetric,
            _ => Variant::Symmetric,
        };
        let r_mode = match need(&s.r_mode, "r_mode")? {
            RModeName::Ema => RMode::Ema {
                alpha: need(&s.r_alpha, "r_alpha")?,
            },
            RModeName::Fixed => RMode::Fixed {
                r: need(&s.r_fixed, "r_fixed")?,
            },
        };
        let weight_decay = need(&s.weight_decay, "weight_decay")?;
        let koala = KoalaHyper {
            q: need(&s.q, "q")?,
            sigma0: need(&s.sigma0, "sigma0")?,
            r_mode,
            variant,
            eps: need(&s.eps, "eps")?,
            weight_decay,
        };
        koala.validate().map_err(|e| Error::Config(e.to_string()))?;

        let base_lr = need(&s.lr, "lr")?;
        let schedule = Schedule {
            kind: match need(&s.schedule, "schedule")? {
                ScheduleName::Constant => ScheduleKind::Constant,
                ScheduleName::Multistep => ScheduleKind::Multistep {
                    milestones: need(&s.milestones, "milestones")?,
                    gamma: need(&s.gamma, "gamma")?,
                },
                ScheduleName::Cosine => ScheduleKind::Cosine {
                    total_epochs: s.total_epochs.unwrap_or(epochs),
                },
            },
            base_lr,
        };
        schedule.validate().map_err(|e| Error::Config(e.to_string()))?;

        let dataset = match need(&s.dataset, "dataset")? {
            DatasetName::TwoMoons => DatasetSpec::TwoMoons {
                n: need(&s.n_samples, "n_samples")?,
                noise: need(&s.noise, "noise")?,
            },
            DatasetName::GaussianBlobs => DatasetSpec::GaussianBlobs {
                n: need(&s.n_samples, "n_samples")?,
                centers: need(&s.centers, "centers")?,
                std: need(&s.blob_std, "blob_std")?,
            },
            DatasetName::Csv => {
                let path = need(&s.data_path, "data_path")?;
                if !path.exists() {
                    return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
                }
                DatasetSpec::Csv {
                    path,
                    label_column: need(&s.label_column, "label_column")?,
                }
            }
        };

        let model = build_model(s, &dataset, weight_decay)?;

        let batch_size = need(&s.batch_size, "batch_size")?;
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let val_fraction = need(&s.val_fraction, "val_fraction")?;
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
        }

        Ok(RunConfig {
            preset: s.preset,
            optimizer,
            koala,
            baseline: BaselineHyper {
                momentum: need(&s.momentum, "momentum")?,
                beta1: need(&s.beta1, "beta1")?,
                beta2: need(&s.beta2, "beta2")?,
                adam_eps: need(&s.adam_eps, "adam_eps")?,
            },
            schedule,
            model,
            dataset,
            val_fraction,
            epochs,
            batch_size,
            seed: need(&s.seed, "seed")?,
            diagnostics: need(&s.diagnostics, "diagnostics")?,
            out: need(&s.out, "out")?,
        })
    }
}

/// Number of classes a dataset spec will produce, when known up front.
fn dataset_classes(dataset: &DatasetSpec) -> Option<usize> {
    match dataset {
        DatasetSpec::TwoMoons { .. } => Some(2),
        DatasetSpec::GaussianBlobs { centers, .. } => Some(*centers),
        DatasetSpec::Csv { .. } => None,
    }
}

fn build_model(s: &Settings, dataset: &DatasetSpec, weight_decay: f64) -> Result<ModelSpec> {
    let kind = match need(&s.model, "model")? {
        ModelName::Mlp => {
            let (width, classes) = match dataset {
                DatasetSpec::Csv { path, label_column } => {
                    let ds = crate::data::load_csv(path, label_column)?;
                    let classes = ds.targets().iter().fold(0.0_f64, |m, y| m.max(*y)) as usize + 1;
                    (ds.width(), classes.max(2))
                }
                other => (2, dataset_classes(other).unwrap_or(2)),
            };
            let mut widths = vec![width];
            widths.extend(need(&s.hidden, "hidden")?);
            widths.push(classes);
            let activation = match need(&s.activation, "activation")? {
                ActivationName::Tanh => Activation::Tanh,
                ActivationName::Relu => Activation::Relu,
            };
            ModelKind::Mlp { widths, activation }
        }
        ModelName::LogisticRegression => {
            if dataset_classes(dataset).is_some_and(|c| c != 2) {
                return Err(Error::Config("logistic_regression needs a two-class dataset".into()));
            }
            let features = match dataset {
                DatasetSpec::Csv { path, label_column } => crate::data::load_csv(path, label_column)?.width(),
                _ => 2,
            };
            ModelKind::LogisticRegression { features }
        }
        ModelName::QuadraticBowl => {
            let dim = need(&s.bowl_dim, "bowl_dim")?;
            let cond = need(&s.bowl_condition, "bowl_condition")?;
            if dim == 0 || !(cond >= 1.0 && cond.is_finite()) {
                return Err(Error::Config("bowl needs bowl_dim >= 1 and bowl_condition >= 1".into()));
            }
            ModelKind::QuadraticBowl {
                curvature: bowl_curvature(dim, cond),
                center: vec![0.0; dim],
            }
        }
        ModelName::Rosenbrock => ModelKind::Rosenbrock {
            dim: need(&s.rosenbrock_dim, "rosenbrock_dim")?,
        },
    };
    ModelSpec::new(kind, weight_decay).map_err(|e| Error::Config(e.to_string()))
}

/// Curvatures spaced geometrically from 1 to `condition`.
pub fn bowl_curvature(dim: usize, condition: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    (0..dim).map(|i| condition.powf(i as f64 / (dim - 1) as f64)).collect()
}
