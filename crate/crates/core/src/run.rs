//! Run configuration files and run directories.
//!
//! A run directory looks like
//!
//! ```text
//! run.toml              resolved configuration, every key spelled out
//! metrics.jsonl         header line, then one MetricsRecord per epoch
//! checkpoints/level-NNN checkpoint of each complexity level left behind by an expansion
//! best/                 checkpoint of the best validation accuracy so far
//! final/                checkpoint at the end of training
//! summary.txt           the report table
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{load_cifar10, synthetic_dataset, Dataset, Normalization, SyntheticKind};
use crate::error::{Error, Result};
use crate::expansion::ExpansionConfig;
use crate::model::{ModelConfig, SecnnModel};
use crate::optim::OptimizerKind;
use crate::report;
use crate::trainer::{fit_from, FitObserver, MetricsRecord, TrainConfig, TrainState};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const METRICS_SCHEMA: &str = "secnn.metrics";
pub const METRICS_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "run.toml";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Every knob of a run as a flat key/value table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// A CIFAR-10 directory or `synthetic:<kind>`.
    pub dataset: Option<String>,
    pub out: PathBuf,

    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f32,
    pub lr_patience: usize,
    pub dropout_conv: f32,
    pub dropout_fc: f32,
    pub l1_coeff: f32,
    pub hflip_probability: f32,
    pub slope_warmup_epochs: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,

    pub tau: f32,
    pub lambda_n: f32,
    pub channel_increment: usize,
    pub noise_coeff: f32,
    pub fisher_damping: f32,
    pub score_batch_size: usize,
    pub cooldown_epochs: usize,

    pub initial_blocks: usize,
    pub initial_channels: usize,
    pub block_capacity: usize,
    pub max_channels: Option<usize>,
    pub head_channels: usize,
    pub hidden_units: usize,
    pub leaky_slope: f32,
    pub bn_eps: f32,
    pub bn_momentum: f32,

    /// Class-balanced subset sizes; absent means the whole split.
    pub train_per_class: Option<usize>,
    pub val_per_class: Option<usize>,
    pub subset_seed: u64,
    pub synthetic_train_size: usize,
    pub synthetic_val_size: usize,
    pub synthetic_classes: usize,
    pub synthetic_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let e = ExpansionConfig::default();
        let m = ModelConfig::default();
        let (beta1, beta2, eps) = match OptimizerKind::default() {
            OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            OptimizerKind::Sgd => (0.9, 0.999, 1e-8),
        };
        Self {
            dataset: None,
            out: PathBuf::from("runs/secnn"),
            epochs: t.epochs,
            batch_size: t.batch_size,
            initial_lr: t.initial_lr,
            lr_patience: t.lr_patience,
            dropout_conv: t.dropout_conv,
            dropout_fc: t.dropout_fc,
            l1_coeff: t.l1_coeff,
            hflip_probability: t.hflip_probability,
            slope_warmup_epochs: t.slope_warmup_epochs,
            eval_batch_size: t.eval_batch_size,
            seed: t.seed,
            optimizer: "adam".into(),
            adam_beta1: beta1,
            adam_beta2: beta2,
            adam_eps: eps,
            tau: e.tau,
            lambda_n: e.lambda_n,
            channel_increment: e.channel_increment,
            noise_coeff: e.noise_coeff,
            fisher_damping: e.fisher_damping,
            score_batch_size: e.score_batch_size,
            cooldown_epochs: e.cooldown_epochs,
            initial_blocks: 3,
            initial_channels: 16,
            block_capacity: 10,
            max_channels: m.max_channels,
            head_channels: m.head_channels,
            hidden_units: m.hidden_units,
            leaky_slope: m.leaky_slope,
            bn_eps: m.bn_eps,
            bn_momentum: m.bn_momentum,
            train_per_class: None,
            val_per_class: None,
            subset_seed: 0,
            synthetic_train_size: 2000,
            synthetic_val_size: 500,
            synthetic_classes: 10,
            synthetic_seed: 0,
        }
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    /// Sets one key from its textual value. Values are read as TOML scalars
    /// when possible (`2e-3`, `true`, `"x"`) and as bare strings otherwise.
    /// Dashes in the key are treated as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let mut table: toml::Table = toml::Table::try_from(&*self).map_err(toml_error)?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.clone(), parsed);
        *self = table
            .try_into()
            .map_err(|e| Error::Config(format!("override `{key}`: {e}")))?;
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{assignment}`")))?;
        self.set(key, value.trim())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            head_channels: self.head_channels,
            hidden_units: self.hidden_units,
            leaky_slope: self.leaky_slope,
            dropout_conv: self.dropout_conv,
            dropout_fc: self.dropout_fc,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            max_channels: self.max_channels,
            ..ModelConfig::default()
        }
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        match self.optimizer.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            }),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            lr_patience: self.lr_patience,
            dropout_conv: self.dropout_conv,
            dropout_fc: self.dropout_fc,
            l1_coeff: self.l1_coeff,
            hflip_probability: self.hflip_probability,
            slope_warmup_epochs: self.slope_warmup_epochs,
            eval_batch_size: self.eval_batch_size,
            seed: self.seed,
            optimizer: self.optimizer_kind()?,
            expansion: ExpansionConfig {
                tau: self.tau,
                lambda_n: self.lambda_n,
                channel_increment: self.channel_increment,
                noise_coeff: self.noise_coeff,
                fisher_damping: self.fisher_damping,
                score_batch_size: self.score_batch_size,
                cooldown_epochs: self.cooldown_epochs,
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn dataset_source(&self) -> Result<DatasetSource> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (use a CIFAR-10 directory or synthetic:<kind>)".into()))?
            .parse()
    }

    /// Builds the initial model for this configuration.
    pub fn build_model(&self, image_channels: usize, image_size: usize, num_classes: usize) -> Result<SecnnModel> {
        let config = ModelConfig {
            image_channels,
            image_size,
            num_classes,
            ..self.model_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        SecnnModel::build_initial(self.initial_blocks, self.initial_channels, self.block_capacity, config, &mut rng)
    }
}

/// Where training data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Cifar10(PathBuf),
    Synthetic(SyntheticKind),
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("synthetic:") {
            Some(kind) => Ok(DatasetSource::Synthetic(kind.parse()?)),
            None => Ok(DatasetSource::Cifar10(PathBuf::from(s))),
        }
    }
}

/// Training and validation splits of a run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub train: Dataset,
    pub val: Dataset,
}

impl RunData {
    pub fn normalization(&self) -> Normalization {
        self.train.normalization
    }
}

fn split(all: &Dataset, range: std::ops::Range<usize>) -> Result<Dataset> {
    let idx: Vec<usize> = range.collect();
    let batch = all.batch(&idx);
    Dataset::new(batch.images, batch.labels, all.class_count, all.normalization)
}

/// Loads (and subsets) the datasets a configuration asks for.
pub fn load_run_data(config: &RunConfig) -> Result<RunData> {
    let (train, val) = match config.dataset_source()? {
        DatasetSource::Cifar10(dir) => {
            if !dir.exists() {
                return Err(Error::io(
                    &dir,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
                ));
            }
            load_cifar10(&dir)?
        }
        DatasetSource::Synthetic(kind) => {
            let n_train = config.synthetic_train_size;
            let n_val = config.synthetic_val_size;
            let all = synthetic_dataset(kind, n_train + n_val, config.synthetic_classes, config.synthetic_seed)?;
            (split(&all, 0..n_train)?, split(&all, n_train..n_train + n_val)?)
        }
    };
    let train = match config.train_per_class {
        Some(k) => train.subset(k, config.subset_seed)?,
        None => train,
    };
    let val = match config.val_per_class {
        Some(k) => val.subset(k, config.subset_seed.wrapping_add(1))?,
        None => val,
    };
    Ok(RunData { train, val })
}

#[derive(Serialize, Deserialize)]
struct MetricsHeader {
    schema: String,
    version: u32,
}

/// Persists a run as it trains.
pub struct RunDirectory {
    root: PathBuf,
    config: TrainConfig,
    normalization: Normalization,
    metrics: BufWriter<File>,
    levels: usize,
}

impl RunDirectory {
    /// Creates `root`, writes the resolved configuration and starts a fresh
    /// metrics log. Existing logs and checkpoints in `root` are replaced.
    pub fn create(root: &Path, run: &RunConfig, normalization: Normalization) -> Result<Self> {
        let config = run.train_config()?;
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let ckpt = root.join(CHECKPOINT_DIR);
        if ckpt.exists() {
            fs::remove_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        }
        fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let cfg_path = root.join(CONFIG_FILE);
        fs::write(&cfg_path, run.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;

        let log_path = root.join(METRICS_FILE);
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut metrics = BufWriter::new(file);
        let header = MetricsHeader {
            schema: METRICS_SCHEMA.into(),
            version: METRICS_VERSION,
        };
        write_json_line(&mut metrics, &log_path, &header)?;
        Ok(Self {
            root: root.to_path_buf(),
            config,
            normalization,
            metrics,
            levels: 0,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes the `final` checkpoint and the summary table.
    pub fn finish(&mut self, model: &SecnnModel, state: &TrainState) -> Result<String> {
        let log_path = self.root.join(METRICS_FILE);
        self.metrics.flush().map_err(|e| Error::io(&log_path, e))?;
        save_checkpoint(&self.root.join("final"), model, &self.config, &state.summary(), self.normalization)?;
        let table = report::report_run(&self.root)?;
        let path = self.root.join(SUMMARY_FILE);
        fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
        Ok(table)
    }
}

fn write_json_line<T: Serialize>(out: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

impl FitObserver for RunDirectory {
    fn on_epoch(&mut self, record: &MetricsRecord) -> Result<()> {
        let path = self.root.join(METRICS_FILE);
        write_json_line(&mut self.metrics, &path, record)?;
        self.metrics.flush().map_err(|e| Error::io(&path, e))
    }

    fn on_expansion(&mut self, previous: &SecnnModel, state: &TrainState, _record: &MetricsRecord) -> Result<()> {
        let dir = self
            .root
            .join(CHECKPOINT_DIR)
            .join(format!("level-{:03}", self.levels));
        self.levels += 1;
        save_checkpoint(&dir, previous, &self.config, &state.summary(), self.normalization)?;
        Ok(())
    }

    fn on_best(&mut self, model: &SecnnModel, state: &TrainState, _record: &MetricsRecord) -> Result<()> {
        save_checkpoint(&self.root.join("best"), model, &self.config, &state.summary(), self.normalization)?;
        Ok(())
    }
}

/// What a finished training run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub model: SecnnModel,
    pub state: TrainState,
    pub summary: String,
}

/// Loads data, builds the initial model, trains and persists everything
/// under `config.out`.
pub fn run_training(config: &RunConfig) -> Result<RunOutcome> {
    run_training_with(config, |_| {})
}

/// [`run_training`] with a callback after every epoch's record is logged.
pub fn run_training_with(config: &RunConfig, on_epoch: impl FnMut(&MetricsRecord)) -> Result<RunOutcome> {
    let train_config = config.train_config()?;
    let data = load_run_data(config)?;
    let (_, c, h, _) = data.train.images.dims4()?;
    let mut model = config.build_model(c, h, data.train.class_count)?;
    let dir = RunDirectory::create(&config.out, config, data.normalization())?;
    let mut observer = Progress { dir, on_epoch };
    let mut state = TrainState::new(&train_config);
    fit_from(&mut model, &data.train, &data.val, &train_config, &mut state, &mut observer)?;
    let summary = observer.dir.finish(&model, &state)?;
    Ok(RunOutcome { model, state, summary })
}

struct Progress<F> {
    dir: RunDirectory,
    on_epoch: F,
}

impl<F: FnMut(&MetricsRecord)> FitObserver for Progress<F> {
    fn on_epoch(&mut self, record: &MetricsRecord) -> Result<()> {
        self.dir.on_epoch(record)?;
        (self.on_epoch)(record);
        Ok(())
    }

    fn on_expansion(&mut self, previous: &SecnnModel, state: &TrainState, record: &MetricsRecord) -> Result<()> {
        self.dir.on_expansion(previous, state, record)
    }

    fn on_best(&mut self, model: &SecnnModel, state: &TrainState, record: &MetricsRecord) -> Result<()> {
        self.dir.on_best(model, state, record)
    }
}
