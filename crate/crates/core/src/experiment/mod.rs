//! Experiment configuration and the `run` driver shared by the CLI and the
//! canned recipes.

mod recipes;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codecs::CodecPolicy;
use crate::data::{label_histogram, load_idx, Dataset, LabelHistogram, Partitioner, SynthSpec};
use crate::error::{Error, Result};
use crate::federation::{centralized_evaluation, initialize, next, FedConfig, Participation};
use crate::metrics::{RunLog, RunSummary};
use crate::models::ModelSpec;
use crate::rng::RngStream;

pub use recipes::{
    exp1_compression, exp1_config, exp2_config, exp2_noniid, DataChoice, PairOutcome,
    RecipeOverrides,
};

pub const DATA_DIR_ENV: &str = "FEDSIM_DATA_DIR";
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub spec: SynthSpec,
    pub test_per_class: usize,
    /// Seed for data generation; the run seed when absent.
    #[serde(default)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Keep only the first `n` training examples of every class.
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
}

impl IdxSource {
    /// The standard MNIST file names inside `dir`.
    pub fn mnist_in(dir: &Path) -> Self {
        IdxSource {
            train_images: dir.join(MNIST_TRAIN_IMAGES),
            train_labels: dir.join(MNIST_TRAIN_LABELS),
            test_images: dir.join(MNIST_TEST_IMAGES),
            test_labels: dir.join(MNIST_TEST_LABELS),
            train_per_class: None,
            test_per_class: None,
        }
    }

    pub fn exists(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    Idx(IdxSource),
}

fn one() -> f32 {
    1.0
}

fn every_round() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub model: ModelSpec,
    pub partitioner: Partitioner,
    pub num_clients: usize,
    pub rounds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_fraction: Option<f64>,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub client_lr: f32,
    #[serde(default = "one")]
    pub server_lr: f32,
    pub seed: u64,
    #[serde(default)]
    pub codec: CodecPolicy,
    /// Evaluate on the test set every this many rounds (and always after the
    /// last round).
    #[serde(default = "every_round")]
    pub eval_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn participation(&self) -> Result<Participation> {
        match (self.clients_per_round, self.client_fraction) {
            (Some(m), None) => Ok(Participation::Count(m)),
            (None, Some(c)) => Ok(Participation::Fraction(c)),
            (None, None) => Err(Error::InvalidConfig(
                "one of clients_per_round or client_fraction is required".into(),
            )),
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "clients_per_round and client_fraction are mutually exclusive".into(),
            )),
        }
    }

    pub fn fed_config(&self) -> Result<FedConfig> {
        let fed = FedConfig {
            rounds: self.rounds,
            participation: self.participation()?,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            client_lr: self.client_lr,
            server_lr: self.server_lr,
            seed: self.seed,
            codec: self.codec,
        };
        fed.validate()?;
        Ok(fed)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.fed_config()?;
        if self.num_clients == 0 {
            return Err(Error::InvalidConfig(
                "num_clients must be at least 1".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        self.participation()?.clients_per_round(self.num_clients)?;
        Ok(())
    }

    /// Relative IDX paths are taken relative to `data_dir`.
    pub fn resolve_paths(&mut self, data_dir: Option<&Path>) {
        if let (DatasetSource::Idx(src), Some(dir)) = (&mut self.dataset, data_dir) {
            for p in [
                &mut src.train_images,
                &mut src.train_labels,
                &mut src.test_images,
                &mut src.test_labels,
            ] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    /// Training and test sets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.dataset {
            DatasetSource::Synthetic(src) => {
                let stream = RngStream::new(src.data_seed.unwrap_or(self.seed)).named("data");
                src.spec.generate_split(&stream, src.test_per_class)?
            }
            DatasetSource::Idx(src) => {
                let mut train = load_idx(&src.train_images, &src.train_labels)?;
                let mut test = load_idx(&src.test_images, &src.test_labels)?;
                if let Some(n) = src.train_per_class {
                    train = train.take_per_class(n)?;
                }
                if let Some(n) = src.test_per_class {
                    test = test.take_per_class(n)?;
                }
                (train, test)
            }
        };
        for (name, d) in [("training", &train), ("test", &test)] {
            if d.input_dim() != self.model.input_dim() {
                return Err(Error::InvalidConfig(format!(
                    "{name} data has {} features but the model expects {}",
                    d.input_dim(),
                    self.model.input_dim()
                )));
            }
            if d.num_classes() > self.model.num_classes() {
                return Err(Error::InvalidConfig(format!(
                    "{name} data has {} classes but the model has {}",
                    d.num_classes(),
                    self.model.num_classes()
                )));
            }
        }
        Ok((train, test))
    }

    pub fn partition_stream(&self) -> RngStream {
        RngStream::new(self.seed).named("partition")
    }

    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub log: RunLog,
    pub histogram: LabelHistogram,
}

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PARTITION_JSONL: &str = "partition.jsonl";

/// Partitions the training data and returns the per-client histogram.
pub fn partition_report(config: &ExperimentConfig) -> Result<LabelHistogram> {
    config.validate()?;
    let (train, _) = config.load_data()?;
    let partition =
        config
            .partitioner
            .apply(&train, config.num_clients, &config.partition_stream())?;
    Ok(label_histogram(&train, &partition))
}

/// `initialize` then `rounds` × `next`, evaluating on the test set per
/// cadence. Writes the run files when `out_dir` is set.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    config.validate()?;
    let fed = config.fed_config()?;
    let spec = config.model;
    let (train, test) = config.load_data()?;
    let partition =
        config
            .partitioner
            .apply(&train, config.num_clients, &config.partition_stream())?;
    let histogram = label_histogram(&train, &partition);

    let mut state = initialize(&spec, &fed)?;
    let mut log = RunLog::new();
    for _ in 0..fed.rounds {
        let (next_state, mut metrics) = next(&state, &spec, &train, &partition, &fed)?;
        state = next_state;
        if state.round % config.eval_every == 0 || state.round == fed.rounds {
            let eval = centralized_evaluation(&spec, &state.params, &test)?;
            metrics.eval_loss = Some(eval.loss);
            metrics.eval_accuracy = Some(eval.accuracy);
        }
        log.record(metrics)?;
    }

    let summary = RunSummary::from_log(
        config.to_json_value()?,
        &log,
        started.elapsed().as_secs_f64(),
    );
    let outcome = RunOutcome {
        summary,
        log,
        histogram,
    };
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, &outcome)?;
    }
    Ok(outcome)
}

pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    outcome.log.write_csv(&dir.join(METRICS_CSV))?;
    outcome.log.write_jsonl(&dir.join(METRICS_JSONL))?;
    write_json(&dir.join(SUMMARY_JSON), &outcome.summary)?;
    outcome.histogram.write_jsonl(&dir.join(PARTITION_JSONL))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
