//! Datasets, client partitions and per-client label histograms.

mod idx;
mod partition;
mod synth;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use partition::{
    partition_iid, partition_label_skew, partition_quantity_skew, quantity_skew_sizes, Partitioner,
};
pub use synth::{synth_dataset, SynthSpec};

/// Flattened inputs in `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: inputs.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if !inputs.data().iter().all(|x| (0.0..=1.0).contains(x)) {
            return Err(Error::NonFinite(
                "dataset inputs must be finite and within [0, 1]",
            ));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Ok(Batch {
            inputs: self.inputs.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let b = self.batch(indices)?;
        Ok(Dataset {
            inputs: b.inputs,
            labels: b.labels,
            num_classes: self.num_classes,
        })
    }

    /// The first `per_class` examples of every class, in dataset order.
    pub fn take_per_class(&self, per_class: usize) -> Result<Dataset> {
        let mut taken = vec![0; self.num_classes];
        let indices: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let t = &mut taken[self.labels[i]];
                *t += 1;
                *t <= per_class
            })
            .collect();
        self.subset(&indices)
    }
}

/// Disjoint, non-empty example index lists, one per client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    clients: Vec<Vec<usize>>,
}

impl ClientPartition {
    /// Validates disjointness, non-emptiness and range against `dataset_len`.
    pub fn new(clients: Vec<Vec<usize>>, dataset_len: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidPartition("no clients".into()));
        }
        let mut seen = vec![false; dataset_len];
        for (k, list) in clients.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::EmptyClient(k));
            }
            for &i in list {
                match seen.get_mut(i) {
                    None => {
                        return Err(Error::InvalidPartition(format!(
                            "client {k} holds index {i} outside a dataset of {dataset_len}"
                        )))
                    }
                    Some(true) => {
                        return Err(Error::InvalidPartition(format!("index {i} assigned twice")))
                    }
                    Some(s) => *s = true,
                }
            }
        }
        Ok(ClientPartition { clients })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.clients[k]
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.clients
    }

    /// `n_k` for every client.
    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }
}

/// Shuffles the client's indices with `stream` and cuts them into batches of
/// `batch_size`; the last batch may be short.
pub fn batches(
    dataset: &Dataset,
    client: &[usize],
    batch_size: usize,
    stream: &RngStream,
) -> Result<Vec<Batch>> {
    if client.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order = client.to_vec();
    stream.rng().shuffle(&mut order);
    order.chunks(batch_size).map(|c| dataset.batch(c)).collect()
}

/// Per-client class counts (`clients × classes`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHistogram {
    counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramRecord {
    pub client_id: usize,
    pub n_k: usize,
    pub label_counts: Vec<usize>,
}

impl LabelHistogram {
    pub fn rows(&self) -> &[Vec<usize>] {
        &self.counts
    }

    /// Number of classes with a nonzero count, per client.
    pub fn classes_per_client(&self) -> Vec<usize> {
        self.counts
            .iter()
            .map(|row| row.iter().filter(|&&c| c > 0).count())
            .collect()
    }

    pub fn records(&self) -> Vec<HistogramRecord> {
        self.counts
            .iter()
            .enumerate()
            .map(|(client_id, row)| HistogramRecord {
                client_id,
                n_k: row.iter().sum(),
                label_counts: row.clone(),
            })
            .collect()
    }

    /// One JSON object per client, newline-terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn label_histogram(dataset: &Dataset, partition: &ClientPartition) -> LabelHistogram {
    let counts = partition
        .clients()
        .iter()
        .map(|list| {
            let mut row = vec![0; dataset.num_classes()];
            for &i in list {
                row[dataset.labels()[i]] += 1;
            }
            row
        })
        .collect();
    LabelHistogram { counts }
}
