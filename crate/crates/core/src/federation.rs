//! The FedAvg iterative process: `initialize` once, then `next` per round.
//!
//! A round runs five phases in order: client selection, broadcast (encode
//! the global model once, charge its size to every selected client, clients
//! train on the decoded copy), client computation, aggregation (each client
//! encodes its result, the server decodes and takes the `n_k`-weighted mean
//! over the selected clients), and the server model update.
//!
//! Random streams, all under the run seed:
//! - initialization: `["init"]`
//! - client selection: `["sample", round]`
//! - local epoch shuffles: `["epoch", client_id, round, epoch]`

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::{decode_model, encode_model, CodecPolicy, Direction};
use crate::data::{batches, ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::metrics::RoundMetrics;
use crate::models::{
    evaluate, init_params, loss_and_grad, sgd_step, Evaluation, ModelParams, ModelSpec, Variable,
};
use crate::rng::{label, rng_sample_without_replacement, RngStream};
use crate::tensor::Tensor;

/// Clients per round, either as a count or as a fraction `C` of the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Participation {
    Count(usize),
    Fraction(f64),
}

impl Participation {
    /// `m` for a pool of `k` clients; fractions use `max(floor(C·K), 1)`.
    pub fn clients_per_round(&self, k: usize) -> Result<usize> {
        let m = match *self {
            Participation::Count(m) => m,
            Participation::Fraction(c) => {
                if !(c > 0.0 && c <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "client fraction must be in (0, 1], got {c}"
                    )));
                }
                ((c * k as f64).floor() as usize).max(1)
            }
        };
        if m == 0 || m > k {
            return Err(Error::InvalidConfig(format!(
                "{m} clients per round from a pool of {k}"
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: u64,
    pub participation: Participation,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub client_lr: f32,
    pub server_lr: f32,
    pub seed: u64,
    pub codec: CodecPolicy,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.local_epochs == 0 {
            return fail("local_epochs must be at least 1");
        }
        if !(self.client_lr >= 0.0 && self.client_lr.is_finite()) {
            return fail("client_lr must be finite and non-negative");
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return fail("server_lr must be finite and positive");
        }
        if let Participation::Count(0) = self.participation {
            return fail("clients_per_round must be at least 1");
        }
        self.codec.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub round: u64,
    pub params: ModelParams,
    pub cumulative_broadcast_bits: u64,
    pub cumulative_aggregate_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub n_k: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

pub fn initialize(spec: &ModelSpec, config: &FedConfig) -> Result<ServerState> {
    config.validate()?;
    Ok(ServerState {
        round: 0,
        params: init_params(spec, &RngStream::new(config.seed).named("init"))?,
        cumulative_broadcast_bits: 0,
        cumulative_aggregate_bits: 0,
    })
}

/// `m` distinct clients out of `k`, uniformly without replacement, sorted.
pub fn sample_clients(k: usize, m: usize, round: u64, seed: u64) -> Result<Vec<usize>> {
    let stream = RngStream::with_path(seed, &[label("sample"), round]);
    let mut chosen = rng_sample_without_replacement(&stream, k, m)?;
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn epoch_stream(seed: u64, client_id: usize, round: u64, epoch: usize) -> RngStream {
    RngStream::with_path(
        seed,
        &[label("epoch"), client_id as u64, round, epoch as u64],
    )
}

/// `E` epochs of minibatch SGD from `broadcast`, reshuffling every epoch.
/// Train loss/accuracy are example-weighted means over the last epoch,
/// each batch measured before its step.
pub fn client_update(
    spec: &ModelSpec,
    broadcast: &ModelParams,
    dataset: &Dataset,
    client_indices: &[usize],
    config: &FedConfig,
    round: u64,
    client_id: usize,
) -> Result<ClientUpdate> {
    if client_indices.is_empty() {
        return Err(Error::EmptyClient(client_id));
    }
    let mut params = broadcast.clone();
    let mut last_epoch = (0.0, 0.0);
    for epoch in 0..config.local_epochs {
        let stream = epoch_stream(config.seed, client_id, round, epoch);
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        for batch in batches(dataset, client_indices, config.batch_size, &stream)? {
            let (eval, grads) = loss_and_grad(spec, &params, &batch)?;
            loss_sum += eval.loss * batch.len() as f64;
            acc_sum += eval.accuracy * batch.len() as f64;
            params = sgd_step(&params, &grads, config.client_lr)?;
        }
        last_epoch = (loss_sum, acc_sum);
    }
    let n_k = client_indices.len();
    Ok(ClientUpdate {
        client_id,
        params,
        n_k,
        train_loss: last_epoch.0 / n_k as f64,
        train_accuracy: last_epoch.1 / n_k as f64,
    })
}

/// `n_k / Σ n_j` over the given sizes.
pub fn aggregation_weights(sizes: &[usize]) -> Vec<f64> {
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    sizes.iter().map(|&n| n as f64 / total).collect()
}

/// Coordinate-wise `n_k`-weighted mean of the updates, normalized over the
/// updates given and summed in ascending `client_id` order.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    for u in &ordered {
        first.params.check_compatible(&u.params)?;
        if u.n_k == 0 {
            return Err(Error::EmptyClient(u.client_id));
        }
    }
    let weights = aggregation_weights(&ordered.iter().map(|u| u.n_k).collect::<Vec<_>>());
    let vars = first
        .params
        .variables()
        .iter()
        .enumerate()
        .map(|(i, var)| {
            let mut acc = vec![0.0f64; var.tensor.len()];
            for (u, &w) in ordered.iter().zip(&weights) {
                for (a, &x) in acc.iter_mut().zip(u.params.variables()[i].tensor.data()) {
                    *a += w * f64::from(x);
                }
            }
            Ok(Variable {
                name: var.name.clone(),
                tensor: Tensor::from_vec(
                    var.tensor.shape().to_vec(),
                    acc.into_iter().map(|a| a as f32).collect(),
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::new(vars)
}

/// `w + server_lr·(w̄ − w)`; exactly `w̄` when `server_lr == 1`.
pub fn server_update(
    current: &ModelParams,
    averaged: &ModelParams,
    server_lr: f32,
) -> Result<ModelParams> {
    current.check_compatible(averaged)?;
    if server_lr == 1.0 {
        return Ok(averaged.clone());
    }
    let lr = f64::from(server_lr);
    let vars = current
        .variables()
        .iter()
        .zip(averaged.variables())
        .map(|(w, m)| {
            let data = w
                .tensor
                .data()
                .iter()
                .zip(m.tensor.data())
                .map(|(&w, &m)| (f64::from(w) + lr * (f64::from(m) - f64::from(w))) as f32)
                .collect();
            Ok(Variable {
                name: w.name.clone(),
                tensor: Tensor::from_vec(w.tensor.shape().to_vec(), data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::new(vars)
}

/// One federated round. Evaluation fields of the returned metrics are left
/// empty; the caller evaluates on its own cadence.
pub fn next(
    state: &ServerState,
    spec: &ModelSpec,
    dataset: &Dataset,
    partition: &ClientPartition,
    config: &FedConfig,
) -> Result<(ServerState, RoundMetrics)> {
    config.validate()?;
    state.params.check(spec)?;
    let round = state.round + 1;
    let k = partition.num_clients();
    let m = config.participation.clients_per_round(k)?;

    // Client selection.
    let selected = sample_clients(k, m, round, config.seed)?;

    // Broadcast.
    let down = encode_model(
        &state.params,
        &config.codec.for_direction(Direction::Broadcast),
    )?;
    let received = decode_model(&down)?;
    let broadcast_bits = down.total_bits * m as u64;

    // Client computation, then each client encodes its result for upload.
    let up_policy = config.codec.for_direction(Direction::Aggregate);
    let uploads = selected
        .par_iter()
        .map(|&client_id| {
            let update = client_update(
                spec,
                &received,
                dataset,
                partition.client(client_id),
                config,
                round,
                client_id,
            )?;
            let encoded = encode_model(&update.params, &up_policy)?;
            Ok((update, encoded))
        })
        .collect::<Result<Vec<_>>>()?;

    // Aggregation on the decoded uploads.
    let mut aggregate_bits = 0u64;
    let mut updates = Vec::with_capacity(uploads.len());
    for (update, encoded) in uploads {
        aggregate_bits += encoded.total_bits;
        updates.push(ClientUpdate {
            params: decode_model(&encoded)?,
            ..update
        });
    }
    let averaged = aggregate(&updates)?;

    // Model update.
    let params = server_update(&state.params, &averaged, config.server_lr)?;

    let weights = aggregation_weights(&updates.iter().map(|u| u.n_k).collect::<Vec<_>>());
    let train_loss = updates
        .iter()
        .zip(&weights)
        .map(|(u, w)| w * u.train_loss)
        .sum();
    let train_accuracy = updates
        .iter()
        .zip(&weights)
        .map(|(u, w)| w * u.train_accuracy)
        .sum();

    let next_state = ServerState {
        round,
        params,
        cumulative_broadcast_bits: state.cumulative_broadcast_bits + broadcast_bits,
        cumulative_aggregate_bits: state.cumulative_aggregate_bits + aggregate_bits,
    };
    let metrics = RoundMetrics {
        round,
        train_loss,
        train_accuracy,
        eval_loss: None,
        eval_accuracy: None,
        broadcast_bits_round: broadcast_bits,
        aggregate_bits_round: aggregate_bits,
        cumulative_broadcast_bits: next_state.cumulative_broadcast_bits,
        cumulative_aggregate_bits: next_state.cumulative_aggregate_bits,
    };
    Ok((next_state, metrics))
}

/// `n_k`-weighted mean of per-client evaluations. Pure.
pub fn federated_evaluation(
    spec: &ModelSpec,
    params: &ModelParams,
    dataset: &Dataset,
    partition: &ClientPartition,
) -> Result<Evaluation> {
    if partition.total() == 0 {
        return Err(Error::EmptyDataset);
    }
    let weights = aggregation_weights(&partition.sizes());
    let mut loss = 0.0;
    let mut accuracy = 0.0;
    for (client, w) in partition.clients().iter().zip(weights) {
        let e = evaluate(spec, params, &dataset.subset(client)?)?;
        loss += w * e.loss;
        accuracy += w * e.accuracy;
    }
    Ok(Evaluation { loss, accuracy })
}

/// Evaluation of the global model on held-out data. Pure.
pub fn centralized_evaluation(
    spec: &ModelSpec,
    params: &ModelParams,
    test: &Dataset,
) -> Result<Evaluation> {
    evaluate(spec, params, test)
}
