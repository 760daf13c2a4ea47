use fedsim_core::codecs::{decode_model, encode_model, CodecPolicy};
use fedsim_core::data::{batches, partition_iid, synth_dataset, ClientPartition, Dataset};
use fedsim_core::federation::{
    client_update, epoch_stream, federated_evaluation, initialize, next, sample_clients, FedConfig,
    Participation,
};
use fedsim_core::models::{evaluate, loss_and_grad, sgd_step, ModelParams, ModelSpec};
use fedsim_core::rng::RngStream;

const SPEC: ModelSpec = ModelSpec::Mlp {
    input_dim: 6,
    hidden_units: 5,
    num_classes: 3,
};

fn data() -> Dataset {
    synth_dataset(&RngStream::new(21), 30, 3, 6).unwrap()
}

fn config(m: usize) -> FedConfig {
    FedConfig {
        rounds: 5,
        participation: Participation::Count(m),
        batch_size: 20,
        local_epochs: 5,
        client_lr: 0.1,
        server_lr: 1.0,
        seed: 4,
        codec: CodecPolicy::identity(),
    }
}

#[test]
fn client_update_is_e_epochs_of_shuffled_minibatch_sgd() {
    let d = data();
    let cfg = config(1);
    let state = initialize(&SPEC, &cfg).unwrap();
    let indices: Vec<usize> = (0..47).collect();
    let update = client_update(&SPEC, &state.params, &d, &indices, &cfg, 3, 7).unwrap();

    let mut w = state.params.clone();
    let mut steps = 0;
    for epoch in 0..cfg.local_epochs {
        for batch in batches(
            &d,
            &indices,
            cfg.batch_size,
            &epoch_stream(cfg.seed, 7, 3, epoch),
        )
        .unwrap()
        {
            let (_, g) = loss_and_grad(&SPEC, &w, &batch).unwrap();
            w = sgd_step(&w, &g, cfg.client_lr).unwrap();
            steps += 1;
        }
    }
    assert_eq!(steps, 47usize.div_ceil(20) * 5);
    assert_eq!(update.params, w);
    assert_eq!(update.n_k, 47);
}

#[test]
fn clients_train_on_the_decoded_broadcast() {
    let d = data();
    let n = d.len();
    let all: Vec<usize> = (0..n).collect();
    let partition = ClientPartition::new(vec![all.clone()], n).unwrap();
    let policy = CodecPolicy::uniform(4).with_threshold(0);
    let cfg = FedConfig {
        batch_size: n,
        local_epochs: 1,
        codec: policy,
        ..config(1)
    };
    let state = initialize(&SPEC, &cfg).unwrap();
    let (after, metrics) = next(&state, &SPEC, &d, &partition, &cfg).unwrap();

    let received = decode_model(&encode_model(&state.params, &policy).unwrap()).unwrap();
    let (_, g) = loss_and_grad(&SPEC, &received, &d.batch(&all).unwrap()).unwrap();
    let local = sgd_step(&received, &g, cfg.client_lr).unwrap();
    let uploaded = encode_model(&local, &policy).unwrap();
    assert_eq!(after.params, decode_model(&uploaded).unwrap());
    assert_eq!(metrics.aggregate_bits_round, uploaded.total_bits);
    let n_params = SPEC.parameter_count() as u64;
    assert_eq!(uploaded.total_bits, 4 * 64 + 4 * n_params);
}

#[test]
fn bits_accumulate_per_selected_client() {
    let d = data();
    let partition = partition_iid(&d, 9, &RngStream::new(1)).unwrap();
    let cfg = config(4);
    let mut state = initialize(&SPEC, &cfg).unwrap();
    let per_model = 32 * SPEC.parameter_count() as u64;
    for round in 1..=cfg.rounds {
        let (s, m) = next(&state, &SPEC, &d, &partition, &cfg).unwrap();
        assert_eq!(m.round, round);
        assert_eq!(m.broadcast_bits_round, 4 * per_model);
        assert_eq!(m.aggregate_bits_round, 4 * per_model);
        assert_eq!(m.cumulative_broadcast_bits, round * 4 * per_model);
        assert_eq!(s.cumulative_aggregate_bits, m.cumulative_aggregate_bits);
        state = s;
    }
}

#[test]
fn server_learning_rate_interpolates() {
    let d = data();
    let partition = partition_iid(&d, 3, &RngStream::new(2)).unwrap();
    let full = config(3);
    let half = FedConfig {
        server_lr: 0.5,
        ..full.clone()
    };
    let state = initialize(&SPEC, &full).unwrap();
    let (a, _) = next(&state, &SPEC, &d, &partition, &full).unwrap();
    let (b, _) = next(&state, &SPEC, &d, &partition, &half).unwrap();
    for ((w, avg), mixed) in state
        .params
        .variables()
        .iter()
        .zip(a.params.variables())
        .zip(b.params.variables())
    {
        for ((&w, &avg), &mixed) in w
            .tensor
            .data()
            .iter()
            .zip(avg.tensor.data())
            .zip(mixed.tensor.data())
        {
            let want = f64::from(w) + 0.5 * (f64::from(avg) - f64::from(w));
            assert!((f64::from(mixed) - want).abs() < 1e-6);
        }
    }
}

#[test]
fn sampling_is_seeded_per_round() {
    let a = sample_clients(100, 10, 3, 8).unwrap();
    assert_eq!(a, sample_clients(100, 10, 3, 8).unwrap());
    assert_ne!(a, sample_clients(100, 10, 4, 8).unwrap());
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert!(sample_clients(5, 6, 1, 0).is_err());
}

#[test]
fn federated_evaluation_is_weighted_and_pure() {
    let d = data();
    let partition = partition_iid(&d, 4, &RngStream::new(5)).unwrap();
    let state = initialize(&SPEC, &config(2)).unwrap();
    let before: ModelParams = state.params.clone();
    let fed = federated_evaluation(&SPEC, &state.params, &d, &partition).unwrap();
    let central = evaluate(&SPEC, &state.params, &d).unwrap();
    assert!((fed.loss - central.loss).abs() < 1e-9);
    assert!((fed.accuracy - central.accuracy).abs() < 1e-12);
    assert_eq!(state.params, before);
}

#[test]
fn repeated_runs_are_identical() {
    let d = data();
    let partition = partition_iid(&d, 6, &RngStream::new(3)).unwrap();
    let cfg = config(3);
    let run = || {
        let mut state = initialize(&SPEC, &cfg).unwrap();
        let mut log = Vec::new();
        for _ in 0..cfg.rounds {
            let (s, m) = next(&state, &SPEC, &d, &partition, &cfg).unwrap();
            state = s;
            log.push(m);
        }
        (state.params, log)
    };
    assert_eq!(run(), run());
}
