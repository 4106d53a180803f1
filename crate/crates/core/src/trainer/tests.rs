use super::*;
use crate::store::{InternalStateTensor, Label, LabeledInstance, StateShape};
use rand_distr::{Distribution, Normal};

/// Gaussian states whose ff channel at layer 1 is shifted by ±`strength`
/// along the first coordinate according to the label.
fn separable(n: usize, layers: usize, dim: usize, strength: f32, seed: u64) -> StateDataset {
    let shape = StateShape::new(layers, dim, ChannelSet::ALL).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 1.0).unwrap();
    let instances = (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            let mut t = InternalStateTensor::new(shape, (0..shape.value_count()).map(|_| noise.sample(&mut rng)).collect()).unwrap();
            let sign = if label { 1.0 } else { -1.0 };
            t.layer_mut(Channel::Ff, 1).unwrap()[0] += sign * strength;
            LabeledInstance::new(i as u64, t, Label::from_correct(label))
        })
        .collect();
    StateDataset::new(shape, instances).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig { cnn_channels: vec![4, 8, 8, 16], embed_dim: 16, mlp_hidden: [16, 8], ..EncoderConfig::cnn() },
        batch_size: 16,
        epochs: 8,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_a_separable_set() {
    let ds = separable(64, 4, 8, 4.0, 1);
    let cfg = TrainConfig { epochs: 200, patience: 200, learning_rate: 3e-3, ..small_config() };
    let (model, log) = train(&cfg, &ds, &ds).unwrap();
    let report = evaluate(&model, &ds).unwrap();
    assert_eq!(report.accuracy, 1.0, "selected epoch {}", log.selected_epoch);
    assert_eq!(evaluate(&model, &ds).unwrap(), report);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let ds = separable(48, 4, 8, 2.0, 2);
    let (a, la) = train(&small_config(), &ds, &ds).unwrap();
    let (b, lb) = train(&small_config(), &ds, &ds).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(la.to_json(), lb.to_json());
    let (c, _) = train(&TrainConfig { seed: 4, ..small_config() }, &ds, &ds).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn identical_data_order_gives_identical_model_without_regularisers() {
    let ds = separable(32, 4, 8, 2.0, 5);
    let cfg = TrainConfig { weight_decay: 0.0, dropout: 0.0, epochs: 3, ..small_config() };
    let copy = StateDataset::new(ds.shape(), ds.instances().to_vec()).unwrap();
    assert_eq!(train(&cfg, &ds, &ds).unwrap().0.params(), train(&cfg, &copy, &copy).unwrap().0.params());
}

#[test]
fn model_is_tagged_by_objective() {
    let ds = separable(32, 4, 8, 2.0, 6);
    let cfg = TrainConfig { epochs: 1, ..small_config() };
    let (full, _) = train(&cfg, &ds, &ds).unwrap();
    assert_eq!(full.metadata().tag, "full");
    assert_eq!(full.metadata().config_hash, cfg.hash());
    let cls = TrainConfig { loss: LossConfig { contrastive_weight: 0.0, ..LossConfig::default() }, ..cfg };
    let (m, log) = train(&cls, &ds, &ds).unwrap();
    assert_eq!(m.metadata().tag, "cls-only");
    assert!(log.epochs.iter().all(|r| r.train_contrastive == 0.0));
}

#[test]
fn early_stopping_selects_the_validation_minimum() {
    let train_set = separable(64, 4, 8, 1.5, 7);
    let val_set = separable(32, 4, 8, 1.5, 8);
    let cfg = TrainConfig { epochs: 30, patience: 3, ..small_config() };
    let (model, log) = train(&cfg, &train_set, &val_set).unwrap();
    let min = log.epochs.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    let selected = log.selected().unwrap();
    assert_eq!(selected.val_loss, min);
    assert_eq!(model.metadata().selected_epoch, Some(log.selected_epoch));
    if log.stopped_early {
        assert_eq!(log.epochs.len(), log.selected_epoch + 1 + cfg.patience);
    }
    assert!(log.epochs[0].train_total > selected.train_total || log.selected_epoch == 0);
    assert_eq!(log.to_csv().lines().count(), log.epochs.len() + 1);
    assert_eq!(log.epoch_seconds.len(), log.epochs.len());
    assert!(!log.to_json().contains("seconds"));
}

#[test]
fn training_loss_falls_on_planted_signal() {
    let ds = separable(128, 4, 8, 3.0, 9);
    let (_, log) = train(&TrainConfig { epochs: 10, patience: 10, ..small_config() }, &ds, &ds).unwrap();
    assert!(log.epochs[0].train_total > log.selected().unwrap().train_total);
}

#[test]
fn rejects_bad_inputs() {
    let ds = separable(16, 4, 8, 1.0, 10);
    let one_class = StateDataset::new(ds.shape(), ds.instances().iter().filter(|i| i.label() == Label::Correct).cloned().collect()).unwrap();
    assert!(matches!(train(&small_config(), &one_class, &ds), Err(TrainError::SingleClass(true))));
    assert!(matches!(TrainConfig { learning_rate: 0.0, ..small_config() }.validate(), Err(TrainError::Config(_))));
    assert!(matches!(TrainConfig { epochs: 0, ..small_config() }.validate(), Err(TrainError::Config(_))));
    let other = separable(16, 4, 9, 1.0, 10);
    assert!(matches!(train(&small_config(), &ds, &other), Err(TrainError::ShapeMismatch { .. })));
    let empty = StateDataset::new(ds.shape(), vec![]).unwrap();
    let (model, _) = train(&TrainConfig { epochs: 1, ..small_config() }, &ds, &ds).unwrap();
    assert!(matches!(evaluate(&model, &empty), Err(TrainError::EmptyDataset(_))));
    assert!(matches!(evaluate(&model, &other), Err(TrainError::Probe(ProbeError::ShapeMismatch { .. }))));
}

#[test]
fn divergence_reports_the_step() {
    let ds = separable(16, 4, 8, 1.0, 11);
    let cfg = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 1e300, ..small_config() };
    match train(&cfg, &ds, &ds) {
        Err(TrainError::NonFiniteLoss { step }) => assert!(step <= 2),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn last_hidden_baseline_reads_one_vector() {
    let ds = separable(32, 4, 8, 2.0, 12);
    let cfg = TrainConfig { epochs: 2, ..small_config() };
    let (m, _) = train_last_hidden_baseline(&cfg, &ds, &ds).unwrap();
    assert_eq!(m.embed_dim(), 8);
    assert_eq!(m.encoded_shape(), StateShape::new(1, 8, ChannelSet::single(Channel::Act)).unwrap());
    assert_eq!(m.metadata().tag, "last-hidden");
    assert_eq!(m.metadata().loss.contrastive_weight, 0.0);
    let (again, _) = train_last_hidden_baseline(&cfg, &ds, &ds).unwrap();
    assert_eq!(m.params(), again.params());
}

#[test]
fn trained_cnn_is_sensitive_to_layer_order() {
    let ds = separable(64, 4, 8, 3.0, 13);
    let (model, _) = train(&small_config(), &ds, &ds).unwrap();
    let original = ds.instances()[0].tensor().clone();
    let mut permuted = original.clone();
    for ch in Channel::ALL {
        for l in 0..4 {
            permuted.layer_mut(ch, l).unwrap().copy_from_slice(original.layer(ch, 3 - l).unwrap());
        }
    }
    let a = model.encode(&original).unwrap();
    let b = model.encode(&permuted).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn vanishing_learning_rate_keeps_initial_weights() {
    let ds = separable(16, 4, 8, 1.0, 14);
    let cfg = TrainConfig { optimizer: Optimizer::Sgd, learning_rate: 1e-300, weight_decay: 0.0, epochs: 1, ..small_config() };
    let (m, _) = train(&cfg, &ds, &ds).unwrap();
    let fresh = ProbeModel::new(EncoderConfig { dropout_rate: cfg.dropout, ..cfg.encoder.clone() }, ds.shape(), cfg.selection(ds.shape()), cfg.seed).unwrap();
    for (p, q) in m.params().iter().zip(fresh.params().iter()) {
        for (a, b) in p.values.iter().zip(&q.values) {
            assert!((a - b).abs() <= 1e-280);
        }
    }
}
