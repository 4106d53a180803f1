use super::*;
use proptest::prelude::*;

fn shape(layers: usize, dim: usize, channels: ChannelSet) -> StateShape {
    StateShape::new(layers, dim, channels).unwrap()
}

fn counting_tensor(s: StateShape, offset: f32) -> InternalStateTensor {
    let values = (0..s.value_count()).map(|i| i as f32 * 0.25 + offset).collect();
    InternalStateTensor::new(s, values).unwrap()
}

fn dataset(n: usize, s: StateShape) -> StateDataset {
    let instances = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Correct } else { Label::Incorrect };
            LabeledInstance::new(i as u64, counting_tensor(s, i as f32), label)
        })
        .collect();
    StateDataset::new(s, instances).unwrap()
}

#[test]
fn single_instance_file_size() {
    let s = shape(2, 3, ChannelSet::ALL);
    let ds = dataset(1, s);
    let bytes = encode_dataset(&ds).unwrap();
    assert_eq!(bytes.len(), 32 + 17 + 2 * 3 * 3 * 4);
    assert_eq!(bytes.len(), 121);
}

#[test]
fn round_trip_through_file() {
    let s = shape(3, 4, ChannelSet::of(&[Channel::Act, Channel::Ff]).unwrap());
    let mut instances = dataset(5, s).instances().to_vec();
    instances[1] = instances[1].clone().with_logprob(-0.123456789).unwrap().with_tag("kv").unwrap();
    instances[2] = LabeledInstance::new(99, counting_tensor(s, -3.5), Label::Unlabeled);
    let ds = StateDataset::new(s, instances).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.istd");
    let written = write_dataset(&ds, &path).unwrap();
    assert_eq!(written, std::fs::metadata(&path).unwrap().len());
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.instances()[1].answer_logprob(), Some(-0.123_456_79_f32 as f64));
}

#[test]
fn duplicate_ids_rejected() {
    let s = shape(1, 2, ChannelSet::ALL);
    let a = LabeledInstance::new(7, counting_tensor(s, 0.0), Label::Correct);
    let b = LabeledInstance::new(7, counting_tensor(s, 1.0), Label::Incorrect);
    assert!(matches!(StateDataset::new(s, vec![a, b]), Err(StoreError::DuplicateId(7))));
}

#[test]
fn heterogeneous_shapes_rejected() {
    let a = LabeledInstance::new(1, counting_tensor(shape(1, 2, ChannelSet::ALL), 0.0), Label::Correct);
    let b = LabeledInstance::new(2, counting_tensor(shape(2, 2, ChannelSet::ALL), 0.0), Label::Correct);
    assert!(matches!(StateDataset::from_instances(vec![a, b]), Err(StoreError::ShapeMismatch { .. })));
}

#[test]
fn empty_dataset_not_written() {
    let ds = StateDataset::new(shape(1, 1, ChannelSet::ALL), vec![]).unwrap();
    assert!(matches!(encode_dataset(&ds), Err(StoreError::EmptyDataset)));
}

#[test]
fn bad_magic() {
    let mut bytes = encode_dataset(&dataset(2, shape(2, 2, ChannelSet::ALL))).unwrap();
    bytes[..4].copy_from_slice(b"XSTD");
    assert!(matches!(decode_dataset(&bytes), Err(StoreError::BadMagic(m)) if &m == b"XSTD"));
}

#[test]
fn unsupported_version() {
    let mut bytes = encode_dataset(&dataset(2, shape(2, 2, ChannelSet::ALL))).unwrap();
    bytes[4] = 2;
    assert!(matches!(decode_dataset(&bytes), Err(StoreError::UnsupportedVersion(2))));
}

#[test]
fn truncation_names_record() {
    let s = shape(2, 2, ChannelSet::ALL);
    let bytes = encode_dataset(&dataset(3, s)).unwrap();
    let record = 17 + s.value_count() * 4;
    let cut = &bytes[..32 + record + 10];
    assert!(matches!(decode_dataset(cut), Err(StoreError::TruncatedRecord(1))));
    assert!(matches!(decode_dataset(&bytes[..20]), Err(StoreError::TruncatedHeader)));
}

#[test]
fn nan_values_rejected_on_load() {
    let s = shape(1, 2, ChannelSet::single(Channel::Act));
    let mut bytes = encode_dataset(&dataset(2, s)).unwrap();
    let second_values = 32 + (17 + 8) + 17;
    bytes[second_values..second_values + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_dataset(&bytes), Err(StoreError::NonFinite(1))));
}

#[test]
fn invalid_logprob_rejected() {
    let t = counting_tensor(shape(1, 1, ChannelSet::ALL), 0.0);
    assert!(LabeledInstance::new(0, t.clone(), Label::Correct).with_logprob(0.5).is_err());
    assert!(LabeledInstance::new(0, t, Label::Correct).with_logprob(f64::NAN).is_err());
}

#[test]
fn channel_set_parsing_and_order() {
    let c: ChannelSet = "ff,act".parse().unwrap();
    assert_eq!(c.iter().collect::<Vec<_>>(), vec![Channel::Act, Channel::Ff]);
    assert_eq!(c.to_string(), "act,ff");
    assert!("".parse::<ChannelSet>().is_err());
    assert_eq!("full".parse::<ChannelSet>().unwrap(), ChannelSet::ALL);
}

#[test]
fn select_single_channel_shape() {
    let ds = dataset(4, shape(6, 8, ChannelSet::ALL));
    let out = select_states(&ds, ChannelSet::single(Channel::Ff), LayerRange::full(6)).unwrap();
    assert_eq!((out.shape().layers, out.shape().dim, out.shape().channels.len()), (6, 8, 1));
    let inst = &out.instances()[2];
    assert_eq!(inst.tensor().layer(Channel::Ff, 3), ds.instances()[2].tensor().layer(Channel::Ff, 3));
    assert_eq!(ds.shape().layers, 6, "source untouched");
}

#[test]
fn select_everything_is_identity() {
    let ds = dataset(3, shape(4, 5, ChannelSet::ALL));
    let out = select_states(&ds, ChannelSet::ALL, LayerRange::full(4)).unwrap();
    assert_eq!(out, ds);
}

#[test]
fn select_middle_band_of_32_layers() {
    let ds = dataset(2, shape(32, 2, ChannelSet::ALL));
    let out = select_states(&ds, ChannelSet::ALL, LayerRange::new(13, 17)).unwrap();
    assert_eq!(out.shape().layers, 5);
    for c in Channel::ALL {
        assert_eq!(out.instances()[1].tensor().layer(c, 0), ds.instances()[1].tensor().layer(c, 13));
        assert_eq!(out.instances()[1].tensor().layer(c, 4), ds.instances()[1].tensor().layer(c, 17));
    }
}

#[test]
fn select_errors() {
    let ds = dataset(2, shape(4, 2, ChannelSet::of(&[Channel::Act, Channel::Attn]).unwrap()));
    assert!(matches!(select_states(&ds, ChannelSet::ALL, LayerRange::full(4)), Err(StoreError::MissingChannels { .. })));
    assert!(matches!(select_states(&ds, ChannelSet::single(Channel::Act), LayerRange::new(2, 4)), Err(StoreError::LayerRange { .. })));
    assert!(matches!(ChannelSet::from_mask(0), Err(StoreError::EmptyChannelSet)));
}

#[test]
fn split_sizes_largest_remainder() {
    let ds = dataset(10, shape(1, 1, ChannelSet::ALL));
    let (a, b, c) = split(&ds, SplitFractions::new(0.7, 0.1, 0.2).unwrap(), 7).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
    assert_eq!(SplitFractions::default().sizes(11), [8, 1, 2]);
}

#[test]
fn split_is_deterministic() {
    let ds = dataset(50, shape(1, 1, ChannelSet::ALL));
    let f = SplitFractions::default();
    assert_eq!(split(&ds, f, 3).unwrap(), split(&ds, f, 3).unwrap());
    assert_ne!(split(&ds, f, 3).unwrap().0, split(&ds, f, 4).unwrap().0);
}

#[test]
fn split_is_stratified() {
    let ds = dataset(100, shape(1, 1, ChannelSet::ALL));
    for seed in 0..20 {
        let (train, val, test) = split(&ds, SplitFractions::default(), seed).unwrap();
        assert!((0.48..=0.52).contains(&train.positive_rate()), "seed {seed}: {}", train.positive_rate());
        assert!((val.positive_rate() - 0.5).abs() <= 0.1);
        assert!((test.positive_rate() - 0.5).abs() <= 0.05);
    }
}

#[test]
fn split_errors() {
    let ds = dataset(2, shape(1, 1, ChannelSet::ALL));
    assert!(matches!(split(&ds, SplitFractions::default(), 0), Err(StoreError::TooSmallToSplit(2))));
    assert!(SplitFractions::new(0.5, 0.5, 0.1).is_err());
    assert!(SplitFractions::new(1.0, 0.0, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(n in 3usize..120, seed in any::<u64>(), pos in 0usize..120) {
        let s = shape(1, 1, ChannelSet::ALL);
        let instances = (0..n).map(|i| {
            let label = if i < pos.min(n) { Label::Correct } else { Label::Incorrect };
            LabeledInstance::new(i as u64 * 3, counting_tensor(s, 0.0), label)
        }).collect();
        let ds = StateDataset::new(s, instances).unwrap();
        let (a, b, c) = split(&ds, SplitFractions::default(), seed).unwrap();
        let mut ids: Vec<u64> = [a, b, c].iter().flat_map(|d| d.instances().iter().map(|i| i.id())).collect();
        ids.sort_unstable();
        let expected: Vec<u64> = (0..n as u64).map(|i| i * 3).collect();
        prop_assert_eq!(ids, expected);
    }

    #[test]
    fn nested_selection_composes(outer_start in 0usize..4, outer_len in 1usize..5, inner_start in 0usize..4, inner_len in 1usize..5) {
        let layers = 8;
        prop_assume!(outer_start + outer_len <= layers && inner_start + inner_len <= outer_len);
        let ds = dataset(3, shape(layers, 3, ChannelSet::ALL));
        let outer = LayerRange::new(outer_start, outer_start + outer_len - 1);
        let inner = LayerRange::new(inner_start, inner_start + inner_len - 1);
        let ff_attn = ChannelSet::of(&[Channel::Attn, Channel::Ff]).unwrap();
        let twice = select_states(&select_states(&ds, ff_attn, outer).unwrap(), ChannelSet::single(Channel::Ff), inner).unwrap();
        let once = select_states(&ds, ChannelSet::single(Channel::Ff), outer.compose(inner)).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn encode_decode_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 12), lp in -50.0f64..0.0, label in 0u8..3) {
        let s = shape(2, 2, ChannelSet::of(&[Channel::Attn, Channel::Ff, Channel::Act]).unwrap());
        let label = [Label::Incorrect, Label::Correct, Label::Unlabeled][label as usize];
        let inst = LabeledInstance::new(42, InternalStateTensor::new(s, values).unwrap(), label)
            .with_logprob(lp).unwrap();
        let ds = StateDataset::new(s, vec![inst]).unwrap();
        prop_assert_eq!(decode_dataset(&encode_dataset(&ds).unwrap()).unwrap(), ds);
    }
}
