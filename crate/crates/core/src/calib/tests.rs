use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-from-the-definition ECE: scan every bin, test membership per instance.
fn naive_ece(conf: &[f64], labels: &[bool], m: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for bin in 1..=m {
        let lo = (bin - 1) as f64 / m as f64;
        let hi = bin as f64 / m as f64;
        let members: Vec<usize> = (0..conf.len()).filter(|&i| (conf[i] > lo && conf[i] <= hi) || (bin == 1 && conf[i] == 0.0)).collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|&&i| labels[i]).count() as f64 / k;
        let mean: f64 = members.iter().map(|&i| conf[i]).sum::<f64>() / k;
        total += k / n * (acc - mean).abs();
    }
    total
}

#[test]
fn worked_ece_example() {
    let e = ece(&[0.95, 0.95, 0.15, 0.15], &[true, false, false, false], 10).unwrap();
    assert!((e - 0.30).abs() < 1e-12, "{e}");
}

#[test]
fn ece_matches_naive_oracle_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let mut conf: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        // Exercise boundaries and zero.
        if n > 3 {
            conf[0] = 0.0;
            conf[1] = 0.3;
            conf[2] = 1.0;
        }
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let fast = ece(&conf, &labels, 10).unwrap();
        assert!((fast - naive_ece(&conf, &labels, 10)).abs() < 1e-12);
    }
}

#[test]
fn boundary_values_use_right_closed_bins() {
    assert_eq!(bin_index(0.0, 10), 1);
    assert_eq!(bin_index(0.1, 10), 1);
    assert_eq!(bin_index(0.3, 10), 3);
    assert_eq!(bin_index(0.7, 10), 7);
    assert_eq!(bin_index(0.30000000001, 10), 4);
    assert_eq!(bin_index(1.0, 10), 10);
}

#[test]
fn perfectly_calibrated_bins_give_zero() {
    // Confidence 0.25 with 1 of 4 correct, confidence 0.75 with 3 of 4 correct.
    let conf = [0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75];
    let labels = [true, false, false, false, true, true, true, false];
    assert!(ece(&conf, &labels, 10).unwrap().abs() < 1e-15);
}

#[test]
fn accuracy_threshold_tie_counts_as_correct() {
    assert_eq!(accuracy_at_threshold(&[0.5, 0.49], &[true, false], 0.5).unwrap(), 1.0);
    assert_eq!(accuracy_at_threshold(&[0.5], &[false], 0.5).unwrap(), 0.0);
}

#[test]
fn high_confidence_errors() {
    let r = high_confidence_error_rate(&[0.9, 0.85, 0.8, 0.95], &[false, false, false, true], 0.8).unwrap();
    assert_eq!(r, 0.5);
}

#[test]
fn quartiles_interpolate_linearly() {
    let s = FiveNumber::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
    let d = confidence_distribution(&[0.2, 0.4], &[true, true]).unwrap();
    assert!(d.incorrect.is_none());
    assert!(d.to_csv().contains("incorrect,0,"));
}

#[test]
fn input_validation() {
    assert_eq!(ece(&[0.5], &[true, false], 10), Err(MetricError::LengthMismatch { confidences: 1, labels: 2 }));
    assert_eq!(ece(&[], &[], 10), Err(MetricError::Empty));
    assert_eq!(ece(&[1.5], &[true], 10), Err(MetricError::OutOfRange(1.5)));
    assert_eq!(ece(&[0.5], &[true], 0), Err(MetricError::ZeroBins));
    assert!(accuracy_at_threshold(&[f64::NAN], &[true], 0.5).is_err());
}

#[test]
fn logit_baseline() {
    assert_eq!(logit_confidence(0.0).unwrap(), 1.0);
    assert!((logit_confidence(-2.0_f64.ln()).unwrap() - 0.5).abs() < 1e-15);
    assert!(logit_confidence(0.1).is_err());
    assert!(logit_confidence(f64::NEG_INFINITY).is_err());
}

#[test]
fn report_serialises_with_stable_keys() {
    let r = CalibrationReport::compute(&[0.95, 0.95, 0.15, 0.15], &[true, false, false, false]).unwrap();
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in ["accuracy", "ece", "bins", "quartiles", "high_conf_error_rate", "threshold", "n"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["bins"].as_array().unwrap().len(), 10);
    assert!(v["quartiles"].get("correct").is_some() && v["quartiles"].get("incorrect").is_some());
    let back: CalibrationReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
    assert!(r.to_csv().starts_with("metric,value\nn,4\n"));
    assert!(reliability_diagram_svg(&r.bins, "t").starts_with("<svg"));
    assert!(box_plot_svg(&r.quartiles, "t").contains("correct (n=1)"));
}

#[test]
fn temperature_grid_shape() {
    let g = temperature_grid();
    assert_eq!(g.len(), 100);
    assert!((g[0] - 0.05).abs() < 1e-15 && g[99] == 20.0);
    assert!(g.windows(2).all(|w| w[1] > w[0]));
    let ratios: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-9));
}

#[test]
fn temperature_recovers_sharpened_scores() {
    // Labels drawn from sigmoid(z); scores are 4z, so the best T is near 4.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..20_000 {
        let z: f64 = rng.random_range(-4.0..4.0);
        labels.push(rng.random::<f64>() < crate::graph::sigmoid(z));
        scores.push(4.0 * z);
    }
    let fit = fit_temperature(&scores, &labels, TemperatureObjective::Nll).unwrap();
    assert!((fit.temperature - 4.0).abs() < 0.5, "{}", fit.temperature);
    assert_eq!(fit.calibrated, fit.apply(&scores));
    let by_ece = fit_temperature(&scores, &labels, TemperatureObjective::Ece).unwrap();
    assert!(by_ece.temperature > 2.0 && by_ece.temperature < 8.0);
}

#[test]
fn temperature_ties_pick_smallest() {
    // All-zero scores give the same objective at every T.
    let fit = fit_temperature(&[0.0, 0.0], &[true, false], TemperatureObjective::Nll).unwrap();
    assert_eq!(fit.grid_index, 0);
    assert!(fit_temperature(&[1.0, 2.0], &[true, true], TemperatureObjective::Nll).is_err());
}

proptest! {
    #[test]
    fn ece_is_bounded(conf in proptest::collection::vec(0.0f64..=1.0, 1..80), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = conf.iter().map(|_| rng.random()).collect();
        let bins = reliability_bins(&conf, &labels, 10).unwrap();
        let e = ece_from_bins(&bins);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), conf.len());
        for b in &bins {
            prop_assert!((0.0..=1.0).contains(&b.accuracy) && (0.0..=1.0).contains(&b.confidence));
        }
    }

    #[test]
    fn accuracy_is_a_fraction(conf in proptest::collection::vec(0.0f64..=1.0, 1..50), t in 0.0f64..=1.0) {
        let labels: Vec<bool> = conf.iter().map(|c| *c > 0.3).collect();
        let a = accuracy_at_threshold(&conf, &labels, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn accuracy_direct_count() {
    assert_eq!(accuracy_at_threshold(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
    assert_eq!(accuracy_at_threshold(&[0.6, 0.6, 0.4, 0.2], &[true, false, false, true], 0.5).unwrap(), 0.5);
}

#[test]
fn ece_perfect_and_permutation_invariant() {
    assert_eq!(ece(&[1.0; 5], &[true; 5], 10).unwrap(), 0.0);
    let conf = [0.95, 0.15, 0.95, 0.15, 0.42];
    let labels = [false, false, true, false, true];
    let order = [4, 2, 0, 3, 1];
    let c2: Vec<f64> = order.iter().map(|&i| conf[i]).collect();
    let l2: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    assert!((ece(&conf, &labels, 10).unwrap() - ece(&c2, &l2, 10).unwrap()).abs() < 1e-15);
}

#[test]
fn distribution_examples() {
    let d = confidence_distribution(&[0.1, 0.2, 0.3, 0.4, 0.7, 0.7], &[true, true, true, true, false, false]).unwrap();
    assert!((d.correct.unwrap().median - 0.25).abs() < 1e-15);
    assert_eq!(d.incorrect.unwrap().iqr(), 0.0);
}

#[test]
fn high_confidence_direct_count_and_monotone() {
    let conf = [0.9, 0.9, 0.3];
    let labels = [false, true, false];
    assert!((high_confidence_error_rate(&conf, &labels, 0.8).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(high_confidence_error_rate(&[0.9], &[true], 0.8).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conf: Vec<f64> = (0..200).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..200).map(|_| rng.random()).collect();
    let rates: Vec<f64> = (0..=20).map(|i| high_confidence_error_rate(&conf, &labels, i as f64 / 20.0).unwrap()).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
}

fn calibrated_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-5.0..5.0);
            (z, rng.random::<f64>() < crate::graph::sigmoid(z))
        })
        .unzip()
}

#[test]
fn calibrated_scores_select_unit_temperature() {
    let (scores, labels) = calibrated_scores(100_000, 17);
    let grid = temperature_grid();
    let nearest = (0..grid.len()).min_by(|&a, &b| (grid[a].ln().abs()).partial_cmp(&grid[b].ln().abs()).unwrap()).unwrap();
    let fit = fit_temperature(&scores, &labels, TemperatureObjective::Nll).unwrap();
    assert!(fit.grid_index.abs_diff(nearest) <= 1, "T = {}", fit.temperature);
}

#[test]
fn temperature_follows_score_rescaling() {
    let (scores, labels) = calibrated_scores(50_000, 23);
    let step = (GRID_MAX / GRID_MIN).ln() / (GRID_POINTS - 1) as f64;
    let base = fit_temperature(&scores, &labels, TemperatureObjective::Nll).unwrap().temperature;
    let tripled: Vec<f64> = scores.iter().map(|s| 3.0 * s).collect();
    let t3 = fit_temperature(&tripled, &labels, TemperatureObjective::Nll).unwrap().temperature;
    assert!((t3.ln() - (3.0 * base).ln()).abs() <= step + 1e-9, "{base} vs {t3}");
    assert!((GRID_MIN..=GRID_MAX).contains(&t3));
}

proptest! {
    #[test]
    fn accuracy_invariant_under_monotone_transform(conf in proptest::collection::vec(0.0f64..=1.0, 1..50), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = conf.iter().map(|_| rng.random()).collect();
        // Odd-power squash around 0.5 is strictly increasing and fixes 0.5.
        let squashed: Vec<f64> = conf.iter().map(|c| 0.5 + 4.0 * (c - 0.5).powi(3)).collect();
        prop_assert_eq!(
            accuracy_at_threshold(&conf, &labels, 0.5).unwrap(),
            accuracy_at_threshold(&squashed, &labels, 0.5).unwrap()
        );
    }
}
