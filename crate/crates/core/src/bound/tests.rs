use super::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::f64::consts::LN_2;

/// Tuples (k, y, c, θ, p) for every cell with positive mass.
fn cells(j: &DiscreteJoint) -> Vec<(usize, usize, usize, usize, f64)> {
    let [nk, ny, nt] = j.sizes();
    let mut out = Vec::new();
    for k in 0..nk {
        for y in 0..ny {
            for t in 0..nt {
                let p = j.p(k, y, t);
                if p > 0.0 {
                    out.push((k, y, j.correct(k, y) as usize, t, p));
                }
            }
        }
    }
    out
}

fn marg<K: std::hash::Hash + Eq>(cs: &[(usize, usize, usize, usize, f64)], f: impl Fn(usize, usize, usize, usize) -> K) -> HashMap<K, f64> {
    let mut m = HashMap::new();
    for &(k, y, c, t, p) in cs {
        *m.entry(f(k, y, c, t)).or_insert(0.0) += p;
    }
    m
}

/// Oracle via log-ratio sums instead of entropy differences.
fn oracle(j: &DiscreteJoint) -> (f64, f64, f64) {
    let cs = cells(j);
    let p_k = marg(&cs, |k, _, _, _| k);
    let p_y = marg(&cs, |_, y, _, _| y);
    let p_t = marg(&cs, |_, _, _, t| t);
    let p_kt = marg(&cs, |k, _, _, t| (k, t));
    let p_ky = marg(&cs, |k, y, _, _| (k, y));
    let p_yc = marg(&cs, |_, y, c, _| (y, c));
    let p_yt = marg(&cs, |_, y, _, t| (y, t));
    let p_yct = marg(&cs, |_, y, c, t| (y, c, t));
    let i_tk: f64 = p_kt.iter().map(|(&(k, t), &p)| p * (p / (p_k[&k] * p_t[&t])).ln()).sum();
    let i_yk: f64 = p_ky.iter().map(|(&(k, y), &p)| p * (p / (p_k[&k] * p_y[&y])).ln()).sum();
    let eps: f64 = p_ky.iter().map(|(&(k, y), &p)| p * (p_yc[&(y, j.correct(k, y) as usize)] / p).ln()).sum();
    let mi: f64 = p_yct.iter().map(|(&(y, c, t), &p)| p * (p * p_y[&y] / (p_yc[&(y, c)] * p_yt[&(y, t)])).ln()).sum();
    (mi, i_tk - i_yk, eps)
}

#[test]
fn entropy_conventions() {
    assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    assert!((entropy(&[0.5, 0.5]) - LN_2).abs() < 1e-15);
    assert!((binary_entropy(0.5) - LN_2).abs() < 1e-15);
    assert_eq!(binary_entropy(0.0), 0.0);
}

#[test]
fn independent_states_carry_nothing() {
    let pk = [0.2, 0.5, 0.3];
    let py = [0.6, 0.4];
    let pt = [0.1, 0.9];
    let j = DiscreteJoint::from_fn([3, 2, 2], |k, y, t| pk[k] * py[y] * pt[t], |k, y| k == y).unwrap();
    let r = verify_main_bound(&j);
    assert!(r.mutual_information.abs() < 1e-12);
    assert!(r.delta <= 1e-12);
    assert!(r.holds);
}

#[test]
fn perfect_internal_knowledge_with_noisy_output() {
    // Θ = K, Y = K with probability 0.6, otherwise one of the other two values.
    let p = |k: usize, y: usize, t: usize| -> f64 {
        if t != k {
            return 0.0;
        }
        (1.0 / 3.0) * if y == k { 0.6 } else { 0.2 }
    };
    let j = DiscreteJoint::from_fn([3, 3, 3], p, |k, y| k == y).unwrap();
    let r = verify_main_bound(&j);
    assert!(r.delta > 0.0, "{r:?}");
    // Tight case: I(C;Θ|Y) = H_b(0.6) and Δ − ε = H(0.6, 0.2, 0.2) − 0.4 log 2 coincide.
    assert!(r.slack >= -1e-12 && r.holds, "{r:?}");
    assert!(r.slack.abs() < 1e-12);
    let (mi, delta, eps) = oracle(&j);
    assert!((mi - r.mutual_information).abs() < 1e-12);
    assert!((delta - r.delta).abs() < 1e-12);
    assert!((eps - r.epsilon).abs() < 1e-12);
}

#[test]
fn thousand_random_joints_satisfy_bound_and_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        use rand::Rng;
        let sizes = [rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(2..=4)];
        let j = DiscreteJoint::random(sizes, &mut rng).unwrap();
        let r = verify_main_bound(&j);
        assert!(r.holds, "trial {trial}: {r:?}");
        let (mi, delta, eps) = oracle(&j);
        assert!((mi - r.mutual_information).abs() < 1e-10, "trial {trial}");
        assert!((delta - r.delta).abs() < 1e-10);
        assert!((eps - r.epsilon).abs() < 1e-10);
    }
    let summary = verify_random_joints(1000, 1, 4);
    assert_eq!(summary.violations, 0);
    assert!(summary.min_slack >= -BOUND_TOLERANCE);
}

#[test]
fn joint_validation() {
    assert!(matches!(DiscreteJoint::new([1, 1, 2], vec![0.5, 0.6], vec![1]), Err(BoundError::Unnormalized(_))));
    assert!(matches!(DiscreteJoint::new([1, 1, 2], vec![1.5, -0.5], vec![1]), Err(BoundError::BadProbability(_))));
    assert!(matches!(DiscreteJoint::new([1, 1, 1], vec![1.0], vec![2]), Err(BoundError::BadRule(2))));
    assert!(matches!(DiscreteJoint::new([0, 1, 1], vec![], vec![]), Err(BoundError::EmptySupport(_))));
    assert!(DiscreteJoint::new([1, 1, 2], vec![0.5, 0.5], vec![0]).is_ok());
}

/// Brute-force I(C;Θ_b) from the explicit joint over (Θ_b, S_r, S_k, C).
fn regime_oracle(a: f64, b: f64, d: f64, e: f64) -> f64 {
    let p_c1 = |sr: usize, sk: usize| -> f64 {
        // Each signal votes for C with its own strength; votes are averaged.
        let vote_r = if sr == 1 { a } else { 1.0 - a };
        let vote_k = if sk == 1 { b } else { 1.0 - b };
        0.5 * (vote_r + vote_k)
    };
    let p_s = |s: usize, theta: usize, strength: f64| -> f64 {
        if s == theta {
            strength
        } else {
            1.0 - strength
        }
    };
    let mut joint = [[0.0f64; 2]; 2]; // [θ][c]
    for (theta, row) in joint.iter_mut().enumerate() {
        for sr in 0..2 {
            for sk in 0..2 {
                let w = 0.5 * p_s(sr, theta, d) * p_s(sk, theta, e);
                let c1 = p_c1(sr, sk);
                row[1] += w * c1;
                row[0] += w * (1.0 - c1);
            }
        }
    }
    let pc = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut mi = 0.0;
    for row in &joint {
        for c in 0..2 {
            let p = row[c];
            if p > 0.0 {
                mi += p * (p / (0.5 * pc[c])).ln();
            }
        }
    }
    mi
}

#[test]
fn regime_examples() {
    let full = RegimeParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
    assert_eq!(regime_conditionals(&full), (1.0, 0.0));
    assert!((regime_mutual_information(&full) - LN_2).abs() < 1e-12);
    for (a, b) in [(0.5, 0.5), (0.7, 0.9), (1.0, 0.6)] {
        let p = RegimeParams::new(a, b, 0.5, 0.5).unwrap();
        let (p1, p0) = regime_conditionals(&p);
        assert!((p1 - 0.5).abs() < 1e-15 && (p0 - 0.5).abs() < 1e-15);
        assert!(regime_mutual_information(&p) < 1e-12);
    }
    for eta in [0.6, 0.7, 0.9] {
        let p = RegimeParams::new(1.0, 1.0, eta, eta).unwrap();
        let closed = regime_mutual_information(&p);
        assert!((closed - (LN_2 - binary_entropy(eta))).abs() < 1e-12);
        assert!((closed - regime_oracle(1.0, 1.0, eta, eta)).abs() < 1e-12);
    }
}

#[test]
fn regime_matches_joint_enumeration_on_grid() {
    let grid = RegimeGrid::uniform(5);
    for p in grid.points().unwrap() {
        let closed = regime_mutual_information(&p);
        let brute = regime_oracle(p.alpha(), p.beta(), p.delta(), p.epsilon_informativeness());
        assert!((closed - brute).abs() < 1e-12, "{p:?}: {closed} vs {brute}");
    }
    assert_eq!(grid.points().unwrap().len(), 625);
}

#[test]
fn corners_behave_as_described() {
    let table = corner_rows();
    assert_eq!(table.rows.len(), 4);
    let by = |c: Corner| table.rows.iter().find(|r| r.corner == Some(c)).unwrap().clone();
    let hi = by(Corner::HighlyInformative);
    let g = hi.params.gamma();
    assert!((hi.mutual_information - (LN_2 - binary_entropy(g))).abs() < 1e-9);
    assert!(by(Corner::LittleInformation).mutual_information < 1e-9);
    assert!(by(Corner::NotCorrelated).mutual_information < 1e-9);
    let contrib = by(Corner::SignalsContribute);
    assert!((contrib.p1 - contrib.params.eta()).abs() < 1e-12);
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.contains("little_information,theta_b provides little information"));
}

#[test]
fn sweep_includes_corners_then_grid() {
    let t = sweep_regimes(&RegimeGrid::uniform(3)).unwrap();
    assert_eq!(t.rows.len(), 4 + 81);
    assert!(t.rows[..4].iter().all(|r| r.corner.is_some()));
    assert!(t.rows[4..].iter().all(|r| r.corner.is_none()));
    let empty = RegimeGrid { alpha: vec![], ..RegimeGrid::uniform(2) };
    assert!(matches!(sweep_regimes(&empty), Err(BoundError::EmptyGrid("alpha"))));
    let bad = RegimeGrid { alpha: vec![0.4], ..RegimeGrid::uniform(2) };
    assert!(sweep_regimes(&bad).is_err());
}

#[test]
fn params_out_of_range() {
    assert!(RegimeParams::new(0.49, 0.7, 0.5, 0.5).is_err());
    assert!(RegimeParams::new(0.7, 1.01, 0.5, 0.5).is_err());
    assert!(RegimeParams::new(0.7, 0.7, -0.1, 0.5).is_err());
    assert!(RegimeParams::new(0.7, 0.7, 0.5, f64::NAN).is_err());
}

proptest! {
    #[test]
    fn regime_mi_within_bounds(a in 0.5f64..=1.0, b in 0.5f64..=1.0, d in 0.0f64..=1.0, e in 0.0f64..=1.0) {
        let p = RegimeParams::new(a, b, d, e).unwrap();
        let mi = regime_mutual_information(&p);
        prop_assert!((0.0..=LN_2 + 1e-15).contains(&mi));
        let (p1, p0) = regime_conditionals(&p);
        prop_assert!((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p0));
        prop_assert!((p1 + p0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regime_symmetry(a in 0.5f64..=1.0, b in 0.5f64..=1.0, d in 0.0f64..=1.0, e in 0.0f64..=1.0) {
        let (p1, _) = regime_conditionals(&RegimeParams::new(a, b, d, e).unwrap());
        let (_, p0_mirror) = regime_conditionals(&RegimeParams::new(a, b, 1.0 - d, 1.0 - e).unwrap());
        prop_assert!((p1 - p0_mirror).abs() < 1e-12);
    }

    #[test]
    fn regime_matches_oracle_everywhere(a in 0.5f64..=1.0, b in 0.5f64..=1.0, d in 0.0f64..=1.0, e in 0.0f64..=1.0) {
        let p = RegimeParams::new(a, b, d, e).unwrap();
        prop_assert!((regime_mutual_information(&p) - regime_oracle(a, b, d, e)).abs() < 1e-12);
    }
}
