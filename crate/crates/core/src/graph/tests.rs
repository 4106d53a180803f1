use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Reduces a node to a scalar through a fixed random projection so every
/// output coordinate contributes to the gradient.
fn project(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
    let mut r = rng(seed);
    let n = g.value(x).len();
    let shape = g.shape(x).to_vec();
    let w = g.input(Tensor::new(shape, random_vec(&mut r, n)));
    g.dot(x, w)
}

#[test]
fn square_has_derivative_six_at_three() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![1], vec![3.0]);
    let (value, grads) = evaluate_with_gradients(&store, |g, s| {
        let xn = g.param(s, x);
        g.mul(xn, xn)
    })
    .unwrap();
    assert_eq!(value, 9.0);
    assert_eq!(grads.get(x).unwrap(), &[6.0]);
}

#[test]
fn logsumexp_of_zeros() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![1, 2], vec![0.0, 0.0]);
    let (value, grads) = evaluate_with_gradients(&store, |g, s| {
        let xn = g.param(s, x);
        let l = g.logsumexp_rows(xn);
        g.sum(l)
    })
    .unwrap();
    assert!((value - 2f64.ln()).abs() < 1e-15);
    assert_eq!(grads.get(x).unwrap(), &[0.5, 0.5]);
}

#[test]
fn linear_function_check_is_exact() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let w = store.push("w".into(), vec![3, 2], random_vec(&mut r, 6));
    let b = store.push("b".into(), vec![2], random_vec(&mut r, 2));
    let xs = random_vec(&mut r, 12);
    let report = finite_difference_check(&mut store, 1e-2, |g, s| {
        let x = g.input(Tensor::matrix(4, 3, xs.clone()));
        let (wn, bn) = (g.param(s, w), g.param(s, b));
        let y = g.linear(x, wn, bn);
        g.sum(y)
    })
    .unwrap();
    assert_eq!(report.checked, 8);
    assert!(report.max_rel_error < 1e-10, "{report:?}");
}

#[test]
fn relu_kink_coordinate_is_excluded() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![3], vec![0.0, 1.0, -2.0]);
    let report = finite_difference_check(&mut store, 1e-5, |g, s| {
        let xn = g.param(s, x);
        let y = g.relu(xn);
        let w = g.input(Tensor::vector(vec![2.0, 3.0, 4.0]));
        g.dot(y, w)
    })
    .unwrap();
    assert_eq!(report.skipped_kinks, 1);
    assert_eq!(report.checked, 2);
    assert!(report.max_rel_error < 1e-8);
}

#[test]
fn relu_derivative_at_zero_is_zero() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![1], vec![0.0]);
    let (_, grads) = evaluate_with_gradients(&store, |g, s| {
        let xn = g.param(s, x);
        let y = g.relu(xn);
        g.sum(y)
    })
    .unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![2], vec![1.0, 2.0]);
    let mut g = Graph::new();
    let xn = g.param(&store, x);
    let y = g.scale(xn, 2.0);
    assert_eq!(g.backward(y).unwrap_err(), GraphError::NonScalarLoss(vec![2]));
}

#[test]
fn nan_reports_originating_primitive() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![2], vec![f64::MAX, 1.0]);
    let mut g = Graph::new();
    let xn = g.param(&store, x);
    let y = g.mul(xn, xn);
    let s = g.sum(y);
    match g.backward(s) {
        Err(GraphError::NonFinite { op, .. }) => assert_eq!(op, "mul"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn dropout_rejected_by_checker() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![4], vec![1.0; 4]);
    let err = finite_difference_check(&mut store, 1e-5, |g, s| {
        let xn = g.param(s, x);
        let y = g.dropout(xn, 0.5, &mut rng(3));
        g.sum(y)
    })
    .unwrap_err();
    assert_eq!(err, GraphError::DropoutEnabled);
}

#[test]
fn dropout_is_replayable_and_inverted() {
    let mut store = ParamStore::new();
    let x = store.push("x".into(), vec![1000], vec![1.0; 1000]);
    let run = |seed| {
        let mut g = Graph::new();
        let xn = g.param(&store, x);
        let y = g.dropout(xn, 0.1, &mut rng(seed));
        g.value(y).clone()
    };
    let a = run(9);
    assert_eq!(a, run(9));
    let kept = a.data().iter().filter(|&&v| v > 0.0).count();
    assert!((850..950).contains(&kept));
    assert!(a.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
}

#[test]
fn epsilon_bounds_enforced() {
    let mut store = ParamStore::new();
    store.push("x".into(), vec![1], vec![1.0]);
    let f = |g: &mut Graph, _: &ParamStore| g.input(Tensor::scalar(0.0));
    assert!(matches!(finite_difference_check(&mut store, 0.0, f), Err(GraphError::BadEpsilon(_))));
    assert!(matches!(finite_difference_check(&mut store, 0.1, f), Err(GraphError::BadEpsilon(_))));
}

#[test]
fn l2_normalize_zero_guard() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![0.0; 4]));
    let y = g.l2_normalize(x);
    assert_eq!(g.value(y).data(), &[1.0, 0.0, 0.0, 0.0]);
}

type Builder = fn(&mut Graph, &[NodeId]) -> NodeId;

/// One entry per primitive: parameter shapes and the builder applying it.
fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Builder)> {
    vec![
        ("add", vec![vec![2, 3], vec![2, 3]], |g, p| g.add(p[0], p[1])),
        ("sub", vec![vec![2, 3], vec![2, 3]], |g, p| g.sub(p[0], p[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |g, p| g.mul(p[0], p[1])),
        ("affine", vec![vec![5]], |g, p| g.affine(p[0], -1.7, 0.3)),
        ("matmul", vec![vec![2, 3], vec![3, 4]], |g, p| g.matmul(p[0], p[1])),
        ("transpose", vec![vec![2, 3]], |g, p| g.transpose(p[0])),
        ("add_row", vec![vec![3, 4], vec![4]], |g, p| g.add_row(p[0], p[1])),
        ("mul_row", vec![vec![3, 4], vec![4]], |g, p| g.mul_row(p[0], p[1])),
        ("sigmoid", vec![vec![6]], |g, p| g.sigmoid(p[0])),
        ("log", vec![vec![4]], |g, p| {
            let s = g.sigmoid(p[0]);
            g.log_clamped(s, 1e-12)
        }),
        ("softmax", vec![vec![2, 5]], |g, p| g.softmax_rows(p[0])),
        ("logsumexp", vec![vec![3, 4]], |g, p| g.logsumexp_rows(p[0])),
        ("layer_norm", vec![vec![2, 6]], |g, p| g.layer_norm_rows(p[0], 1e-5)),
        ("reshape", vec![vec![2, 3]], |g, p| g.reshape(p[0], vec![3, 2])),
        ("slice_cols", vec![vec![3, 5]], |g, p| g.slice_cols(p[0], 1, 3)),
        ("concat_cols", vec![vec![2, 2], vec![2, 3]], |g, p| g.concat_cols(&[p[0], p[1]])),
        ("stack", vec![vec![3], vec![3]], |g, p| g.stack(&[p[0], p[1]])),
        ("gather", vec![vec![2, 3]], |g, p| g.gather(p[0], vec![5, 0, 0, 3], vec![2, 2])),
        ("embed", vec![vec![4, 3]], |g, p| g.embed(p[0], &[2, 0, 2])),
        ("sum", vec![vec![4]], |g, p| {
            let s = g.sum(p[0]);
            g.mul(s, s)
        }),
        ("mean", vec![vec![4]], |g, p| {
            let s = g.mean(p[0]);
            g.mul(s, s)
        }),
        ("conv2d", vec![vec![2, 4, 5], vec![3, 2, 3, 3], vec![3]], |g, p| g.conv2d(p[0], p[1], p[2], 1, 1)),
        ("conv2d_stride", vec![vec![2, 5, 6], vec![3, 2, 3, 3], vec![3]], |g, p| g.conv2d(p[0], p[1], p[2], 2, 1)),
        ("global_avg_pool", vec![vec![3, 2, 4]], |g, p| g.global_avg_pool(p[0])),
        ("l2_normalize", vec![vec![5]], |g, p| g.l2_normalize(p[0])),
        ("dot", vec![vec![5], vec![5]], |g, p| g.dot(p[0], p[1])),
    ]
}

#[test]
fn smooth_primitives_pass_fd_at_twenty_points() {
    for (name, shapes, build) in primitive_cases() {
        for point in 0..20u64 {
            let mut r = rng(1000 + point);
            let mut store = ParamStore::new();
            let ids: Vec<ParamId> =
                shapes.iter().enumerate().map(|(i, s)| store.push(format!("p{i}"), s.clone(), random_vec(&mut r, s.iter().product()))).collect();
            let report = finite_difference_check(&mut store, 1e-5, |g, s| {
                let nodes: Vec<NodeId> = ids.iter().map(|&id| g.param(s, id)).collect();
                let y = build(g, &nodes);
                project(g, y, 77 + point)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{name} at point {point}: {report:?}");
            assert_eq!(report.skipped_kinks, 0, "{name} has no kinks");
        }
    }
}

#[test]
fn relu_passes_fd_excluding_kinks() {
    for point in 0..20u64 {
        let mut r = rng(500 + point);
        let mut store = ParamStore::new();
        let x = store.push("x".into(), vec![8], random_vec(&mut r, 8));
        let report = finite_difference_check(&mut store, 1e-5, |g, s| {
            let xn = g.param(s, x);
            let y = g.relu(xn);
            project(g, y, point)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn backward_is_linear_in_summed_losses() {
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let w = store.push("w".into(), vec![4, 3], random_vec(&mut r, 12));
        let v = store.push("v".into(), vec![3], random_vec(&mut r, 3));
        let xs = random_vec(&mut r, 8);
        let loss_a = |g: &mut Graph, s: &ParamStore| {
            let x = g.input(Tensor::matrix(2, 4, xs.clone()));
            let wn = g.param(s, w);
            let h = g.matmul(x, wn);
            let h = g.sigmoid(h);
            let l = g.logsumexp_rows(h);
            g.sum(l)
        };
        let loss_b = |g: &mut Graph, s: &ParamStore| {
            let wn = g.param(s, w);
            let vn = g.param(s, v);
            let vn = g.reshape(vn, vec![3, 1]);
            let t = g.matmul(wn, vn);
            let t = g.relu(t);
            g.dot(t, t)
        };
        let (_, ga) = evaluate_with_gradients(&store, loss_a).unwrap();
        let (_, gb) = evaluate_with_gradients(&store, loss_b).unwrap();
        let (_, gsum) = evaluate_with_gradients(&store, |g, s| {
            let a = loss_a(g, s);
            let b = loss_b(g, s);
            g.add(a, b)
        })
        .unwrap();
        let mut expected = ga.clone();
        expected.add_assign(&gb);
        for id in [w, v] {
            for (x, y) in gsum.get(id).unwrap().iter().zip(expected.get(id).unwrap()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
