//! First-order parameter updates with a coupled L2 penalty.

use super::{Gradients, ParamStore};

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One update; `weight_decay · θ` is added to each gradient first.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, learning_rate: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads.get(id);
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.values.len() {
                let grad = g.map_or(0.0, |g| g[i]) + weight_decay * p.values[i];
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * grad;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * grad * grad;
                p.values[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPSILON);
            }
        }
    }
}

/// Plain gradient descent step.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, learning_rate: f64, weight_decay: f64) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let g = grads.get(id);
        let p = params.get_mut(id);
        for i in 0..p.values.len() {
            let grad = g.map_or(0.0, |g| g[i]) + weight_decay * p.values[i];
            p.values[i] -= learning_rate * grad;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{evaluate_with_gradients, Init};
    use rand::SeedableRng;

    #[test]
    fn first_adam_step_moves_each_coordinate_by_the_learning_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add("w", &[3], Init::Normal(1.0), &mut rng);
        let before = store.get(id).values.clone();
        let (_, grads) = evaluate_with_gradients(&store, |g, s| {
            let w = g.param(s, id);
            let sq = g.mul(w, w);
            g.sum(sq)
        })
        .unwrap();
        Adam::new(&store).step(&mut store, &grads, 0.01, 0.0);
        for (b, a) in before.iter().zip(&store.get(id).values) {
            assert!(((b - a).abs() - 0.01).abs() < 1e-8);
            assert!(a.abs() < b.abs());
        }
    }

    #[test]
    fn sgd_follows_the_gradient_plus_decay() {
        let mut store = ParamStore::new();
        let id = store.push("w".into(), vec![2], vec![1.0, -2.0]);
        let (_, grads) = evaluate_with_gradients(&store, |g, s| {
            let w = g.param(s, id);
            g.sum(w)
        })
        .unwrap();
        sgd_step(&mut store, &grads, 0.5, 0.1);
        assert_eq!(store.get(id).values, vec![1.0 - 0.5 * 1.1, -2.0 - 0.5 * (1.0 - 0.2)]);
    }
}
