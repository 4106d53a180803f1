use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable array with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Zero-mean Gaussian with the given standard deviation.
    Normal(f64),
    /// He initialisation for ReLU layers: N(0, 2 / fan_in).
    He {
        fan_in: usize,
    },
    /// Glorot-style N(0, 1 / fan_in) for linear outputs.
    Lecun {
        fan_in: usize,
    },
}

/// Owns every trainable parameter of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let std = match init {
            Init::Zeros | Init::Ones => 0.0,
            Init::Normal(s) => s,
            Init::He { fan_in } => (2.0 / fan_in.max(1) as f64).sqrt(),
            Init::Lecun { fan_in } => (1.0 / fan_in.max(1) as f64).sqrt(),
        };
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            _ => {
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
        };
        self.push(name.into(), shape.to_vec(), values)
    }

    /// Registers a parameter with explicit values (used by checkpoint loading).
    pub fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let grad = vec![0.0; values.len()];
        self.params.push(Parameter { name, shape, values, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                for (acc, v) in p.grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.values.iter().all(|v| v.is_finite()))
    }
}

/// Gradients produced by one backward pass, indexed like the store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the parameter did not take part in the computation.
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        if self.per_param.len() < other.per_param.len() {
            self.per_param.resize(other.per_param.len(), None);
        }
        for (mine, theirs) in self.per_param.iter_mut().zip(&other.per_param) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.iter_mut().zip(t).for_each(|(a, b)| *a += b),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }
}
