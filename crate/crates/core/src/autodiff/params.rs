use std::ops::Index;

use rand::Rng;

use super::matrix::Matrix;
use super::tape::{Tape, Var};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable matrices in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Registers a `rows x cols` matrix drawn uniformly from
    /// `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
        self.add(name, m)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference, no gradients).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Wraps variables already on a tape, in `ParamSet` order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradients for every parameter, zeros where no gradient reached.
    pub fn grads(&self) -> Vec<Matrix> {
        self.vars
            .iter()
            .map(|v| {
                v.grad().unwrap_or_else(|| {
                    let (r, c) = v.shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;

    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}
