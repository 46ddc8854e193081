use std::collections::HashMap;

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    /// Row-major; an empty shape is a scalar.
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Running statistics are stored here too but never receive gradients.
    pub trainable: bool,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named parameter arrays with a gradient slot for each trainable one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    grads: Vec<Option<Vec<f64>>>,
    by_name: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {shape:?} but {} values",
                values.len()
            )));
        }
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.grads.push(trainable.then(|| vec![0.0; numel]));
        self.params.push(Parameter {
            name,
            shape,
            values,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    pub fn scalar(&self, id: ParamId) -> f64 {
        self.params[id.0].values[0]
    }

    pub fn vector(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[id.0].values[..])
    }

    pub fn matrix(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        assert_eq!(p.shape.len(), 2, "parameter `{}` is not a matrix", p.name);
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.values).expect("shape checked at registration")
    }

    /// Total number of stored values, trainable or not.
    pub fn total_values(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn trainable_values(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(Parameter::numel).sum()
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        self.grads[id.0].as_deref_mut()
    }

    pub(crate) fn param_and_grad_mut(&mut self, id: ParamId) -> (&mut Parameter, Option<&mut Vec<f64>>) {
        (&mut self.params[id.0], self.grads[id.0].as_mut())
    }

    /// Zeroed gradient buffers laid out like this store.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            slots: self
                .params
                .iter()
                .map(|p| p.trainable.then(|| vec![0.0; p.numel()]))
                .collect(),
        }
    }

    /// Adds `grads` into the store's gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&grads.slots) {
            if let (Some(mine), Some(theirs)) = (mine, theirs) {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Gradient buffers owned by one worker, merged into a store afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        self.slots[id.0].as_deref_mut()
    }

    fn slot(&mut self, id: ParamId) -> &mut [f64] {
        self.slots[id.0]
            .as_deref_mut()
            .expect("gradient written to a non-trainable parameter")
    }

    pub fn add_slice(&mut self, id: ParamId, g: &[f64]) {
        let slot = self.slot(id);
        assert_eq!(slot.len(), g.len());
        for (a, b) in slot.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn add_matrix(&mut self, id: ParamId, g: ArrayView2<'_, f64>) {
        let slot = self.slot(id);
        assert_eq!(slot.len(), g.len());
        for (a, b) in slot.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }

    pub fn add_vector(&mut self, id: ParamId, g: ArrayView1<'_, f64>) {
        let slot = self.slot(id);
        assert_eq!(slot.len(), g.len());
        for (a, b) in slot.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }

    pub fn add_scalar(&mut self, id: ParamId, g: f64) {
        self.slot(id)[0] += g;
    }

    pub fn add(&mut self, other: &Gradients) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let (Some(mine), Some(theirs)) = (mine, theirs) {
                for (a, b) in mine.iter_mut().zip(theirs) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
