use std::collections::HashMap;
use std::ops::{Index, IndexMut};

use rand::Rng;

use super::Mat;
use crate::error::{Error, Result};

/// Half-width of the uniform weight initialisation.
pub const INIT_RANGE: f64 = 0.1;

/// Handle to one tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter values, indexed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params(Vec<Mat>);

/// Gradient buffers aligned one-to-one with a [`Params`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(Vec<Mat>);

impl Index<ParamId> for Params {
    type Output = Mat;
    fn index(&self, id: ParamId) -> &Mat {
        &self.0[id.0]
    }
}

impl IndexMut<ParamId> for Params {
    fn index_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.0[id.0]
    }
}

impl Params {
    pub fn iter(&self) -> impl Iterator<Item = &Mat> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Index<ParamId> for Gradients {
    type Output = Mat;
    fn index(&self, id: ParamId) -> &Mat {
        &self.0[id.0]
    }
}

impl IndexMut<ParamId> for Gradients {
    fn index_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.0[id.0]
    }
}

impl Gradients {
    /// Zero buffers shaped like `params`.
    pub fn zeros_like(params: &Params) -> Self {
        Gradients(params.0.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mat> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.0.iter_mut()
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| g.scale(s));
    }

    /// Global L2 norm over every buffer.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(Mat::norm_sq).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Shape {
                op: "Gradients::add_assign",
                left: (self.0.len(), 1),
                right: (other.0.len(), 1),
            });
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// measured before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Named tensors with paired gradient buffers.
///
/// `values` and `grads` are public fields so a backward pass can read the
/// former while accumulating into the latter.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    pub values: Params,
    pub grads: Gradients,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.names.len());
        self.grads.0.push(Mat::zeros(value.rows(), value.cols()));
        self.values.0.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id]
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|id| &self.values[id])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        let id = self.id(name)?;
        Some(&mut self.values[id])
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.grads[id]
    }

    pub fn zero_grads(&mut self) {
        self.grads.zero();
    }

    /// Fresh zeroed gradient buffers for this store's shapes.
    pub fn gradient_buffer(&self) -> Gradients {
        Gradients::zeros_like(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Replaces values by name, checking that names and shapes agree.
    pub fn load_values(&mut self, tensors: Vec<(String, Mat)>) -> Result<()> {
        if tensors.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                tensors.len()
            )));
        }
        for (name, value) in tensors {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if self.values[id].shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected {:?}, found {:?}",
                    self.values[id].shape(),
                    value.shape()
                )));
            }
            self.values[id] = value;
        }
        Ok(())
    }
}

/// `rows x cols` matrix with entries uniform in `(-INIT_RANGE, INIT_RANGE)`.
pub fn uniform_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    Mat::new(rows, cols, data).expect("finite init")
}
