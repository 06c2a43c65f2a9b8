//! Parameter vectors and the per-iteration set of local models.

use std::ops::Deref;

use crate::{Error, Result};

/// A flat vector of model parameters.
///
/// Every model, local update, crafted model and aggregate in the crate is one
/// of these. Values are finite whenever a vector crosses a public API.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    /// Wraps `values`, rejecting empty input and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vectors have positive dimension");
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim > 0, "parameter vectors have positive dimension");
        Self(vec![value; dim])
    }

    /// Internal constructor for values produced by arithmetic on finite inputs.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &ParameterVector) -> Result<ParameterVector> {
        check_dims(self, other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + scale * b).collect()))
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, got: self.dim() });
        }
        Ok(())
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

fn check_dims(a: &ParameterVector, b: &ParameterVector) -> Result<()> {
    b.check_dim(a.dim())
}

/// Checks that a slice of vectors is non-empty and shares one dimension,
/// returning that dimension.
pub(crate) fn common_dim(models: &[ParameterVector]) -> Result<usize> {
    let first = models.first().ok_or(Error::Empty("model set"))?;
    let d = first.dim();
    for m in &models[1..] {
        m.check_dim(d)?;
    }
    Ok(d)
}

/// Squared Euclidean distance without the dimension check.
#[inline]
pub(crate) fn squared_distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn squared_distance(a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(squared_distance_unchecked(a, b))
}

/// Euclidean distance between two parameter vectors of equal dimension.
pub fn euclidean_distance(a: &ParameterVector, b: &ParameterVector) -> Result<f64> {
    squared_distance(a, b).map(f64::sqrt)
}

/// Per-coordinate sign of `current - previous`, with exact ties mapped to +1.
pub fn signed_direction(current: &ParameterVector, previous: &ParameterVector) -> Result<ParameterVector> {
    check_dims(current, previous)?;
    Ok(ParameterVector(
        current
            .iter()
            .zip(previous.iter())
            .map(|(c, p)| if c < p { -1.0 } else { 1.0 })
            .collect(),
    ))
}

/// The local models submitted in one iteration, tagged with their device ids
/// and which of them are compromised.
#[derive(Clone, Debug)]
pub struct LocalModelSet {
    models: Vec<ParameterVector>,
    devices: Vec<usize>,
    compromised: Vec<bool>,
}

impl LocalModelSet {
    /// A full set of `m` models where devices `0..c` are compromised.
    pub fn new(models: Vec<ParameterVector>, c: usize) -> Result<Self> {
        let m = models.len();
        if 2 * c >= m {
            return Err(Error::config(format!(
                "compromised devices must be fewer than half: c={c}, m={m}"
            )));
        }
        let devices = (0..m).collect();
        let compromised = (0..m).map(|i| i < c).collect();
        Self::from_parts(models, devices, compromised)
    }

    /// A set built from arbitrary device ids, as produced by device
    /// subsampling or by a defense filter. The fewer-than-half constraint
    /// applies to the whole federation and is not re-checked here.
    pub fn from_parts(models: Vec<ParameterVector>, devices: Vec<usize>, compromised: Vec<bool>) -> Result<Self> {
        common_dim(&models)?;
        if devices.len() != models.len() || compromised.len() != models.len() {
            return Err(Error::config("device ids and compromised flags must match the model count"));
        }
        Ok(Self { models, devices, compromised })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn models(&self) -> &[ParameterVector] {
        &self.models
    }

    pub fn devices(&self) -> &[usize] {
        &self.devices
    }

    pub fn is_compromised(&self, position: usize) -> bool {
        self.compromised[position]
    }

    /// Positions (not device ids) of the compromised entries.
    pub fn compromised_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.compromised[i]).collect()
    }

    pub fn benign_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.compromised[i]).collect()
    }

    pub fn gather(&self, positions: &[usize]) -> Vec<ParameterVector> {
        positions.iter().map(|&i| self.models[i].clone()).collect()
    }

    pub fn replace(&mut self, position: usize, model: ParameterVector) -> Result<()> {
        model.check_dim(self.dim())?;
        self.models[position] = model;
        Ok(())
    }

    /// Keeps the entries at `positions`, in the given order.
    pub fn retain_positions(&self, positions: &[usize]) -> LocalModelSet {
        LocalModelSet {
            models: positions.iter().map(|&i| self.models[i].clone()).collect(),
            devices: positions.iter().map(|&i| self.devices[i]).collect(),
            compromised: positions.iter().map(|&i| self.compromised[i]).collect(),
        }
    }
}

impl Deref for LocalModelSet {
    type Target = [ParameterVector];

    fn deref(&self) -> &[ParameterVector] {
        &self.models
    }
}
