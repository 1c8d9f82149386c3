// SPDX-License-Identifier: Apache-2.0
use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::Real(v) => v.len(),
            Data::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Data::Complex(_))
    }

    pub fn zeros_like(&self) -> Data {
        match self {
            Data::Real(v) => Data::Real(vec![0.0; v.len()]),
            Data::Complex(v) => Data::Complex(vec![Complex64::new(0.0, 0.0); v.len()]),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Data) {
        match (self, other) {
            (Data::Real(a), Data::Real(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (Data::Complex(a), Data::Complex(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            _ => unreachable!("gradient kind mismatch"),
        }
    }

    /// Real scalars; complex entries expand to `(re, im)` pairs.
    pub fn to_reals(&self) -> Vec<f64> {
        match self {
            Data::Real(v) => v.clone(),
            Data::Complex(v) => v.iter().flat_map(|c| [c.re, c.im]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Data::Real(v) => v.iter().all(|x| x.is_finite()),
            Data::Complex(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }
}

/// A dense n-dimensional array of real or complex values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Data,
}

impl Tensor {
    pub fn real(dims: &[usize], values: Vec<f64>) -> Result<Tensor> {
        Self::new(dims, Data::Real(values))
    }

    pub fn complex(dims: &[usize], values: Vec<Complex64>) -> Result<Tensor> {
        Self::new(dims, Data::Complex(values))
    }

    pub fn new(dims: &[usize], data: Data) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Graph(format!(
                "dims {dims:?} hold {n} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Tensor {
        Tensor {
            dims: dims.to_vec(),
            data: Data::Real(vec![0.0; dims.iter().product()]),
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            dims: vec![1],
            data: Data::Real(vec![v]),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Data {
        &mut self.data
    }

    pub fn is_complex(&self) -> bool {
        self.data.is_complex()
    }

    pub fn as_real(&self) -> Result<&[f64]> {
        match &self.data {
            Data::Real(v) => Ok(v),
            Data::Complex(_) => Err(Error::Graph("expected a real tensor, found complex".into())),
        }
    }

    pub fn as_complex(&self) -> Result<&[Complex64]> {
        match &self.data {
            Data::Complex(v) => Ok(v),
            Data::Real(_) => Err(Error::Graph("expected a complex tensor, found real".into())),
        }
    }

    pub fn item(&self) -> Result<f64> {
        match &self.data {
            Data::Real(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(Error::Graph(format!(
                "tensor of dims {:?} is not a real scalar",
                self.dims
            ))),
        }
    }

    pub fn into_data(self) -> Data {
        self.data
    }
}

/// Named, ordered model parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Graph(format!("duplicate parameter `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Number of real scalars (complex entries count twice).
    pub fn scalar_count(&self) -> usize {
        self.tensors
            .iter()
            .map(|t| if t.is_complex() { 2 * t.len() } else { t.len() })
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().all_finite())
    }
}
