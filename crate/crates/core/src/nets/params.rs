use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};

use super::Real;
use crate::error::{ensure, Result};

/// Ordered collection of named dense arrays.
///
/// Every network role (extractor, classifier, discriminator) owns one. The
/// flat view concatenates arrays in insertion order, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<ArrayD<T>>,
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        ParameterSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: ArrayD<T>) {
        self.names.push(name.into());
        self.tensors.push(tensor.as_standard_layout().into_owned());
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[ArrayD<T>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensor(&self, i: usize) -> &ArrayD<T> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut ArrayD<T> {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub(crate) fn matrix(&self, i: usize) -> ArrayView2<'_, T> {
        self.tensors[i].view().into_dimensionality::<Ix2>().expect("2-d parameter")
    }

    pub(crate) fn vector(&self, i: usize) -> ArrayView1<'_, T> {
        self.tensors[i].view().into_dimensionality::<Ix1>().expect("1-d parameter")
    }

    pub(crate) fn matrix_mut(&mut self, i: usize) -> ArrayViewMut2<'_, T> {
        self.tensors[i]
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2-d parameter")
    }

    pub(crate) fn vector_mut(&mut self, i: usize) -> ArrayViewMut1<'_, T> {
        self.tensors[i]
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("1-d parameter")
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(ArrayD::len).sum()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn same_shape(&self, other: &ParameterSet<T>) -> bool {
        self.names == other.names && self.shapes() == other.shapes()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ArrayD::zeros(IxDyn(t.shape())))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in &self.tensors {
            out.extend(t.iter().copied());
        }
        out
    }

    /// Overwrites every entry from a flat vector produced by [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        ensure!(
            flat.len() == self.num_params(),
            "flat vector has {} entries, parameter set has {}",
            flat.len(),
            self.num_params()
        );
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            for (dst, &src) in t.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = src;
            }
            offset += n;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|x| U::from_f64(x.to_f64().unwrap_or(0.0)).unwrap_or(U::zero())))
                .collect(),
        }
    }

    /// `self += scale * other`, entrywise.
    pub fn add_scaled(&mut self, scale: T, other: &ParameterSet<T>) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.scaled_add(scale, b);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }
}

/// Clamps every entry to `[-c, c]` in place.
pub fn clip_weights<T: Real>(params: &mut ParameterSet<T>, c: T) {
    debug_assert!(c > T::zero());
    for t in &mut params.tensors {
        t.mapv_inplace(|x| x.max(-c).min(c));
    }
}

/// Deep copy; the two sets share no storage afterwards.
pub fn copy_parameters<T: Real>(src: &ParameterSet<T>) -> ParameterSet<T> {
    src.clone()
}

/// Squared Euclidean distance between the flattened sets.
pub fn param_l2_distance<T: Real>(a: &ParameterSet<T>, b: &ParameterSet<T>) -> Result<T> {
    ensure!(a.same_shape(b), "parameter sets differ in layout");
    let mut acc = T::zero();
    for (x, y) in a.tensors.iter().zip(&b.tensors) {
        for (&p, &q) in x.iter().zip(y.iter()) {
            let d = p - q;
            acc += d * d;
        }
    }
    Ok(acc)
}

/// Gradient of [`param_l2_distance`] with respect to `b`: `2 (b - a)`.
pub fn param_l2_gradient<T: Real>(a: &ParameterSet<T>, b: &ParameterSet<T>) -> Result<ParameterSet<T>> {
    ensure!(a.same_shape(b), "parameter sets differ in layout");
    let mut g = b.clone();
    g.add_scaled(-T::one(), a);
    g.scale(T::one() + T::one());
    Ok(g)
}
