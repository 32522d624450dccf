//! Dense row-major tensors and the element-wise and structural operations the
//! evolution algebra is defined over.
//!
//! Every operation is a pure function returning a freshly materialized tensor.
//! Broadcasting never happens implicitly: binary operations demand identical
//! shapes and [`TensorOf::broadcast`] is the only way to expand a tensor.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::Scalar;

/// Axis extents of a tensor. Rank 0 is a scalar holding one element.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Number of elements (the empty product is 1).
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides, in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for axis in (0..self.0.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.0[axis + 1];
        }
        strides
    }

    /// Shape obtained by reordering axes; `perm[k]` names the source axis of
    /// output axis `k`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Shape, TensorError> {
        check_permutation(perm, self.rank())?;
        Ok(Shape(perm.iter().map(|&p| self.0[p]).collect()))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, d) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<usize>> for Shape {
    fn from(dims: Vec<usize>) -> Self {
        Shape(dims)
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(dims: [usize; N]) -> Self {
        Shape(dims.to_vec())
    }
}

impl<const N: usize> From<&[usize; N]> for Shape {
    fn from(dims: &[usize; N]) -> Self {
        Shape(dims.to_vec())
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }
}

/// Half-open `start..stop` range per axis, unit step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SliceSpec(Vec<(usize, usize)>);

impl SliceSpec {
    pub fn new(ranges: impl Into<Vec<(usize, usize)>>) -> Self {
        SliceSpec(ranges.into())
    }

    /// Spec selecting every element of `shape`.
    pub fn full(shape: &Shape) -> Self {
        SliceSpec(shape.dims().iter().map(|&d| (0, d)).collect())
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.0
    }

    /// Shape of the selection, or `OutOfBounds` if the spec does not fit.
    pub fn output_shape(&self, input: &Shape) -> Result<Shape, TensorError> {
        let fits = self.0.len() == input.rank()
            && self
                .0
                .iter()
                .zip(input.dims())
                .all(|(&(start, stop), &extent)| start <= stop && stop <= extent);
        if !fits {
            return Err(TensorError::OutOfBounds {
                spec: self.clone(),
                shape: input.clone(),
            });
        }
        Ok(Shape(self.0.iter().map(|&(start, stop)| stop - start).collect()))
    }

    /// Spec applied to the selection of `inner` within the input: composes two
    /// successive slices into one.
    pub fn compose(&self, inner: &SliceSpec) -> SliceSpec {
        SliceSpec(
            self.0
                .iter()
                .zip(&inner.0)
                .map(|(&(outer_start, _), &(start, stop))| (outer_start + start, outer_start + stop))
                .collect(),
        )
    }
}

impl fmt::Display for SliceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, (start, stop)) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{start}:{stop}")?;
        }
        write!(f, "]")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }

    pub fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Neg,
    Log,
    Exp,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Log => "log",
            UnaryOp::Exp => "exp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op} is undefined at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("{len} data elements do not fill shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("cannot reshape {from} ({} elements) to {to} ({} elements)", from.numel(), to.numel())]
    ElementCountMismatch { from: Shape, to: Shape },
    #[error("{perm:?} is not a permutation of 0..{rank}")]
    InvalidPermutation { perm: Vec<usize>, rank: usize },
    #[error("slice {spec} is out of bounds for shape {shape}")]
    OutOfBounds { spec: SliceSpec, shape: Shape },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("cannot broadcast {from} to {to}")]
    IncompatibleBroadcast { from: Shape, to: Shape },
}

fn check_permutation(perm: &[usize], rank: usize) -> Result<(), TensorError> {
    let mut seen = vec![false; rank];
    let ok = perm.len() == rank
        && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
    if ok {
        Ok(())
    } else {
        Err(TensorError::InvalidPermutation {
            perm: perm.to_vec(),
            rank,
        })
    }
}

/// Shape of `concat(a, b, axis)`.
pub fn concat_shape(a: &Shape, b: &Shape, axis: usize) -> Result<Shape, TensorError> {
    if axis >= a.rank() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: a.rank(),
        });
    }
    let compatible = a.rank() == b.rank()
        && a
            .dims()
            .iter()
            .zip(b.dims())
            .enumerate()
            .all(|(k, (x, y))| k == axis || x == y);
    if !compatible {
        return Err(TensorError::ShapeMismatch {
            op: "concat",
            left: a.clone(),
            right: b.clone(),
        });
    }
    let mut dims = a.dims().to_vec();
    dims[axis] += b.dims()[axis];
    Ok(Shape(dims))
}

/// Checks that `from` broadcasts to `to` under trailing-axis alignment.
pub fn check_broadcast(from: &Shape, to: &Shape) -> Result<(), TensorError> {
    let ok = from.rank() <= to.rank()
        && from
            .dims()
            .iter()
            .rev()
            .zip(to.dims().iter().rev())
            .all(|(&f, &t)| f == t || f == 1);
    if ok {
        Ok(())
    } else {
        Err(TensorError::IncompatibleBroadcast {
            from: from.clone(),
            to: to.clone(),
        })
    }
}

/// Odometer over the multi-indices of a shape in row-major order.
fn for_each_index(dims: &[usize], mut visit: impl FnMut(&[usize])) {
    if dims.contains(&0) {
        return;
    }
    let mut index = vec![0usize; dims.len()];
    loop {
        visit(&index);
        let mut axis = dims.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            index[axis] += 1;
            if index[axis] < dims[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
}

/// Dense tensor over scalar type `T`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorOf<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> TensorOf<T> {
    pub fn new(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(TensorOf { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        TensorOf {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        let data = vec![value; shape.numel()];
        TensorOf { shape, data }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for_each_index(shape.dims(), |idx| data.push(f(idx)));
        TensorOf { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        if index.len() != self.shape.rank()
            || index.iter().zip(self.shape.dims()).any(|(i, d)| i >= d)
        {
            return None;
        }
        let offset: usize = index
            .iter()
            .zip(self.shape.strides())
            .map(|(i, s)| i * s)
            .sum();
        Some(self.data[offset])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        TensorOf {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(TensorOf {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn binary(&self, op: BinaryOp, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, op.name(), |a, b| op.apply(a, b))
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.binary(BinaryOp::Mul, other)
    }

    /// `log` rejects non-positive elements instead of producing NaN.
    pub fn unary(&self, op: UnaryOp) -> Result<Self, TensorError> {
        match op {
            UnaryOp::Neg => Ok(self.map(|x| -x)),
            UnaryOp::Exp => Ok(self.map(|x| x.exp())),
            UnaryOp::Log => {
                // Written so that NaN is rejected too.
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                if let Some(bad) = self.data.iter().find(|x| !(**x > T::zero())) {
                    return Err(TensorError::Domain {
                        op: "log",
                        value: bad.to_f64().unwrap_or(f64::NAN),
                    });
                }
                Ok(self.map(|x| x.ln()))
            }
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    /// Element-wise `self ^ exponent`. A NaN produced from non-NaN operands
    /// (negative base, fractional exponent) is reported as a domain error.
    pub fn pow(&self, exponent: &Self) -> Result<Self, TensorError> {
        let out = self.zip_with(exponent, "pow", |b, e| b.powf(e))?;
        for ((&b, &e), &r) in self.data.iter().zip(&exponent.data).zip(&out.data) {
            if r.is_nan() && !b.is_nan() && !e.is_nan() {
                return Err(TensorError::Domain {
                    op: "pow",
                    value: b.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(out)
    }

    /// Optionally permutes axes (materializing the data), then reinterprets
    /// the row-major data under `target`.
    pub fn reshape(&self, target: &Shape, permutation: Option<&[usize]>) -> Result<Self, TensorError> {
        let source = match permutation {
            Some(perm) => self.transpose(perm)?,
            None => self.clone(),
        };
        if source.shape.numel() != target.numel() {
            return Err(TensorError::ElementCountMismatch {
                from: source.shape,
                to: target.clone(),
            });
        }
        Ok(TensorOf {
            shape: target.clone(),
            data: source.data,
        })
    }

    /// Axis permutation; output axis `k` is input axis `perm[k]`.
    pub fn transpose(&self, perm: &[usize]) -> Result<Self, TensorError> {
        let out_shape = self.shape.permuted(perm)?;
        let strides = self.shape.strides();
        let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let mut data = Vec::with_capacity(out_shape.numel());
        for_each_index(out_shape.dims(), |idx| {
            let offset: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            data.push(self.data[offset]);
        });
        Ok(TensorOf {
            shape: out_shape,
            data,
        })
    }

    pub fn slice(&self, spec: &SliceSpec) -> Result<Self, TensorError> {
        let out_shape = spec.output_shape(&self.shape)?;
        let strides = self.shape.strides();
        let base: usize = spec
            .ranges()
            .iter()
            .zip(&strides)
            .map(|(&(start, _), s)| start * s)
            .sum();
        let mut data = Vec::with_capacity(out_shape.numel());
        for_each_index(out_shape.dims(), |idx| {
            let offset: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[base + offset]);
        });
        Ok(TensorOf {
            shape: out_shape,
            data,
        })
    }

    /// Concatenation along `axis`; `self` precedes `other`.
    pub fn concat(&self, other: &Self, axis: usize) -> Result<Self, TensorError> {
        let out_shape = concat_shape(&self.shape, &other.shape, axis)?;
        let outer: usize = self.shape.dims()[..axis].iter().product();
        let inner: usize = self.shape.dims()[axis + 1..].iter().product();
        let a_chunk = self.shape.dims()[axis] * inner;
        let b_chunk = other.shape.dims()[axis] * inner;
        let mut data = Vec::with_capacity(out_shape.numel());
        for o in 0..outer {
            data.extend_from_slice(&self.data[o * a_chunk..(o + 1) * a_chunk]);
            data.extend_from_slice(&other.data[o * b_chunk..(o + 1) * b_chunk]);
        }
        Ok(TensorOf {
            shape: out_shape,
            data,
        })
    }

    /// Replicates along unit or missing leading axes to reach `target`.
    pub fn broadcast(&self, target: &Shape) -> Result<Self, TensorError> {
        check_broadcast(&self.shape, target)?;
        let lead = target.rank() - self.shape.rank();
        let strides = self.shape.strides();
        let src_dims = self.shape.dims();
        let mut data = Vec::with_capacity(target.numel());
        for_each_index(target.dims(), |idx| {
            let offset: usize = idx[lead..]
                .iter()
                .zip(src_dims)
                .zip(&strides)
                .map(|((&i, &d), &s)| if d == 1 { 0 } else { i * s })
                .sum();
            data.push(self.data[offset]);
        });
        Ok(TensorOf {
            shape: target.clone(),
            data,
        })
    }

    /// True iff shapes match and `|a - b| <= abs_tol + rel_tol * |b|` everywhere.
    pub fn all_close(&self, other: &Self, rel_tol: T, abs_tol: T) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == b || (a - b).abs() <= abs_tol + rel_tol * b.abs())
    }

    /// Largest absolute and relative (against `reference`) element deviation.
    /// Returns `None` when shapes differ.
    pub fn max_deviation(&self, reference: &Self) -> Option<(T, T)> {
        if self.shape != reference.shape {
            return None;
        }
        let mut max_abs = T::zero();
        let mut max_rel = T::zero();
        for (&a, &b) in self.data.iter().zip(&reference.data) {
            if a == b {
                continue;
            }
            let diff = (a - b).abs();
            let diff = if diff.is_nan() { T::infinity() } else { diff };
            max_abs = max_abs.max(diff);
            let rel = if b == T::zero() { diff } else { diff / b.abs() };
            max_rel = max_rel.max(rel);
        }
        Some((max_abs, max_rel))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts the element type, e.g. f64 to f32.
    pub fn cast<U: Scalar>(&self) -> TensorOf<U> {
        TensorOf {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRepr<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Serialize for TensorOf<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Borrowed<'a, T> {
            shape: &'a Shape,
            data: &'a [T],
        }
        Borrowed {
            shape: &self.shape,
            data: &self.data,
        }
        .serialize(serializer)
    }
}

impl<'de, T: Scalar + DeserializeOwned> Deserialize<'de> for TensorOf<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TensorRepr::<T>::deserialize(deserializer)?;
        TensorOf::new(repr.shape, repr.data).map_err(serde::de::Error::custom)
    }
}

impl<T: Scalar> fmt::Display for TensorOf<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tensor<")?;
        for (k, d) in self.shape.dims().iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ">[")?;
        for (k, x) in self.data.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:?}")?;
        }
        write!(f, "]")
    }
}
