//! Dense row-major tensors over a generic real scalar.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type usable by the engine. Implemented for `f32` (training) and
/// `f64` (gradient checking).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::contract("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for shape {shape:?}", numel(shape)),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = numel(shape);
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape("item", "one element", format!("{:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", self.data.len()),
                format!("{shape:?}"),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn index_axis0(&self, index: usize) -> Self {
        let inner = numel(&self.shape[1..]);
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_axis0(&self, start: usize, end: usize) -> Result<Self> {
        if self.rank() == 0 || start >= end || end > self.shape[0] {
            return Err(Error::contract("slice_axis0", format!("range {start}..{end} of {:?}", self.shape)));
        }
        let inner = numel(&self.shape[1..]);
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        })
    }

    /// Gather leading-axis rows by index.
    pub fn select_axis0(&self, indices: &[usize]) -> Result<Self> {
        if self.rank() == 0 || indices.is_empty() || indices.iter().any(|&i| i >= self.shape[0]) {
            return Err(Error::contract("select_axis0", format!("indices {indices:?} of {:?}", self.shape)));
        }
        let inner = numel(&self.shape[1..]);
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::contract("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", format!("{:?}", first.shape), format!("{:?}", t.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Concatenate along an existing axis.
    pub fn concat(items: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::contract("concat", "no tensors to concatenate"))?;
        if axis >= first.rank() {
            return Err(Error::contract("concat", format!("axis {axis} out of range")));
        }
        for t in items {
            let ok = t.rank() == first.rank()
                && t.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?}", first.shape), format!("{:?}", t.shape)));
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let total_axis: usize = items.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for t in items {
                let chunk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Tensor { shape, data })
    }

    /// Non-overlapping `k`×`k` average pooling over the last two axes.
    pub fn avg_pool2d(&self, k: usize) -> Result<Self> {
        if self.rank() < 2 || k == 0 {
            return Err(Error::contract("avg_pool2d", "needs rank >= 2 and k >= 1"));
        }
        let r = self.rank();
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        if h % k != 0 || w % k != 0 {
            return Err(Error::shape(
                "avg_pool2d",
                format!("spatial dims divisible by {k}"),
                format!("{h}x{w}"),
            ));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let (ho, wo) = (h / k, w / k);
        let planes = numel(&self.shape[..r - 2]);
        let norm = T::one() / T::of((k * k) as f64);
        let mut data = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..h {
                for x in 0..w {
                    dst[(y / k) * wo + x / k] += src[y * w + x];
                }
            }
            for v in dst.iter_mut() {
                *v *= norm;
            }
        }
        let mut shape = self.shape.clone();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Ok(Tensor { shape, data })
    }
}
