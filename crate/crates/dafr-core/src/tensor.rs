//! Dense NCHW tensors.
//!
//! The whole engine works on 4-D row-major tensors laid out
//! `(batch, channels, height, width)` with `width` contiguous. Keeping a
//! single layout everywhere means layer code can hand out contiguous
//! per-channel planes (`plane`/`plane_mut`) and run its inner loops over
//! plain slices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::{Error, Result};

/// Element type for tensors and parameters.
///
/// `f32` is the working precision for training and inference; `f64` exists
/// so gradients can be finite-difference checked without float noise
/// drowning the signal.
pub trait Scalar:
    Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Default + Copy + Send + Sync + 'static
{
    /// Short name recorded in checkpoint metadata (`"f32"` / `"f64"`).
    const LABEL: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const LABEL: &'static str = "f32";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const LABEL: &'static str = "f64";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dimensions of a 4-D tensor: `(n, c, h, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Total element count, or `Error::SizeOverflow`.
    pub fn checked_len(&self) -> Result<usize> {
        self.n
            .checked_mul(self.c)
            .and_then(|x| x.checked_mul(self.h))
            .and_then(|x| x.checked_mul(self.w))
            .ok_or(Error::SizeOverflow)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// A dense NCHW tensor owning its storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Allocates a tensor filled with `value`.
    pub fn filled(shape: Shape, value: T) -> Result<Self> {
        let len = shape.checked_len()?;
        Ok(Tensor {
            shape,
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    /// Wraps an existing buffer; `data.len()` must equal the shape's element count.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        let len = shape.checked_len()?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "buffer has {} elements but shape {} needs {}",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(
            n < self.shape.n && c < self.shape.c && h < self.shape.h && w < self.shape.w,
            "index ({n}, {c}, {h}, {w}) out of bounds for {}",
            self.shape
        );
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous `h*w` slice for one (batch, channel) plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let start = self.offset(n, c, 0, 0);
        let hw = self.shape.h * self.shape.w;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let start = self.offset(n, c, 0, 0);
        let hw = self.shape.h * self.shape.w;
        &mut self.data[start..start + hw]
    }

    /// One contiguous row of a plane.
    #[inline]
    pub fn row(&self, n: usize, c: usize, h: usize) -> &[T] {
        let start = self.offset(n, c, h, 0);
        &self.data[start..start + self.shape.w]
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{op} operands have shapes {} and {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    pub fn scale(&self, k: T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&a| a * k).collect(),
        }
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        debug_assert!(lo <= hi);
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&a| if a < lo { lo } else if a > hi { hi } else { a })
                .collect(),
        }
    }

    /// Concatenates along the channel axis: `(n, c1, h, w) ++ (n, c2, h, w)`
    /// becomes `(n, c1+c2, h, w)` with `self`'s channels first.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let (a, b) = (self.shape, other.shape);
        if a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(Error::ShapeMismatch(format!(
                "concat_channels operands have shapes {a} and {b}"
            )));
        }
        let shape = Shape::new(a.n, a.c + b.c, a.h, a.w);
        let mut data = Vec::with_capacity(shape.checked_len()?);
        let hw = a.h * a.w;
        for n in 0..a.n {
            data.extend_from_slice(&self.data[n * a.c * hw..(n + 1) * a.c * hw]);
            data.extend_from_slice(&other.data[n * b.c * hw..(n + 1) * b.c * hw]);
        }
        Ok(Tensor { shape, data })
    }

    /// Copies out the channel range `from..to`.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.shape.c {
            return Err(Error::InvalidArgument(format!(
                "channel slice {from}..{to} invalid for {} channels",
                self.shape.c
            )));
        }
        let shape = Shape::new(self.shape.n, to - from, self.shape.h, self.shape.w);
        let hw = self.shape.h * self.shape.w;
        let mut data = Vec::with_capacity(shape.checked_len()?);
        for n in 0..self.shape.n {
            let start = (n * self.shape.c + from) * hw;
            data.extend_from_slice(&self.data[start..start + (to - from) * hw]);
        }
        Ok(Tensor { shape, data })
    }

    /// Stacks single-sample tensors along the batch axis.
    pub fn stack(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let s = first.shape;
        let mut n_total = 0usize;
        for p in parts {
            if p.shape.c != s.c || p.shape.h != s.h || p.shape.w != s.w {
                return Err(Error::ShapeMismatch(format!(
                    "stack operands have shapes {} and {}",
                    s, p.shape
                )));
            }
            n_total += p.shape.n;
        }
        let shape = Shape::new(n_total, s.c, s.h, s.w);
        let mut data = Vec::with_capacity(shape.checked_len()?);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    /// Lossy precision cast (used by the f64 gradient-check path).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&a| U::from_f64(a.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}
