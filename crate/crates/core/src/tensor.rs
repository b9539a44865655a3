//! Dense rank-4 tensors in `[batch, height, width, channel]` layout.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Floating point precision of a model or tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Single => f.write_str("single"),
            Precision::Double => f.write_str("double"),
        }
    }
}

/// Real scalar type usable for tensors: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
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
    + 'static
{
    const PRECISION: Precision;

    /// `c = alpha * a * b + beta * c` on strided row-major views.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must lie
    /// inside the pointed-to allocations, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// A strided row-major matrix view used to describe GEMM operands.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatView {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatView {
    pub fn dense(rows: usize, cols: usize) -> Self {
        MatView {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatView {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

/// Bounds-checked `c = a·b + beta·c`.
pub(crate) fn gemm<T: Scalar>(a: &[T], av: MatView, b: &[T], bv: MatView, beta: T, c: &mut [T], cv: MatView) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    assert!(av.max_index() < a.len().max(1) || av.cols == 0);
    assert!(bv.max_index() < b.len().max(1) || bv.rows == 0);
    assert!(cv.max_index() < c.len());
    // SAFETY: extents checked above; `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            av.rows,
            av.cols,
            bv.cols,
            T::one(),
            a.as_ptr(),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr(),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}

/// Dimensions of a rank-4 tensor: batch, height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(b: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        let s = Shape4 { b, h, w, c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(Error::Shape(format!("zero-sized dimension in {self}")));
        }
        [self.b, self.h, self.w, self.c]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= isize::MAX as usize)
            .ok_or_else(|| Error::Shape(format!("element count of {self} overflows")))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.b * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub fn per_sample(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn with_batch(&self, b: usize) -> Shape4 {
        Shape4 { b, ..*self }
    }

    #[inline]
    pub fn offset(&self, b: usize, h: usize, w: usize, c: usize) -> usize {
        debug_assert!(b < self.b && h < self.h && w < self.w && c < self.c);
        ((b * self.h + h) * self.w + w) * self.c + c
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.b, self.h, self.w, self.c]
    }
}

impl Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.b, self.h, self.w, self.c)
    }
}

/// Dense tensor stored row-major in `(b, h, w, c)` order.
#[derive(Clone, PartialEq)]
pub struct Tensor4<T: Scalar> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor4 {
            shape,
            data: vec![T::zero(); shape.len()],
        })
    }

    pub fn full(shape: Shape4, value: T) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor4 {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    /// He-normal initialization: i.i.d. `N(0, 2 / fan_in)`.
    pub fn he_normal<R: Rng + ?Sized>(shape: Shape4, fan_in: usize, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        if fan_in == 0 {
            return Err(Error::Param("fan_in must be at least 1".into()));
        }
        let std = (2.0 / fan_in as f64).sqrt();
        let data = (0..shape.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
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

    pub fn get(&self, b: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.shape.offset(b, h, w, c)]
    }

    pub fn set(&mut self, b: usize, h: usize, w: usize, c: usize, v: T) {
        let i = self.shape.offset(b, h, w, c);
        self.data[i] = v;
    }

    /// Slice holding batch item `b`.
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.shape.per_sample();
        &self.data[b * n..(b + 1) * n]
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        Tensor4::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns `alpha * x + y`.
    pub fn axpy(alpha: T, x: &Self, y: &Self) -> Result<Self> {
        x.check_same_shape(y)?;
        Ok(Tensor4 {
            shape: y.shape,
            data: x.data.iter().zip(&y.data).map(|(&a, &b)| alpha * a + b).collect(),
        })
    }

    /// In place `self += alpha * x`.
    pub fn axpy_assign(&mut self, alpha: T, x: &Self) -> Result<()> {
        self.check_same_shape(x)?;
        for (y, &v) in self.data.iter_mut().zip(&x.data) {
            *y += alpha * v;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, alpha: T) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
