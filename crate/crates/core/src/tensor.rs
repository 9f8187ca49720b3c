//! Dense row-major tensors and the primitive kernels every layer is built on.
//!
//! Images use the channel-first `(C, H, W)` layout. Tensors are immutable
//! values: every operation returns a new tensor, and the flat buffer is shared
//! behind an `Arc` so clones are cheap and threads may share them freely.

use std::fmt;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is used for training, `f64` for
/// finite-difference gradient checks.
pub trait Element:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * op(a) * op(b) + beta * c` over strided row-major buffers.
    ///
    /// # Safety
    /// Strides and dimensions must describe memory inside the given buffers.
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
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Whether a gemm operand is read transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// Safe gemm over contiguous row-major matrices.
///
/// `a` is stored as `(m, k)` (or `(k, m)` when transposed), `b` as `(k, n)`
/// (or `(n, k)`), `c` as `(m, n)`. With `accumulate` the product is added to
/// `c`, otherwise `c` is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: Trans,
    b: &[T],
    tb: Trans,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer size");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer size");
    assert_eq!(c.len(), m * n, "gemm: output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the buffer lengths were checked against (m, k, n) above and the
    // strides describe dense row-major storage of those shapes.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Max => "max",
        }
    }

    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            // ties resolve to the left operand
            BinaryOp::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Exp,
    Log,
    Neg,
    Relu,
    Sigmoid,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Neg => "neg",
            UnaryOp::Relu => "relu",
            UnaryOp::Sigmoid => "sigmoid",
        }
    }
}

/// Right-hand side of a binary elementwise op: a same-shape tensor or a scalar.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T: Element> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Dense n-dimensional array with row-major storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor<{}>{:?} ", T::NAME, self.shape)?;
        let head: Vec<_> = self.data.iter().take(PREVIEW).collect();
        if self.data.len() > PREVIEW {
            write!(f, "{head:?}..")
        } else {
            write!(f, "{head:?}")
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: vec![],
            reason: "shape must have at least one dimension".into(),
        });
    }
    if shape.iter().any(|&d| d < 1) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("expected {n} elements, got {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Builds a tensor from `f64` values, rounding to the element type.
    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
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

    /// Owned copy of the buffer (or the buffer itself when not shared).
    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Mutable access to the buffer, copying it first if it is shared.
    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Converts to another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "item() requires exactly one element".into(),
            });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::mismatch("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn flatten(&self) -> Self {
        Self {
            shape: vec![self.len()],
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts_unchecked(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::mismatch(op, &self.shape, &other.shape));
        }
        Ok(Self::from_parts_unchecked(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Elementwise binary op against a same-shape tensor or a scalar.
    pub fn binary(&self, op: BinaryOp, rhs: Operand<'_, T>) -> Result<Self> {
        match rhs {
            Operand::Tensor(b) => {
                if self.shape != b.shape {
                    return Err(Error::mismatch(op.name(), &self.shape, &b.shape));
                }
                if op == BinaryOp::Div {
                    if let Some(i) = b.data.iter().position(|v| v.is_zero()) {
                        return Err(Error::domain("div", format!("zero divisor at index {i}")));
                    }
                }
                Ok(Self::from_parts_unchecked(
                    self.shape.clone(),
                    self.data
                        .iter()
                        .zip(b.data.iter())
                        .map(|(&x, &y)| op.apply(x, y))
                        .collect(),
                ))
            }
            Operand::Scalar(s) => {
                if op == BinaryOp::Div && s.is_zero() {
                    return Err(Error::domain("div", "zero scalar divisor"));
                }
                Ok(self.map(|x| op.apply(x, s)))
            }
        }
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Self> {
        Ok(match op {
            UnaryOp::Exp => self.map(|x| x.exp()),
            UnaryOp::Log => {
                if let Some(i) = self.data.iter().position(|&v| v <= T::zero()) {
                    return Err(Error::domain(
                        "log",
                        format!("non-positive input {} at index {i}", self.data[i]),
                    ));
                }
                self.map(|x| x.ln())
            }
            UnaryOp::Neg => self.map(|x| -x),
            UnaryOp::Relu => self.map(|x| if x > T::zero() { x } else { T::zero() }),
            UnaryOp::Sigmoid => self.map(sigmoid),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(BinaryOp::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Matrix product of `(m, k)` and `(k, n)`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::mismatch("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, Trans::No, &other.data, Trans::No, &mut out, false);
        Ok(Self::from_parts_unchecked(vec![m, n], out))
    }

    pub fn transpose2d(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "transpose2d needs rank 2".into(),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self::from_parts_unchecked(vec![c, r], out))
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[&Self], axis: usize) -> Result<Self> {
        let first = tensors.first().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "concat needs at least one tensor".into(),
        })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange {
                op: "concat",
                axis,
                rank,
            });
        }
        for t in &tensors[1..] {
            let compatible = t.rank() == rank
                && t.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::mismatch("concat", &first.shape, &t.shape));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = tensors.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for t in tensors {
                let block = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Self::from_parts_unchecked(shape, data))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "slice",
                axis,
                rank: self.rank(),
            });
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("slice [{start}, {}) out of bounds on axis {axis}", start + len),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let ax = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ax * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self::from_parts_unchecked(shape, data))
    }

    /// Full reduction to a single value. Summation runs in index order.
    pub fn reduce_all(&self, op: ReduceOp) -> T {
        match op {
            ReduceOp::Sum => self.data.iter().copied().fold(T::zero(), |a, b| a + b),
            ReduceOp::Mean => {
                self.data.iter().copied().fold(T::zero(), |a, b| a + b)
                    / T::of(self.len() as f64)
            }
            ReduceOp::Max => self
                .data
                .iter()
                .copied()
                .fold(T::neg_infinity(), |a, b| if b > a { b } else { a }),
        }
    }

    /// Reduction along one axis, which is removed from the shape. Reducing
    /// the only axis of a vector yields shape `[1]`.
    pub fn reduce_axis(&self, op: ReduceOp, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "reduce",
                axis,
                rank: self.rank(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let ax = self.shape[axis];
        let init = match op {
            ReduceOp::Max => T::neg_infinity(),
            _ => T::zero(),
        };
        let mut out = vec![init; outer * inner];
        for o in 0..outer {
            for a in 0..ax {
                let src = &self.data[(o * ax + a) * inner..(o * ax + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = match op {
                        ReduceOp::Max => {
                            if s > *d {
                                s
                            } else {
                                *d
                            }
                        }
                        _ => *d + s,
                    };
                }
            }
        }
        if op == ReduceOp::Mean {
            let n = T::of(ax as f64);
            out.iter_mut().for_each(|v| *v = *v / n);
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Self::from_parts_unchecked(shape, out))
    }

    /// Order-independent fingerprint of the exact bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.data.iter() {
            let bits = v.as_f64().to_bits();
            h ^= bits;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}
