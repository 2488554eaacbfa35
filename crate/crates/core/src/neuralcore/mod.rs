//! A small, deterministic network substrate.
//!
//! Layers: dense, 2-D convolution, batch normalization, ReLU, average
//! pooling, flatten and residual blocks. Networks are generic over the
//! scalar type: `f32` is the standard training precision and `f64` the
//! gradient-check precision.
//!
//! One top-level ReLU is the probe layer. Layers up to and including it form
//! `g(x; theta_g)`, the rest form `f(.; theta_f)`; `backward` accepts an extra
//! gradient injected at the probe output.

mod checkpoint;
mod gradcheck;
mod layers;
mod params;
mod spec;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport, LossEval, TensorCheck};
pub use layers::{backward, forward, ForwardTrace, Mode};
pub use params::{glorot_uniform, BatchNormParams, Gradients, LayerGrads, LayerParams, ParamStore};
pub use spec::{LayerSpec, NetworkSpec, Shape};

/// Arithmetic precision of a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit floats, used for training.
    Standard,
    /// 64-bit floats, used for finite-difference checks.
    Check,
}

/// Scalar types the network can run in.
pub trait Real:
    num_traits::Float
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const PRECISION: Precision;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must
    /// lie inside the corresponding buffer.
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

impl Real for f32 {
    const PRECISION: Precision = Precision::Standard;

    fn lit(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }

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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Check;

    fn lit(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row/column strides of a matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Layout { rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn transposed(cols: usize) -> Self {
        Layout { rs: 1, cs: cols }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs
        }
    }
}

/// Bounds-checked `c = a * b + beta * c` with `a: m x k`, `b: k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(la.max_index(m, k) < a.len(), "gemm: a out of bounds");
        assert!(lb.max_index(k, n) < b.len(), "gemm: b out of bounds");
    }
    assert!(lc.max_index(m, n) < c.len(), "gemm: c out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        )
    }
}

/// Dense row-major tensor. Batches are `[batch, channels, height, width]`
/// or `[batch, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, b: usize) -> &[T] {
        let l = self.item_len();
        &self.data[b * l..(b + 1) * l]
    }

    /// Rows `start..end` of the batch dimension.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor<T> {
        let l = self.item_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * l..end * l].to_vec(),
        }
    }

    /// Stacks two tensors along the batch dimension.
    pub fn concat_batch(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        assert_eq!(a.shape[1..], b.shape[1..], "concat_batch shape mismatch");
        let mut shape = a.shape.clone();
        shape[0] += b.shape[0];
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor { shape, data }
    }
}
