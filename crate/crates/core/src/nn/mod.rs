//! Minimal dense layers with hand-written backward passes.
//!
//! Activations are 5-D, laid out `(B, C, D, H, W)` row-major. Every layer
//! keeps whatever it needs for the backward pass from its last training
//! forward call; `forward_eval` never touches that cache.

mod adam;
mod conv;
mod linear;
mod norm;
mod pool;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, AdamState};
pub use conv::Conv3d;
pub use linear::Linear;
pub use norm::BatchNorm3d;
pub use pool::MaxPool3d;

/// Floating point type the network can run in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// `C = alpha * A B + beta * C` on strided row/column views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices of
    /// the stated sizes.
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

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }
}

impl Real for f32 {
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
}

impl Real for f64 {
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
}

/// Row-major `C (m x n) = alpha * op(A) op(B) + beta * C`, where `op`
/// transposes when the flag is set. `A` is stored `m x k` (or `k x m` when
/// transposed), `B` is `k x n` (or `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
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

/// Dense activation tensor `(B, C, D, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    pub data: Vec<T>,
    pub dims: [usize; 5],
}

impl<T: Real> Tensor5<T> {
    pub fn zeros(dims: [usize; 5]) -> Self {
        Self {
            data: vec![T::zero(); dims.iter().product()],
            dims,
        }
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<T>) -> Self {
        assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { data, dims }
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    /// `D * H * W`.
    pub fn volume(&self) -> usize {
        self.dims[2] * self.dims[3] * self.dims[4]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.volume()
    }

    pub fn item(&self, b: usize) -> &[T] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }
}

/// Trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn filled(len: usize, v: T) -> Self {
        Self::new(vec![v; len])
    }

    /// Uniform on `[-bound, bound]`, drawn in 64-bit so both precisions
    /// start from the same weights.
    pub fn uniform(len: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        Self::new(
            (0..len)
                .map(|_| T::of(rng.gen_range(-bound..=bound)))
                .collect(),
        )
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Output extent of a windowed operator along one axis.
pub fn output_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> usize {
    (input + 2 * pad).saturating_sub(kernel) / stride + 1
}

/// In-place ReLU.
pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward<T: Real>(output: &[T], grad: &mut [T]) {
    for (g, y) in grad.iter_mut().zip(output) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}
