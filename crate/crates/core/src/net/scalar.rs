use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of a network. `f32` for production runs,
/// `f64` for gradient checking.
pub trait Scalar: Float + Sum + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Strided `C = alpha * A * B + beta * C` with `A: m x k`, `B: k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // SAFETY: all three buffers were checked to cover the
                // requested extents; the strides below describe dense
                // row-major or transposed-row-major views into them.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major matrix product `C (m x n) = op(A) * op(B) (+ C)`.
///
/// `a` holds `A` as `m x k`, or as `k x m` when `transpose_a`; likewise for
/// `b` (`k x n` or `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    transpose_a: bool,
    transpose_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let a_strides = if transpose_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let b_strides = if transpose_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_strided(m, k, n, T::one(), a, a_strides, b, b_strides, beta, c);
}
