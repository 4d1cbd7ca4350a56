//! Minimal dense numerical kernel with hand-written backward passes.
//!
//! Everything is generic over [`Real`] so the exact code that trains in
//! `f32` can be re-run in `f64` for finite-difference verification.
//! Reductions run in a fixed sequential order; results are bitwise
//! reproducible for identical inputs.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod params;
pub mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub use adam::{AdamConfig, AdamState};
pub use attention::{CausalSelfAttention, CausalTransformer, TransformerBlock};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layers::{Activation, LayerNorm, Linear, Mlp};
pub use params::{Param, ParamId, ParamSet};
pub use tensor::Tensor;

/// Scalar type of the kernel.
pub trait Real:
    Float + Default + Debug + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + DivAssign + Sum
{
    /// `C = alpha * op(A) * op(B) + beta * C` on row-major storage, where
    /// `op(A)` is `m x k` and `op(B)` is `k x n`. A transposed operand is
    /// stored in its untransposed layout.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    // Logical operand is rows x cols.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                n: usize,
                k: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: A too short");
                assert!(b.len() >= k * n, "gemm: B too short");
                assert!(c.len() >= m * n, "gemm: C too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(trans_a, m, k);
                let (rsb, csb) = strides(trans_b, k, n);
                // SAFETY: the assertions above bound every index the kernel
                // touches: A is m x k, B is k x n, C is m x n, all dense.
                unsafe {
                    $gemm(
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

            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[inline]
pub(crate) fn c<T: Real>(x: f64) -> T {
    T::from_f64(x)
}
