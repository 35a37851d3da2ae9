use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Element type of a [`Tensor`](super::Tensor).
///
/// Training runs in `f32`; gradient checks and reference computations run the
/// same graph in `f64`.
pub trait Scalar:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` over strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices of the
    /// given extents.
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

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix product `C (m×n) [+]= op(A) · op(B)`.
///
/// `A` is stored `m×k` (or `k×m` when `trans_a`), `B` is stored `k×n` (or
/// `n×k` when `trans_b`). With `accumulate` the product is added to `C`.
/// Large products are split over row blocks of `C`; each output element is
/// computed by the same kernel regardless of the split, so results do not
/// depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Scalar>(
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "matmul: A too short");
    assert!(b.len() >= k * n, "matmul: B too short");
    assert!(c.len() >= m * n, "matmul: C too short");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = T::zero());
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };

    const PAR_WORK: usize = 1 << 18;
    const MIN_ROWS: usize = 64;
    let threads = crate::parallel::current_threads();
    if threads > 1 && m * n * k >= PAR_WORK && m >= 2 * MIN_ROWS {
        let rows = (m.div_ceil(threads)).max(MIN_ROWS);
        let a_addr = a.as_ptr() as usize;
        let b_addr = b.as_ptr() as usize;
        crate::parallel::for_each_chunk_mut(&mut c[..m * n], rows * n, |block, cc| {
            let r0 = block * rows;
            let mr = cc.len() / n;
            let a_ptr = a_addr as *const T;
            let b_ptr = b_addr as *const T;
            // SAFETY: row block [r0, r0+mr) of A lies inside `a`; `cc` is a
            // disjoint row block of C.
            unsafe {
                T::gemm_raw(
                    mr,
                    k,
                    n,
                    T::one(),
                    a_ptr.offset(r0 as isize * rsa),
                    rsa,
                    csa,
                    b_ptr,
                    rsb,
                    csb,
                    beta,
                    cc.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
    } else {
        // SAFETY: extents checked by the asserts above.
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
}
