//! Safe wrapper over the strided f64 GEMM kernel.

/// `c = a * b + beta * c` with `c` row-major `m x n` and `a`, `b` given by
/// row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output too small");
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm lhs out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm rhs out of bounds");
    // SAFETY: every index the kernel touches is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
