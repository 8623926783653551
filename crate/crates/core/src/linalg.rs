/// `c = a * b` for dense `m x k` and `k x n` operands given by row and
/// column strides; `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    gemm_acc(m, k, n, a, rsa, csa, b, rsb, csb, 0.0, c);
}

/// `c = a * b + beta * c`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa as usize + (k - 1) * csa as usize);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb as usize + (n - 1) * csb as usize);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
