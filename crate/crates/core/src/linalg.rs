//! Dense kernels that nalgebra does not route through a blocked gemm.

use nalgebra::{DMatrix, DVector};

/// `C = Aᵀ B` for the column blocks `a[:, ac..ac+m]` and `b[:, bc..bc+n]`,
/// written into `out[or.., oc..]`.
#[allow(clippy::too_many_arguments)]
fn tr_mul_block(
    a: &DMatrix<f64>,
    (ac, m): (usize, usize),
    b: &DMatrix<f64>,
    (bc, n): (usize, usize),
    (r0, k): (usize, usize),
    out: &mut DMatrix<f64>,
    (or, oc): (usize, usize),
    beta: f64,
) {
    let lda = a.nrows();
    assert_eq!(lda, b.nrows(), "tr_mul: inner dimensions differ");
    assert!(r0 + k <= lda);
    assert!(ac + m <= a.ncols() && bc + n <= b.ncols());
    assert!(or + m <= out.nrows() && oc + n <= out.ncols());
    if k == 0 || m == 0 || n == 0 {
        return;
    }
    let ldo = out.nrows();
    // SAFETY: every pointer is offset to the start of an in-bounds block of
    // contiguous column-major storage, and the strides match those layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(ac * lda + r0),
            lda as isize,
            1,
            b.as_ptr().add(bc * lda + r0),
            1,
            lda as isize,
            beta,
            out.as_mut_ptr().add(or + oc * ldo),
            1,
            ldo as isize,
        );
    }
}

/// Computes `Aᵀ B` for column-major `a` (k × m) and `b` (k × n) with one gemm call.
///
/// `Matrix::tr_mul` in nalgebra falls back to column dot products, which is an
/// order of magnitude slower for the tall `d × bc` Jacobians used here.
pub(crate) fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "tr_mul: inner dimensions differ");
    let mut out = DMatrix::<f64>::zeros(a.ncols(), b.ncols());
    let k = a.nrows();
    tr_mul_block(a, (0, a.ncols()), b, (0, b.ncols()), (0, k), &mut out, (0, 0), 0.0);
    out
}

/// Computes `A B` for `a` (m × k) and `b` (k × n) through the same gemm kernel.
pub(crate) fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "mul: inner dimensions differ");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::<f64>::zeros(m, n);
    if k == 0 || m == 0 || n == 0 {
        return out;
    }
    // SAFETY: contiguous column-major buffers with matching extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    out
}

const GRAM_BLOCK: usize = 64;
const GRAM_CHUNK: usize = 1024;

/// Gram matrix `AᵀA`, computing only the upper block triangle.
///
/// Rows are consumed in chunks so each chunk stays cache-resident across the
/// block products.
pub(crate) fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.ncols();
    let mut g = DMatrix::<f64>::zeros(m, m);
    let (block, chunk) = (GRAM_BLOCK, GRAM_CHUNK);
    let k = a.nrows();
    let mut r0 = 0;
    while r0 < k {
        let kc = chunk.min(k - r0);
        let mut jb = 0;
        while jb < m {
            let nj = block.min(m - jb);
            let mut ib = 0;
            while ib <= jb {
                let ni = block.min(m - ib);
                tr_mul_block(a, (ib, ni), a, (jb, nj), (r0, kc), &mut g, (ib, jb), 1.0);
                ib += block;
            }
            jb += block;
        }
        r0 += kc;
    }
    // Diagonal blocks come out of gemm without guaranteed bit-exact symmetry.
    for j in 0..m {
        for i in (j + 1)..m {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

pub(crate) fn vec_all_finite(v: &DVector<f64>) -> bool {
    all_finite(v.as_slice())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
