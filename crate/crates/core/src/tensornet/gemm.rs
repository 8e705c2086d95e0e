//! Bounds-checked wrappers over `matrixmultiply`.

fn extent(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! checked_gemm {
    ($name:ident, $t:ty, $kernel:path) => {
        #[allow(clippy::too_many_arguments)]
        pub(super) fn $name(
            m: usize,
            k: usize,
            n: usize,
            a: &[$t],
            sa: (isize, isize),
            b: &[$t],
            sb: (isize, isize),
            beta: $t,
            c: &mut [$t],
            sc: (isize, isize),
        ) {
            assert!(extent(m, k, sa) <= a.len(), "gemm: lhs out of bounds");
            assert!(extent(k, n, sb) <= b.len(), "gemm: rhs out of bounds");
            assert!(extent(m, n, sc) <= c.len(), "gemm: output out of bounds");
            if m == 0 || n == 0 {
                return;
            }
            // SAFETY: the asserts above keep every strided access inside the
            // three slices, and `c` is borrowed mutably so it cannot alias.
            unsafe {
                $kernel(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    sa.0,
                    sa.1,
                    b.as_ptr(),
                    sb.0,
                    sb.1,
                    beta,
                    c.as_mut_ptr(),
                    sc.0,
                    sc.1,
                );
            }
        }
    };
}

checked_gemm!(sgemm, f32, matrixmultiply::sgemm);
checked_gemm!(dgemm, f64, matrixmultiply::dgemm);
