//! Row-major GEMM kernels. All of them accumulate into `c`.

/// `c[m,n] += a[m,k] * b[k,n]`
#[inline(always)]
fn gemm_nn_impl(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
#[inline(always)]
fn gemm_nt_impl(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cj) in c_row.iter_mut().enumerate() {
            *cj += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`
#[inline(always)]
fn gemm_tn_impl(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}


macro_rules! dispatch {
    ($name:ident, $imp:ident, $avx:ident, $doc:literal) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
            $imp(m, k, n, a, b, c)
        }

        #[doc = $doc]
        pub(crate) fn $name(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
            // Same code and summation order on both paths, so results are identical.
            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2, checked just above.
                return unsafe { $avx(m, k, n, a, b, c) };
            }
            $imp(m, k, n, a, b, c)
        }
    };
}

dispatch!(gemm_nn, gemm_nn_impl, gemm_nn_avx2, "`c[m,n] += a[m,k] * b[k,n]`");
dispatch!(gemm_nt, gemm_nt_impl, gemm_nt_avx2, "`c[m,n] += a[m,k] * b[n,k]^T`");
dispatch!(gemm_tn, gemm_tn_impl, gemm_tn_avx2, "`c[k,n] += a[m,k]^T * b[m,n]`");

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn kernels_agree_with_triple_loop() {
        let (m, k, n) = (5, 7, 6);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        let mut c2 = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c2);
        let mut c3 = vec![0.0; m * n];
        gemm_tn(k, m, n, &transpose(m, k, &a), &b, &mut c3);
        for i in 0..m * n {
            assert!((c[i] - expect[i]).abs() < 1e-12);
            assert!((c2[i] - expect[i]).abs() < 1e-12);
            assert!((c3[i] - expect[i]).abs() < 1e-12);
        }
    }
}
