//! Small dense helpers shared by the hot loops.

use nalgebra::DMatrix;

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
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

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[c] = a · x_c` for the columns of a column-major `d×m` matrix.
#[inline]
pub fn row_dots(a: &[f64], x: &[f64], d: usize, m: usize, out: &mut [f64]) {
    assert!(a.len() >= d && x.len() >= d * m && out.len() >= m);
    #[cfg(target_arch = "x86_64")]
    {
        if has_fma() {
            // SAFETY: lengths checked above, CPU features checked by has_fma.
            unsafe { x86::row_dots(a, x, d, m, out) };
            return;
        }
    }
    for c in 0..m {
        out[c] = dot(&a[..d], &x[c * d..(c + 1) * d]);
    }
}

/// `g_c += coef[c] a` for the columns of a column-major `d×m` matrix.
#[inline]
pub fn row_axpys(a: &[f64], coef: &[f64], g: &mut [f64], d: usize, m: usize) {
    assert!(a.len() >= d && coef.len() >= m && g.len() >= d * m);
    #[cfg(target_arch = "x86_64")]
    {
        if has_fma() {
            // SAFETY: lengths checked above, CPU features checked by has_fma.
            unsafe { x86::row_axpys(a, coef, g, d, m) };
            return;
        }
    }
    for c in 0..m {
        axpy(coef[c], &a[..d], &mut g[c * d..(c + 1) * d]);
    }
}

#[cfg(target_arch = "x86_64")]
#[inline]
fn has_fma() -> bool {
    std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn hsum(v: __m256d) -> f64 {
        let lo = _mm256_castpd256_pd128(v);
        let hi = _mm256_extractf128_pd::<1>(v);
        let s = _mm_add_pd(lo, hi);
        _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)))
    }

    #[inline(always)]
    unsafe fn dots_n<const N: usize>(
        a: *const f64,
        x: *const f64,
        d: usize,
        c0: usize,
        out: *mut f64,
    ) {
        let mut acc = [_mm256_setzero_pd(); N];
        let full = d / 4 * 4;
        let mut k = 0;
        while k < full {
            let av = _mm256_loadu_pd(a.add(k));
            for (c, slot) in acc.iter_mut().enumerate() {
                *slot = _mm256_fmadd_pd(av, _mm256_loadu_pd(x.add((c0 + c) * d + k)), *slot);
            }
            k += 4;
        }
        for (c, slot) in acc.iter().enumerate() {
            let mut s = hsum(*slot);
            for k in full..d {
                s = (*a.add(k)).mul_add(*x.add((c0 + c) * d + k), s);
            }
            *out.add(c0 + c) = s;
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn row_dots(a: &[f64], x: &[f64], d: usize, m: usize, out: &mut [f64]) {
        let (ap, xp, op) = (a.as_ptr(), x.as_ptr(), out.as_mut_ptr());
        let mut c = 0;
        while c + 4 <= m {
            dots_n::<4>(ap, xp, d, c, op);
            c += 4;
        }
        match m - c {
            3 => dots_n::<3>(ap, xp, d, c, op),
            2 => dots_n::<2>(ap, xp, d, c, op),
            1 => dots_n::<1>(ap, xp, d, c, op),
            _ => {}
        }
    }

    #[inline(always)]
    unsafe fn axpys_n<const N: usize>(
        a: *const f64,
        coef: *const f64,
        g: *mut f64,
        d: usize,
        c0: usize,
    ) {
        let mut b = [_mm256_setzero_pd(); N];
        for (c, slot) in b.iter_mut().enumerate() {
            *slot = _mm256_set1_pd(*coef.add(c0 + c));
        }
        let full = d / 4 * 4;
        let mut k = 0;
        while k < full {
            let av = _mm256_loadu_pd(a.add(k));
            for (c, bc) in b.iter().enumerate() {
                let p = g.add((c0 + c) * d + k);
                _mm256_storeu_pd(p, _mm256_fmadd_pd(*bc, av, _mm256_loadu_pd(p)));
            }
            k += 4;
        }
        for c in 0..N {
            let alpha = *coef.add(c0 + c);
            for k in full..d {
                let p = g.add((c0 + c) * d + k);
                *p = alpha.mul_add(*a.add(k), *p);
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn row_axpys(a: &[f64], coef: &[f64], g: &mut [f64], d: usize, m: usize) {
        let (ap, cp, gp) = (a.as_ptr(), coef.as_ptr(), g.as_mut_ptr());
        let mut c = 0;
        while c + 4 <= m {
            axpys_n::<4>(ap, cp, gp, d, c);
            c += 4;
        }
        match m - c {
            3 => axpys_n::<3>(ap, cp, gp, d, c),
            2 => axpys_n::<2>(ap, cp, gp, d, c),
            1 => axpys_n::<1>(ap, cp, gp, d, c),
            _ => {}
        }
    }
}

/// `g_c += a_j (a_jᵀ x_c − b_jc)` over the given rows, with `a`, `b` row-major
/// and `x`, `g` column-major `d×m`.
pub fn accumulate_residual_rows<I>(
    a: &[f64],
    b: &[f64],
    x: &[f64],
    g: &mut [f64],
    d: usize,
    m: usize,
    rows: I,
) where
    I: IntoIterator<Item = usize>,
{
    let mut resid = vec![0.0; m];
    for j in rows {
        let aj = &a[j * d..(j + 1) * d];
        row_dots(aj, x, d, m, &mut resid);
        for (r, bj) in resid.iter_mut().zip(&b[j * m..(j + 1) * m]) {
            *r -= bj;
        }
        row_axpys(aj, &resid, g, d, m);
    }
}

pub fn frob_sq(m: &DMatrix<f64>) -> f64 {
    dot(m.as_slice(), m.as_slice())
}

pub fn frob_dist_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Max-abs entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
