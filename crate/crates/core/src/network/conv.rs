//! Convolution by im2col and a dense matrix product.

use super::params::ConvSpec;

/// `C = A·B + beta·C`, all row-major. `A` is `m×k` (stored `k×m` when
/// `a_t`), `B` is `k×n` (stored `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe matrices that fit the asserted lengths.
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

/// Patch matrix of shape `patch_len × out_pixels`.
pub(crate) fn im2col(s: &ConvSpec, x: &[f64]) -> Vec<f64> {
    let k = s.kernel;
    let p = s.out_pixels();
    let mut cols = vec![0.0; s.patch_len() * p];
    for c in 0..s.c_in {
        let plane = &x[c * s.h_in * s.w_in..(c + 1) * s.h_in * s.w_in];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..s.h_out {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.h_in as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.w_in..][..s.w_in];
                    for ox in 0..s.w_out {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.w_in as isize {
                            row[oy * s.w_out + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of a patch matrix back onto the input grid.
pub(crate) fn col2im(s: &ConvSpec, cols: &[f64]) -> Vec<f64> {
    let k = s.kernel;
    let p = s.out_pixels();
    let mut x = vec![0.0; s.in_len()];
    for c in 0..s.c_in {
        let plane = &mut x[c * s.h_in * s.w_in..(c + 1) * s.h_in * s.w_in];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..s.h_out {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.h_in as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.w_in..][..s.w_in];
                    for ox in 0..s.w_out {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.w_in as isize {
                            dst[ix as usize] += row[oy * s.w_out + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Convolution output (`c_out × out_pixels`) before any activation.
pub(crate) fn conv_forward(s: &ConvSpec, w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let p = s.out_pixels();
    let mut out = vec![0.0; s.c_out * p];
    for (row, bias) in out.chunks_exact_mut(p).zip(b) {
        row.iter_mut().for_each(|v| *v = *bias);
    }
    let cols = im2col(s, x);
    gemm(s.c_out, s.patch_len(), p, w, false, &cols, false, 1.0, &mut out);
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub(crate) fn conv_backward(
    s: &ConvSpec,
    w: &[f64],
    x: &[f64],
    dout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let p = s.out_pixels();
    let cols = im2col(s, x);
    gemm(s.c_out, p, s.patch_len(), dout, false, &cols, true, 1.0, gw);
    for (g, row) in gb.iter_mut().zip(dout.chunks_exact(p)) {
        *g += row.iter().sum::<f64>();
    }
    need_input.then(|| {
        let mut dcols = vec![0.0; s.patch_len() * p];
        gemm(s.patch_len(), s.c_out, p, w, true, dout, false, 0.0, &mut dcols);
        col2im(s, &dcols)
    })
}
