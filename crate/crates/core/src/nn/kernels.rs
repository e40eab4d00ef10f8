//! Dense kernels behind the layer passes.
//!
//! Each kernel is written once as plain Rust and compiled twice: a portable
//! version and, on x86-64, an AVX2 version picked at runtime. Both perform
//! the same additions in the same order (no fused multiply-add), so results
//! are bit-identical whichever path runs.

use super::tensor::dot;

const ROWS: usize = 4;
const LANES: usize = 8;

/// `out[s][o] = bias[o] + w[o] . x[s]` for `x: [batch, n_in]`, `w: [n_out, n_in]`.
pub(crate) fn affine(x: &[f64], batch: usize, w: &[f64], bias: &[f64], n_in: usize, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { affine_avx2(x, batch, w, bias, n_in, out) };
    }
    affine_impl(x, batch, w, bias, n_in, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn affine_avx2(x: &[f64], batch: usize, w: &[f64], bias: &[f64], n_in: usize, out: &mut [f64]) {
    affine_impl(x, batch, w, bias, n_in, out)
}

#[inline(always)]
fn affine_impl(x: &[f64], batch: usize, w: &[f64], bias: &[f64], n_in: usize, out: &mut [f64]) {
    let n_out = bias.len();
    debug_assert_eq!(x.len(), batch * n_in);
    debug_assert_eq!(w.len(), n_out * n_in);
    let body = n_in - n_in % 4;
    let mut o = 0;
    while o + ROWS <= n_out {
        let ws: [&[f64]; ROWS] = std::array::from_fn(|i| &w[(o + i) * n_in..(o + i + 1) * n_in]);
        let mut s = 0;
        while s + 2 <= batch {
            let x0 = &x[s * n_in..(s + 1) * n_in];
            let x1 = &x[(s + 1) * n_in..(s + 2) * n_in];
            // acc[i] and acc[ROWS + i] hold the 4-lane partial sums of row
            // o + i against samples s and s + 1, matching `dot`
            let mut acc = [[0.0f64; 4]; 2 * ROWS];
            let (x0c, x1c) = (x0[..body].as_chunks::<4>().0, x1[..body].as_chunks::<4>().0);
            let [w0, w1, w2, w3] = ws.map(|r| r[..body].as_chunks::<4>().0);
            let rows = x0c.iter().zip(x1c).zip(w0).zip(w1).zip(w2).zip(w3);
            for (((((p0, p1), c0), c1), c2), c3) in rows {
                for (i, wk) in [c0, c1, c2, c3].into_iter().enumerate() {
                    for l in 0..4 {
                        acc[i][l] += wk[l] * p0[l];
                        acc[ROWS + i][l] += wk[l] * p1[l];
                    }
                }
            }
            for i in 0..ROWS {
                for (j, xs) in [x0, x1].into_iter().enumerate() {
                    let a = acc[j * ROWS + i];
                    let mut tail = 0.0;
                    for kk in body..n_in {
                        tail += ws[i][kk] * xs[kk];
                    }
                    out[(s + j) * n_out + o + i] = bias[o + i] + ((a[0] + a[1]) + (a[2] + a[3]) + tail);
                }
            }
            s += 2;
        }
        for s in s..batch {
            for i in 0..ROWS {
                out[s * n_out + o + i] = bias[o + i] + dot(ws[i], &x[s * n_in..(s + 1) * n_in]);
            }
        }
        o += ROWS;
    }
    for o in o..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        for s in 0..batch {
            out[s * n_out + o] = bias[o] + dot(row, &x[s * n_in..(s + 1) * n_in]);
        }
    }
}

/// `c[i][k] += sum_j a(i, j) * b[j][k]` with `a(i, j) = a[i * a_i + j * a_j]`,
/// `b: [inner, cols]`, `c: [rows, cols]`. The sum over `j` runs in order.
pub(crate) fn accumulate_product(c: &mut [f64], rows: usize, cols: usize, a: &[f64], a_i: usize, a_j: usize, b: &[f64], inner: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { accumulate_product_avx2(c, rows, cols, a, a_i, a_j, b, inner) };
    }
    accumulate_product_impl(c, rows, cols, a, a_i, a_j, b, inner)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn accumulate_product_avx2(c: &mut [f64], rows: usize, cols: usize, a: &[f64], a_i: usize, a_j: usize, b: &[f64], inner: usize) {
    accumulate_product_impl(c, rows, cols, a, a_i, a_j, b, inner)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn accumulate_product_impl(c: &mut [f64], rows: usize, cols: usize, a: &[f64], a_i: usize, a_j: usize, b: &[f64], inner: usize) {
    debug_assert_eq!(c.len(), rows * cols);
    debug_assert_eq!(b.len(), inner * cols);
    let mut i = 0;
    while i + ROWS <= rows {
        let mut k = 0;
        while k + LANES <= cols {
            let mut acc = [[0.0f64; LANES]; ROWS];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * cols + k..(i + r) * cols + k + LANES]);
            }
            for j in 0..inner {
                let bj: &[f64; LANES] = b[j * cols + k..j * cols + k + LANES].try_into().expect("lane width");
                for (r, row) in acc.iter_mut().enumerate() {
                    let g = a[(i + r) * a_i + j * a_j];
                    for l in 0..LANES {
                        row[l] += g * bj[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * cols + k..(i + r) * cols + k + LANES].copy_from_slice(row);
            }
            k += LANES;
        }
        for r in i..i + ROWS {
            tail_row(c, r, k, cols, a, a_i, a_j, b, inner);
        }
        i += ROWS;
    }
    for r in i..rows {
        tail_row(c, r, 0, cols, a, a_i, a_j, b, inner);
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn tail_row(c: &mut [f64], r: usize, from: usize, cols: usize, a: &[f64], a_i: usize, a_j: usize, b: &[f64], inner: usize) {
    for k in from..cols {
        let mut v = c[r * cols + k];
        for j in 0..inner {
            v += a[r * a_i + j * a_j] * b[j * cols + k];
        }
        c[r * cols + k] = v;
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdamStep {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Bias corrections `1 - beta^t`.
    pub bc1: f64,
    pub bc2: f64,
}

pub(crate) fn adam_update(step: &AdamStep, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { adam_update_avx2(step, params, grads, m, v) };
    }
    adam_update_impl(step, params, grads, m, v)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn adam_update_avx2(step: &AdamStep, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
    adam_update_impl(step, params, grads, m, v)
}

#[inline(always)]
fn adam_update_impl(step: &AdamStep, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
    let AdamStep { lr, beta1, beta2, eps, bc1, bc2 } = *step;
    for (((p, &d), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * d;
        *v = beta2 * *v + (1.0 - beta2) * d * d;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
