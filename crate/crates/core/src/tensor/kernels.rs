//! Compute kernels behind the tape ops.

/// `C = A * B + beta * C` on strided row/column views.
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
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: every index touched by dgemm is bounded by the asserts above,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
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
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl ConvGeometry {
    /// Output positions `t0..t1` whose input index for tap `k` lies inside
    /// the unpadded signal, and that first input index.
    fn tap_range(&self, k: usize) -> Option<(usize, usize, usize)> {
        let (s, p) = (self.stride, self.padding);
        let t0 = if p > k { (p - k).div_ceil(s) } else { 0 };
        if self.len + p < k + 1 {
            return None;
        }
        let t1 = ((self.len + p - k - 1) / s + 1).min(self.out_len);
        (t0 < t1).then(|| (t0, t1, t0 * s + k - p))
    }

    /// Unfolds one sample into a zero-initialized `[c_in * kernel, out_len]`
    /// matrix.
    fn unfold(&self, xb: &[f64], cols: &mut [f64]) {
        for k in 0..self.kernel {
            let Some((t0, t1, i0)) = self.tap_range(k) else {
                continue;
            };
            for c in 0..self.c_in {
                let row = (c * self.kernel + k) * self.out_len;
                let src = xb[c * self.len + i0..].iter().step_by(self.stride);
                for (dst, &v) in cols[row + t0..row + t1].iter_mut().zip(src) {
                    *dst = v;
                }
            }
        }
    }
}

/// Below this many input channels the per-tap GEMMs get too thin and the
/// input is unfolded into one `[c_in * kernel, out_len]` matrix instead.
const UNFOLD_BELOW_CHANNELS: usize = 4;

// Convolution is computed tap by tap: for kernel offset k the output block
// `y[:, t0..t1]` accumulates `W[:, :, k] * x[:, i0::stride]`, so every step is
// a strided GEMM on the original buffers and no unfolded copy is needed.

pub(crate) fn conv1d_forward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.c_out * g.out_len];
    let ck = g.c_in * g.kernel;
    let unfold = g.c_in < UNFOLD_BELOW_CHANNELS;
    let mut cols = if unfold {
        vec![0.0; ck * g.out_len]
    } else {
        Vec::new()
    };
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.len..(b + 1) * g.c_in * g.len];
        let ob = &mut out[b * g.c_out * g.out_len..(b + 1) * g.c_out * g.out_len];
        if unfold {
            g.unfold(xb, &mut cols);
            gemm(
                g.c_out,
                ck,
                g.out_len,
                w,
                (ck, 1),
                &cols,
                (g.out_len, 1),
                0.0,
                ob,
                (g.out_len, 1),
            );
        }
        for k in (0..g.kernel).filter(|_| !unfold) {
            let Some((t0, t1, i0)) = g.tap_range(k) else {
                continue;
            };
            gemm(
                g.c_out,
                g.c_in,
                t1 - t0,
                &w[k..],
                (ck, g.kernel),
                &xb[i0..],
                (g.len, g.stride),
                1.0,
                &mut ob[t0..],
                (g.out_len, 1),
            );
        }
        if let Some(bias) = bias {
            for (o, row) in ob.chunks_exact_mut(g.out_len).enumerate() {
                row.iter_mut().for_each(|v| *v += bias[o]);
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`; `dbias` is summed over batch and length.
pub(crate) fn conv1d_backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    want_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let ck = g.c_in * g.kernel;
    let mut dx = want_dx.then(|| vec![0.0; g.batch * g.c_in * g.len]);
    let mut dw = vec![0.0; g.c_out * ck];
    let mut db = vec![0.0; g.c_out];
    let unfold = g.c_in < UNFOLD_BELOW_CHANNELS;
    let mut cols = if unfold {
        vec![0.0; ck * g.out_len]
    } else {
        Vec::new()
    };
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.len..(b + 1) * g.c_in * g.len];
        let dyb = &dy[b * g.c_out * g.out_len..(b + 1) * g.c_out * g.out_len];
        for (o, row) in dyb.chunks_exact(g.out_len).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        if unfold {
            g.unfold(xb, &mut cols);
            // dW += dY_b * cols^T
            gemm(
                g.c_out,
                g.out_len,
                ck,
                dyb,
                (g.out_len, 1),
                &cols,
                (1, g.out_len),
                1.0,
                &mut dw,
                (ck, 1),
            );
        }
        for k in 0..g.kernel {
            let Some((t0, t1, i0)) = g.tap_range(k) else {
                continue;
            };
            let n = t1 - t0;
            // dW[:, :, k] += dY[:, t0..t1] * x[:, i0::s]^T
            if !unfold {
                gemm(
                    g.c_out,
                    n,
                    g.c_in,
                    &dyb[t0..],
                    (g.out_len, 1),
                    &xb[i0..],
                    (g.stride, g.len),
                    1.0,
                    &mut dw[k..],
                    (ck, g.kernel),
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dx[:, i0::s] += W[:, :, k]^T * dY[:, t0..t1]
                let dxb = &mut dx[b * g.c_in * g.len..(b + 1) * g.c_in * g.len];
                gemm(
                    g.c_in,
                    g.c_out,
                    n,
                    &w[k..],
                    (g.kernel, ck),
                    &dyb[t0..],
                    (g.out_len, 1),
                    1.0,
                    &mut dxb[i0..],
                    (g.len, g.stride),
                );
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposed_views() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, &a, (k, 1), &b, (n, 1), 1.0, &mut c, (n, 1));
        for i in 0..m {
            for j in 0..n {
                let expect: f64 = 1.0 + (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>();
                assert!((c[i * n + j] - expect).abs() < 1e-12);
            }
        }
        // A^T stored as k x m
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, &at, (1, m), &b, (n, 1), 0.0, &mut c2, (n, 1));
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - 1.0 - y).abs() < 1e-12);
        }
    }
}
