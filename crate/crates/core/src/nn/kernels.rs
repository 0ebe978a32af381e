//! Dense numeric kernels behind the graph ops.

use crate::imaging::KURTOSIS_EPS;

pub const NORM_EPS: f64 = 1e-5;

/// `C = A·B + beta·C` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= if m * k == 0 { 0 } else { 1 });
    // SAFETY: callers pass slices whose extents cover the strided index space
    // `(m-1)*rs + (k-1)*cs` for each operand; checked in debug builds below.
    debug_assert!(max_index(m, k, rsa, csa) < a.len().max(1));
    debug_assert!(max_index(k, n, rsb, csb) < b.len().max(1));
    debug_assert!(max_index(m, n, rsc, csc) < c.len());
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
            rsc,
            csc,
        );
    }
}

fn max_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(x.len(), 4, "conv input must be N×C×H×W");
        assert_eq!(w.len(), 4, "conv weight must be Co×Ci×K×K");
        assert_eq!(x[1], w[1], "conv channel mismatch: input {} vs weight {}", x[1], w[1]);
        let k = w[2];
        let ho = (x[2] + 2 * pad - k) / stride + 1;
        let wo = (x[3] + 2 * pad - k) / stride + 1;
        Self {
            n: x[0],
            ci: x[1],
            h: x[2],
            w: x[3],
            co: w[0],
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn patch(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unrolls the batch into a `(Ci·K·K) × (N·Ho·Wo)` column matrix.
fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let cols_n = g.n * p;
    let mut cols = vec![0.0; g.patch() * cols_n];
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for ni in 0..g.n {
                    let plane = &x[(ni * g.ci + c) * g.h * g.w..(ni * g.ci + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let out_row = &mut dst[ni * p + oy * g.wo..ni * p + (oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(g: &ConvGeom, cols: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let cols_n = g.n * p;
    let mut x = vec![0.0; g.n * g.ci * g.h * g.w];
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for ni in 0..g.n {
                    let base = (ni * g.ci + c) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut x[base + iy as usize * g.w..base + (iy as usize + 1) * g.w];
                        let in_row = &src[ni * p + oy * g.wo..ni * p + (oy + 1) * g.wo];
                        for (ox, v) in in_row.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let cols_n = g.n * p;
    let kk = g.patch();
    let cols = im2col(g, x);
    // out[co, ni*p + i] laid out directly as out[ni][co][i] via strides.
    let mut out = vec![0.0; g.n * g.co * p];
    for ni in 0..g.n {
        let block = &mut out[ni * g.co * p..(ni + 1) * g.co * p];
        for (co, chunk) in block.chunks_exact_mut(p).enumerate() {
            chunk.fill(b[co]);
        }
        gemm(
            g.co,
            kk,
            p,
            w,
            (kk as isize, 1),
            &cols[ni * p..],
            (cols_n as isize, 1),
            1.0,
            block,
            (p as isize, 1),
        );
    }
    out
}

/// Returns `(dx, dw, db)` for upstream gradient `dy` of shape `N×Co×Ho×Wo`.
pub fn conv2d_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = g.positions();
    let cols_n = g.n * p;
    let kk = g.patch();
    let cols = im2col(g, x);

    let mut db = vec![0.0; g.co];
    for ni in 0..g.n {
        for (co, d) in db.iter_mut().enumerate() {
            *d += dy[(ni * g.co + co) * p..(ni * g.co + co + 1) * p].iter().sum::<f64>();
        }
    }

    let mut dw = vec![0.0; g.co * kk];
    let mut dcols = vec![0.0; kk * cols_n];
    for ni in 0..g.n {
        let dyn_ = &dy[ni * g.co * p..(ni + 1) * g.co * p];
        // dw += dy_n [Co×P] · cols_n^T [P×KK]
        gemm(
            g.co,
            p,
            kk,
            dyn_,
            (p as isize, 1),
            &cols[ni * p..],
            (1, cols_n as isize),
            1.0,
            &mut dw,
            (kk as isize, 1),
        );
        // dcols_n [KK×P] = w^T [KK×Co] · dy_n [Co×P]
        gemm(
            kk,
            g.co,
            p,
            w,
            (1, kk as isize),
            dyn_,
            (p as isize, 1),
            0.0,
            &mut dcols[ni * p..],
            (cols_n as isize, 1),
        );
    }
    let dx = col2im(g, &dcols);
    (dx, dw, db)
}

/// Pearson kurtosis `m4 / (m2² + ε)` of one row.
pub fn kurtosis_row(row: &[f64]) -> f64 {
    let (_, m2, m4) = crate::imaging::central_moments(row);
    m4 / (m2 * m2 + KURTOSIS_EPS)
}

/// Adds `coef · ∂Kurt/∂row` into `out`.
pub fn kurtosis_row_grad(row: &[f64], coef: f64, out: &mut [f64]) {
    let n = row.len() as f64;
    let (mean, m2, m4) = crate::imaging::central_moments(row);
    let m3 = row.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let denom = m2 * m2 + KURTOSIS_EPS;
    for (o, v) in out.iter_mut().zip(row) {
        let d = v - mean;
        let dm4 = 4.0 / n * (d * d * d - m3);
        let dm2 = 2.0 / n * d;
        *o += coef * (dm4 * denom - m4 * 2.0 * m2 * dm2) / (denom * denom);
    }
}

/// Numerically stable `BCE(sigmoid(z), y)`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
