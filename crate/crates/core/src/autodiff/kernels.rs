//! Convolution and matrix kernels.
//!
//! Convolutions are lowered to `im2col` + GEMM. All kernels work on a 2D
//! layout `[batch, channels, height, width]`; 1D convolutions run with
//! `height == 1`.

/// Geometry shared by a convolution and its transpose.
///
/// For a forward convolution `(h, w)` is the input extent and `(oh, ow)`
/// the output extent; for a transposed convolution the roles are the
/// same (input `(h, w)`, output `(oh, ow)`), only the index map flips.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Range of `o in 0..n_iter` such that `o * s + k - p` lies in `0..n_target`.
#[inline]
fn valid(k: usize, s: usize, p: usize, n_target: usize, n_iter: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    if n_target + p < k + 1 {
        return (0, 0);
    }
    let hi = ((n_target - 1 + p - k) / s + 1).min(n_iter);
    (lo, hi.max(lo))
}

#[inline]
fn axpy(
    dst: &mut [f64],
    src: &[f64],
    a: f64,
    lo: usize,
    hi: usize,
    s: usize,
    off: isize,
    forward: bool,
) {
    // forward:  dst[o] += a * src[o*s + off]
    // !forward: dst[o*s + off] += a * src[o]
    if lo >= hi {
        return;
    }
    let base = (lo as isize * s as isize + off) as usize;
    if s == 1 {
        let n = hi - lo;
        if forward {
            for (d, x) in dst[lo..hi].iter_mut().zip(&src[base..base + n]) {
                *d += a * x;
            }
        } else {
            for (d, x) in dst[base..base + n].iter_mut().zip(&src[lo..hi]) {
                *d += a * x;
            }
        }
    } else if forward {
        for (i, o) in (lo..hi).enumerate() {
            dst[o] += a * src[base + i * s];
        }
    } else {
        for (i, o) in (lo..hi).enumerate() {
            dst[base + i * s] += a * src[o];
        }
    }
}

/// Row-major `c = a b + beta c` for `a [m, k]`, `b [k, n]`, with
/// arbitrary element strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
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
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
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

/// Sliding-window geometry between a "big" grid and a "small" grid with
/// `big = small * s + k - p`.
#[derive(Clone, Copy)]
struct Window {
    batch: usize,
    ch: usize,
    bh: usize,
    bw: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.ch * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    /// `cols[(c kh + ky) kw + kx, (b oh + oy) ow + ox] = big[b, c, oy sh + ky - ph, ox sw + kx - pw]`,
    /// zero outside the big grid.
    fn im2col(&self, big: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut cols = vec![0.0; self.rows() * n];
        self.walk(|row, col0, lo, hi, src, s, off| {
            let dst = &mut cols[row * n + col0..row * n + col0 + self.ow];
            axpy(dst, &big[src..src + self.bw], 1.0, lo, hi, s, off, true);
        });
        cols
    }

    /// Adjoint of [`Window::im2col`]: scatter-add columns into the big grid.
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut big = vec![0.0; self.batch * self.ch * self.bh * self.bw];
        self.walk(|row, col0, lo, hi, dst, s, off| {
            let src = &cols[row * n + col0..row * n + col0 + self.ow];
            axpy(&mut big[dst..dst + self.bw], src, 1.0, lo, hi, s, off, false);
        });
        big
    }

    /// Calls `f(row, col0, lo, hi, big_row_start, sw, off)` for every
    /// (batch, channel, tap, output row) with a valid big-grid row.
    fn walk(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, isize)) {
        for b in 0..self.batch {
            for c in 0..self.ch {
                let base = (b * self.ch + c) * self.bh * self.bw;
                for ky in 0..self.kh {
                    let (ylo, yhi) = valid(ky, self.sh, self.ph, self.bh, self.oh);
                    for kx in 0..self.kw {
                        let row = (c * self.kh + ky) * self.kw + kx;
                        let (xlo, xhi) = valid(kx, self.sw, self.pw, self.bw, self.ow);
                        let off = kx as isize - self.pw as isize;
                        for oy in ylo..yhi {
                            let iy = oy * self.sh + ky - self.ph;
                            let col0 = (b * self.oh + oy) * self.ow;
                            f(row, col0, xlo, xhi, base + iy * self.bw, self.sw, off);
                        }
                    }
                }
            }
        }
    }
}

/// `[B, C, P] -> [C, B P]`
fn to_channel_major(x: &[f64], batch: usize, ch: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..ch {
            let src = (b * ch + c) * p;
            let dst = c * batch * p + b * p;
            out[dst..dst + p].copy_from_slice(&x[src..src + p]);
        }
    }
    out
}

/// `[C, B P] -> [B, C, P]`
fn to_batch_major(x: &[f64], batch: usize, ch: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..ch {
            let dst = (b * ch + c) * p;
            let src = c * batch * p + b * p;
            out[dst..dst + p].copy_from_slice(&x[src..src + p]);
        }
    }
    out
}

impl ConvGeom {
    /// Forward conv: the input is the big grid.
    fn conv_window(&self) -> Window {
        Window {
            batch: self.batch,
            ch: self.cin,
            bh: self.h,
            bw: self.w,
            kh: self.kh,
            kw: self.kw,
            sh: self.sh,
            sw: self.sw,
            ph: self.ph,
            pw: self.pw,
            oh: self.oh,
            ow: self.ow,
        }
    }

    /// Transposed conv: the output is the big grid.
    fn transpose_window(&self) -> Window {
        Window {
            batch: self.batch,
            ch: self.cout,
            bh: self.oh,
            bw: self.ow,
            kh: self.kh,
            kw: self.kw,
            sh: self.sh,
            sw: self.sw,
            ph: self.ph,
            pw: self.pw,
            oh: self.h,
            ow: self.w,
        }
    }
}

/// `y[b,co,oy,ox] = sum x[b,ci,oy*sh+ky-ph, ox*sw+kx-pw] * w[co,ci,ky,kx]`
pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let win = g.conv_window();
    let (kk, n) = (win.rows(), win.cols());
    let cols = win.im2col(x);
    let mut yt = vec![0.0; g.cout * n];
    gemm(g.cout, kk, n, w, (kk, 1), &cols, (n, 1), 0.0, &mut yt);
    to_batch_major(&yt, g.batch, g.cout, g.oh * g.ow)
}

/// Gradients of [`conv_forward`] with respect to input and weight.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let win = g.conv_window();
    let (kk, n) = (win.rows(), win.cols());
    let dyt = to_channel_major(dy, g.batch, g.cout, g.oh * g.ow);
    let dw = want_dw.then(|| {
        let cols = win.im2col(x);
        let mut dw = vec![0.0; w.len()];
        gemm(g.cout, n, kk, &dyt, (n, 1), &cols, (1, n), 0.0, &mut dw);
        dw
    });
    let dx = want_dx.then(|| {
        let mut dcols = vec![0.0; kk * n];
        gemm(kk, g.cout, n, w, (1, kk), &dyt, (n, 1), 0.0, &mut dcols);
        win.col2im(&dcols)
    });
    (dx, dw)
}

/// `y[b,co,iy*sh+ky-ph, ix*sw+kx-pw] += x[b,ci,iy,ix] * w[ci,co,ky,kx]`
pub(crate) fn conv_transpose_forward(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let win = g.transpose_window();
    let (kk, n) = (win.rows(), win.cols());
    let xt = to_channel_major(x, g.batch, g.cin, g.h * g.w);
    let mut cols = vec![0.0; kk * n];
    gemm(kk, g.cin, n, w, (1, kk), &xt, (n, 1), 0.0, &mut cols);
    win.col2im(&cols)
}

pub(crate) fn conv_transpose_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let win = g.transpose_window();
    let (kk, n) = (win.rows(), win.cols());
    let dcols = win.im2col(dy);
    let dx = want_dx.then(|| {
        let mut dxt = vec![0.0; g.cin * n];
        gemm(g.cin, kk, n, w, (kk, 1), &dcols, (n, 1), 0.0, &mut dxt);
        to_batch_major(&dxt, g.batch, g.cin, g.h * g.w)
    });
    let dw = want_dw.then(|| {
        let xt = to_channel_major(x, g.batch, g.cin, g.h * g.w);
        let mut dw = vec![0.0; w.len()];
        gemm(g.cin, n, kk, &xt, (n, 1), &dcols, (1, n), 0.0, &mut dw);
        dw
    });
    (dx, dw)
}

/// `c[m,n] = sum_k a[m,k] * b[k,n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, (k, 1), b, (n, 1), 0.0, &mut c);
    c
}

/// `da = dc * b^T`
pub(crate) fn matmul_grad_a(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    gemm(m, n, k, dc, (n, 1), b, (1, n), 0.0, &mut da);
    da
}

/// `db = a^T * dc`
pub(crate) fn matmul_grad_b(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    gemm(k, m, n, a, (1, k), dc, (n, 1), 0.0, &mut db);
    db
}
