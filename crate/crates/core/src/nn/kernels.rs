//! Per-layer numeric kernels on raw NCHW / row-major buffers.

use super::layer::Window;
use crate::tensor::gemm;

/// Budget for one chunk's unfolded columns, in elements.
const COL_BUDGET: usize = 1 << 19;
/// Target column count per GEMM.
const COL_TARGET: usize = 4096;

thread_local! {
    static SCRATCH: std::cell::RefCell<[Vec<f64>; 3]> = const { std::cell::RefCell::new([Vec::new(), Vec::new(), Vec::new()]) };
}

/// Runs `f` with three reusable per-thread buffers of at least the given
/// lengths. Contents on entry are unspecified.
fn with_scratch<R>(lens: [usize; 3], f: impl FnOnce(&mut [f64], &mut [f64], &mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut bufs = cell.borrow_mut();
        for (b, &n) in bufs.iter_mut().zip(&lens) {
            if b.len() < n {
                b.resize(n, 0.0);
            }
        }
        let [a, b, c] = &mut *bufs;
        f(&mut a[..lens[0]], &mut b[..lens[1]], &mut c[..lens[2]])
    })
}

/// Samples processed per GEMM so the column buffer stays bounded.
fn chunk_len(w: &Window, batch: usize) -> usize {
    let op = w.out_plane().max(1);
    (COL_TARGET / op)
        .min(COL_BUDGET / (w.patch() * op).max(1))
        .clamp(1, batch.max(1))
}

/// Unfold one sample `[C, H, W]` into rows of the column matrix `cols`
/// (row stride `ld`), starting at column `col0`.
fn im2col(x: &[f64], w: &Window, cols: &mut [f64], ld: usize, col0: usize) {
    let (kh, kw) = (w.kernel[0], w.kernel[1]);
    let (sh, sw) = (w.stride[0], w.stride[1]);
    let (ph, pw) = (w.pad_before[0] as isize, w.pad_before[1] as isize);
    let out_plane = w.out_plane();
    for c in 0..w.channels {
        let plane = &x[c * w.in_plane()..(c + 1) * w.in_plane()];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((c * kh + i) * kw + j) * ld + col0;
                let dst = &mut cols[row..row + out_plane];
                for oy in 0..w.out_height {
                    let y = (oy * sh + i) as isize - ph;
                    let line = &mut dst[oy * w.out_width..(oy + 1) * w.out_width];
                    if y < 0 || y >= w.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * w.width..(y as usize + 1) * w.width];
                    if sw == 1 && pw == 0 {
                        line.copy_from_slice(&src[j..j + w.out_width]);
                        continue;
                    }
                    for (ox, v) in line.iter_mut().enumerate() {
                        let xx = (ox * sw + j) as isize - pw;
                        *v = if xx < 0 || xx >= w.width as isize {
                            0.0
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold columns back, accumulating into `dx` (one sample).
fn col2im(cols: &[f64], w: &Window, ld: usize, col0: usize, dx: &mut [f64]) {
    let (kh, kw) = (w.kernel[0], w.kernel[1]);
    let (sh, sw) = (w.stride[0], w.stride[1]);
    let (ph, pw) = (w.pad_before[0] as isize, w.pad_before[1] as isize);
    let out_plane = w.out_plane();
    for c in 0..w.channels {
        let plane = &mut dx[c * w.in_plane()..(c + 1) * w.in_plane()];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((c * kh + i) * kw + j) * ld + col0;
                let src = &cols[row..row + out_plane];
                for oy in 0..w.out_height {
                    let y = (oy * sh + i) as isize - ph;
                    if y < 0 || y >= w.height as isize {
                        continue;
                    }
                    let line = &src[oy * w.out_width..(oy + 1) * w.out_width];
                    let dst = &mut plane[y as usize * w.width..(y as usize + 1) * w.width];
                    if sw == 1 && pw == 0 {
                        for (d, &g) in dst[j..j + w.out_width].iter_mut().zip(line) {
                            *d += g;
                        }
                        continue;
                    }
                    for (ox, &g) in line.iter().enumerate() {
                        let xx = (ox * sw + j) as isize - pw;
                        if xx >= 0 && xx < w.width as isize {
                            dst[xx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    x: &[f64],
    batch: usize,
    w: &Window,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
) -> Vec<f64> {
    let patch = w.patch();
    let op = w.out_plane();
    let in_len = w.channels * w.in_plane();
    let out_len = out_channels * op;
    let chunk = chunk_len(w, batch);
    let mut out = vec![0.0; batch * out_len];
    with_scratch(
        [patch * chunk * op, out_channels * chunk * op, 0],
        |cols, y, _| {
            for start in (0..batch).step_by(chunk) {
                let nb = chunk.min(batch - start);
                let ld = nb * op;
                for s in 0..nb {
                    let b = start + s;
                    im2col(&x[b * in_len..(b + 1) * in_len], w, cols, ld, s * op);
                }
                gemm(
                    out_channels,
                    patch,
                    ld,
                    weight,
                    false,
                    &cols[..patch * ld],
                    false,
                    &mut y[..out_channels * ld],
                    0.0,
                );
                for s in 0..nb {
                    let dst = &mut out[(start + s) * out_len..(start + s + 1) * out_len];
                    for o in 0..out_channels {
                        let src = &y[o * ld + s * op..o * ld + (s + 1) * op];
                        let bo = bias[o];
                        for (d, &v) in dst[o * op..(o + 1) * op].iter_mut().zip(src) {
                            *d = v + bo;
                        }
                    }
                }
            }
        },
    );
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is empty unless `need_dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    w: &Window,
    weight: &[f64],
    out_channels: usize,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let patch = w.patch();
    let op = w.out_plane();
    let in_len = w.channels * w.in_plane();
    let out_len = out_channels * op;
    let chunk = chunk_len(w, batch);
    let mut dx = if need_dx {
        vec![0.0; batch * in_len]
    } else {
        Vec::new()
    };
    let mut dw = vec![0.0; out_channels * patch];
    let mut db = vec![0.0; out_channels];
    let dcols_len = if need_dx { patch * chunk * op } else { 0 };
    with_scratch(
        [patch * chunk * op, dcols_len, out_channels * chunk * op],
        |cols, dcols, g| {
            for start in (0..batch).step_by(chunk) {
                let nb = chunk.min(batch - start);
                let ld = nb * op;
                for s in 0..nb {
                    let b = start + s;
                    im2col(&x[b * in_len..(b + 1) * in_len], w, cols, ld, s * op);
                    let src = &dy[b * out_len..(b + 1) * out_len];
                    for o in 0..out_channels {
                        g[o * ld + s * op..o * ld + (s + 1) * op]
                            .copy_from_slice(&src[o * op..(o + 1) * op]);
                    }
                }
                let g = &g[..out_channels * ld];
                // dW += dY · cols^T
                gemm(
                    out_channels,
                    ld,
                    patch,
                    g,
                    false,
                    &cols[..patch * ld],
                    true,
                    &mut dw,
                    1.0,
                );
                for (o, row) in g.chunks(ld).enumerate() {
                    db[o] += row.iter().sum::<f64>();
                }
                if need_dx {
                    // dcols = W^T · dY
                    gemm(
                        patch,
                        out_channels,
                        ld,
                        weight,
                        true,
                        g,
                        false,
                        &mut dcols[..patch * ld],
                        0.0,
                    );
                    for s in 0..nb {
                        let b = start + s;
                        col2im(dcols, w, ld, s * op, &mut dx[b * in_len..(b + 1) * in_len]);
                    }
                }
            }
        },
    );
    (dx, dw, db)
}

/// Per-channel batch statistics for `[B, C, HW]`: biased mean and variance.
pub(crate) fn channel_stats(
    x: &[f64],
    batch: usize,
    channels: usize,
    plane: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * plane) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            s += x[off..off + plane].iter().sum::<f64>();
        }
        let m = s / n;
        let mut ss = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            ss += x[off..off + plane]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
        mean[c] = m;
        var[c] = ss / n;
    }
    (mean, var)
}

/// In place: `x <- gamma * (x - mean) * inv_std + beta`. Returns the
/// normalized values when `keep_xhat`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_apply(
    x: &mut [f64],
    batch: usize,
    channels: usize,
    plane: usize,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
    keep_xhat: bool,
) -> Vec<f64> {
    let mut xhat = if keep_xhat {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * plane;
            let (m, is, ga, be) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let xs = &mut x[off..off + plane];
            if keep_xhat {
                for (v, h) in xs.iter_mut().zip(&mut xhat[off..off + plane]) {
                    *h = (*v - m) * is;
                    *v = ga * *h + be;
                }
            } else {
                for v in xs.iter_mut() {
                    *v = ga * ((*v - m) * is) + be;
                }
            }
        }
    }
    xhat
}

/// Overwrites `dy` with the input gradient; returns `(dgamma, dbeta)`.
pub(crate) fn bn_backward(
    dy: &mut [f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    batch: usize,
    channels: usize,
    plane: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * plane) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * plane;
            let (mut sg, mut sb) = (0.0, 0.0);
            for (&d, &h) in dy[off..off + plane].iter().zip(&xhat[off..off + plane]) {
                sg += d * h;
                sb += d;
            }
            dgamma[c] += sg;
            dbeta[c] += sb;
        }
    }
    for b in 0..batch {
        for c in 0..channels {
            // with dxhat = gamma * dy: Σdxhat = gamma·dbeta, Σdxhat·xhat = gamma·dgamma
            let k = gamma[c] * inv_std[c] / n;
            let (dg, dbt) = (dgamma[c], dbeta[c]);
            let off = (b * channels + c) * plane;
            for (d, &h) in dy[off..off + plane].iter_mut().zip(&xhat[off..off + plane]) {
                *d = k * (n * *d - dbt - h * dg);
            }
        }
    }
    (dgamma, dbeta)
}

/// Max-pool forward; returns pooled values and, per output, the flat input
/// offset of the winning element (first maximum on ties).
pub(crate) fn maxpool_forward(x: &[f64], batch: usize, w: &Window) -> (Vec<f64>, Vec<u32>) {
    let op = w.out_plane();
    let planes = batch * w.channels;
    let mut out = vec![0.0; planes * op];
    let mut arg = vec![0u32; planes * op];
    for p in 0..planes {
        let base = p * w.in_plane();
        for oy in 0..w.out_height {
            for ox in 0..w.out_width {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0usize;
                for i in 0..w.kernel[0] {
                    let y = oy * w.stride[0] + i;
                    for j in 0..w.kernel[1] {
                        let at = base + y * w.width + ox * w.stride[1] + j;
                        if x[at] > best {
                            best = x[at];
                            best_at = at;
                        }
                    }
                }
                let o = p * op + oy * w.out_width + ox;
                out[o] = best;
                arg[o] = best_at as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(dy: &[f64], arg: &[u32], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&g, &a) in dy.iter().zip(arg) {
        dx[a as usize] += g;
    }
    dx
}
