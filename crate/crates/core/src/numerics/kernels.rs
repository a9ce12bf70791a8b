//! Raw loops behind the tape operations. Image tensors are NCHW.

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), where `op(a)` is
/// `m × k` and `op(b)` is `k × n`. A transposed operand is stored with its
/// dimensions swapped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above pin every buffer to the extent implied by the
    // dimensions and strides handed to dgemm.
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

#[derive(Clone, Copy, Debug)]
pub(crate) struct ImageDims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn from_shape(shape: &[usize]) -> Option<Self> {
        match shape {
            &[batch, channels, height, width] => Some(ImageDims {
                batch,
                channels,
                height,
                width,
            }),
            _ => None,
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds a same-padded `kernel × kernel` neighbourhood into a
/// `(C·k·k) × (B·H·W)` matrix.
pub(crate) fn im2col(x: &[f64], d: ImageDims, kernel: usize) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let plane = d.plane();
    let cols = d.batch * plane;
    let mut out = vec![0.0; d.channels * kernel * kernel * cols];
    for c in 0..d.channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for b in 0..d.batch {
                    let src = &x[(b * d.channels + c) * plane..][..plane];
                    for y in 0..d.height {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= d.height as isize {
                            continue;
                        }
                        for xx in 0..d.width {
                            let sx = xx as isize + kx as isize - pad as isize;
                            if sx < 0 || sx >= d.width as isize {
                                continue;
                            }
                            dst[b * plane + y * d.width + xx] =
                                src[sy as usize * d.width + sx as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: folds column gradients back onto the image.
pub(crate) fn col2im(cols_grad: &[f64], d: ImageDims, kernel: usize) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let plane = d.plane();
    let cols = d.batch * plane;
    let mut dx = vec![0.0; d.batch * d.channels * plane];
    for c in 0..d.channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &cols_grad[row * cols..(row + 1) * cols];
                for b in 0..d.batch {
                    let dst = &mut dx[(b * d.channels + c) * plane..][..plane];
                    for y in 0..d.height {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= d.height as isize {
                            continue;
                        }
                        for xx in 0..d.width {
                            let sx = xx as isize + kx as isize - pad as isize;
                            if sx < 0 || sx >= d.width as isize {
                                continue;
                            }
                            dst[sy as usize * d.width + sx as usize] +=
                                src[b * plane + y * d.width + xx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `[Cout, B·HW]` → `[B, Cout, HW]`.
pub(crate) fn channel_major_to_batch_major(t: &[f64], batch: usize, ch: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for c in 0..ch {
        for b in 0..batch {
            out[(b * ch + c) * plane..][..plane]
                .copy_from_slice(&t[c * batch * plane + b * plane..][..plane]);
        }
    }
    out
}

/// `[B, C, HW]` → `[C, B·HW]`.
pub(crate) fn batch_major_to_channel_major(t: &[f64], batch: usize, ch: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for b in 0..batch {
        for c in 0..ch {
            out[c * batch * plane + b * plane..][..plane]
                .copy_from_slice(&t[(b * ch + c) * plane..][..plane]);
        }
    }
    out
}

fn window(kernel: usize) -> (isize, isize) {
    (-(((kernel - 1) / 2) as isize), (kernel / 2) as isize)
}

/// Stride-1 average pooling over a `kernel × kernel` window, zero padded,
/// always dividing by `kernel²`. Even kernels extend down/right.
pub(crate) fn avg_pool(x: &[f64], d: ImageDims, kernel: usize) -> Vec<f64> {
    let (lo, hi) = window(kernel);
    let norm = 1.0 / (kernel * kernel) as f64;
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(d.plane()).zip(out.chunks_mut(d.plane())) {
        for y in 0..d.height as isize {
            for xx in 0..d.width as isize {
                let mut acc = 0.0;
                for dy in lo..=hi {
                    for dx in lo..=hi {
                        let (sy, sx) = (y + dy, xx + dx);
                        if sy >= 0 && sy < d.height as isize && sx >= 0 && sx < d.width as isize {
                            acc += src[sy as usize * d.width + sx as usize];
                        }
                    }
                }
                dst[y as usize * d.width + xx as usize] = acc * norm;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(g: &[f64], d: ImageDims, kernel: usize) -> Vec<f64> {
    let (lo, hi) = window(kernel);
    let norm = 1.0 / (kernel * kernel) as f64;
    let mut dx = vec![0.0; g.len()];
    for (src, dst) in g.chunks(d.plane()).zip(dx.chunks_mut(d.plane())) {
        for y in 0..d.height as isize {
            for xx in 0..d.width as isize {
                let v = src[y as usize * d.width + xx as usize] * norm;
                for dy in lo..=hi {
                    for dx_ in lo..=hi {
                        let (sy, sx) = (y + dy, xx + dx_);
                        if sy >= 0 && sy < d.height as isize && sx >= 0 && sx < d.width as isize {
                            dst[sy as usize * d.width + sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Stride-1 max pooling; out-of-bounds positions are ignored. Returns the
/// pooled values and the flat source index of each maximum (first wins).
pub(crate) fn max_pool(x: &[f64], d: ImageDims, kernel: usize) -> (Vec<f64>, Vec<usize>) {
    let (lo, hi) = window(kernel);
    let plane = d.plane();
    let mut out = vec![0.0; x.len()];
    let mut arg = vec![0usize; x.len()];
    for p in 0..d.batch * d.channels {
        let base = p * plane;
        for y in 0..d.height as isize {
            for xx in 0..d.width as isize {
                let mut best = f64::NEG_INFINITY;
                let mut best_ix = 0;
                for dy in lo..=hi {
                    for dx in lo..=hi {
                        let (sy, sx) = (y + dy, xx + dx);
                        if sy >= 0 && sy < d.height as isize && sx >= 0 && sx < d.width as isize {
                            let ix = base + sy as usize * d.width + sx as usize;
                            if x[ix] > best {
                                best = x[ix];
                                best_ix = ix;
                            }
                        }
                    }
                }
                let o = base + y as usize * d.width + xx as usize;
                out[o] = best;
                arg[o] = best_ix;
            }
        }
    }
    (out, arg)
}

/// 2×2 stride-2 average pooling followed by channel duplication:
/// `[B, C, H, W]` → `[B, 2C, H/2, W/2]`.
pub(crate) fn downsample(x: &[f64], d: ImageDims) -> Vec<f64> {
    let (oh, ow) = (d.height / 2, d.width / 2);
    let oplane = oh * ow;
    let mut out = vec![0.0; d.batch * 2 * d.channels * oplane];
    for b in 0..d.batch {
        for c in 0..d.channels {
            let src = &x[(b * d.channels + c) * d.plane()..][..d.plane()];
            for y in 0..oh {
                for xx in 0..ow {
                    let v = 0.25
                        * (src[2 * y * d.width + 2 * xx]
                            + src[2 * y * d.width + 2 * xx + 1]
                            + src[(2 * y + 1) * d.width + 2 * xx]
                            + src[(2 * y + 1) * d.width + 2 * xx + 1]);
                    out[(b * 2 * d.channels + c) * oplane + y * ow + xx] = v;
                    out[(b * 2 * d.channels + c + d.channels) * oplane + y * ow + xx] = v;
                }
            }
        }
    }
    out
}

pub(crate) fn downsample_backward(g: &[f64], d: ImageDims) -> Vec<f64> {
    let (oh, ow) = (d.height / 2, d.width / 2);
    let oplane = oh * ow;
    let mut dx = vec![0.0; d.batch * d.channels * d.plane()];
    for b in 0..d.batch {
        for c in 0..d.channels {
            let dst = &mut dx[(b * d.channels + c) * d.plane()..][..d.plane()];
            for y in 0..oh {
                for xx in 0..ow {
                    let v = 0.25
                        * (g[(b * 2 * d.channels + c) * oplane + y * ow + xx]
                            + g[(b * 2 * d.channels + c + d.channels) * oplane + y * ow + xx]);
                    dst[2 * y * d.width + 2 * xx] += v;
                    dst[2 * y * d.width + 2 * xx + 1] += v;
                    dst[(2 * y + 1) * d.width + 2 * xx] += v;
                    dst[(2 * y + 1) * d.width + 2 * xx + 1] += v;
                }
            }
        }
    }
    dx
}

pub(crate) const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization without affine terms. Returns the
/// normalized values (also the cached `x̂`) and per-channel `1/σ`.
pub(crate) fn batch_norm(x: &[f64], d: ImageDims) -> (Vec<f64>, Vec<f64>) {
    let plane = d.plane();
    let count = (d.batch * plane) as f64;
    let mut out = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; d.channels];
    for c in 0..d.channels {
        let mut mean = 0.0;
        for b in 0..d.batch {
            mean += x[(b * d.channels + c) * plane..][..plane].iter().sum::<f64>();
        }
        mean /= count;
        let mut var = 0.0;
        for b in 0..d.batch {
            var += x[(b * d.channels + c) * plane..][..plane]
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>();
        }
        var /= count;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        for b in 0..d.batch {
            let off = (b * d.channels + c) * plane;
            for p in 0..plane {
                out[off + p] = (x[off + p] - mean) * is;
            }
        }
    }
    (out, inv_std)
}

pub(crate) fn batch_norm_backward(g: &[f64], xhat: &[f64], inv_std: &[f64], d: ImageDims) -> Vec<f64> {
    let plane = d.plane();
    let count = (d.batch * plane) as f64;
    let mut dx = vec![0.0; g.len()];
    for c in 0..d.channels {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for b in 0..d.batch {
            let off = (b * d.channels + c) * plane;
            for p in 0..plane {
                sum_g += g[off + p];
                sum_gx += g[off + p] * xhat[off + p];
            }
        }
        let (mg, mgx) = (sum_g / count, sum_gx / count);
        for b in 0..d.batch {
            let off = (b * d.channels + c) * plane;
            for p in 0..plane {
                dx[off + p] = inv_std[c] * (g[off + p] - mg - xhat[off + p] * mgx);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn avg_pool_even_kernel_extends_down_right() {
        let d = ImageDims { batch: 1, channels: 1, height: 2, width: 2 };
        let out = avg_pool(&[1.0, 2.0, 3.0, 4.0], d, 2);
        assert_eq!(out, vec![2.5, 1.5, 1.75, 1.0]);
    }

    #[test]
    fn downsample_duplicates_channels() {
        let d = ImageDims { batch: 1, channels: 1, height: 2, width: 2 };
        assert_eq!(downsample(&[1.0, 2.0, 3.0, 4.0], d), vec![2.5, 2.5]);
    }
}
