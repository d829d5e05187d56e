//! Inner loops. All accumulation happens in f64.

use super::counter::record_macs;

const COL_BLOCK: usize = 256;

/// `out[m, n] = a[m, k] * b[k, n] (+ row_bias[m]) (+ col_bias[n])`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f32],
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
    row_bias: Option<&[f32]>,
    col_bias: Option<&[f32]>,
    out: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    record_macs(m * k * n);

    let mut acc = [0f64; COL_BLOCK];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let rb = row_bias.map_or(0.0, |rb| rb[i] as f64);
        for j0 in (0..n).step_by(COL_BLOCK) {
            let nb = COL_BLOCK.min(n - j0);
            let acc = &mut acc[..nb];
            match col_bias {
                Some(cb) => {
                    for (a, &c) in acc.iter_mut().zip(&cb[j0..j0 + nb]) {
                        *a = rb + c as f64;
                    }
                }
                None => acc.fill(rb),
            }
            for (p, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let av = av as f64;
                let b_row = &b[p * n + j0..p * n + j0 + nb];
                for (a, &bv) in acc.iter_mut().zip(b_row) {
                    *a += av * bv as f64;
                }
            }
            for (o, &a) in out[i * n + j0..i * n + j0 + nb].iter_mut().zip(acc.iter()) {
                *o = a as f32;
            }
        }
    }
}

pub(crate) struct PlaneGeometry {
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PlaneGeometry {
    /// Output columns `lo..hi` whose input column `ox * stride + tap - padding`
    /// is inside the plane.
    fn valid_range(&self, tap: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let lo = if tap >= self.padding {
            0
        } else {
            (self.padding - tap).div_ceil(self.stride)
        };
        let hi = if extent + self.padding <= tap {
            0
        } else {
            ((extent - 1 + self.padding - tap) / self.stride + 1).min(out_extent)
        };
        (lo, hi.max(lo))
    }
}

/// Single-channel `k x k` correlation of `plane` into `out` (which already
/// holds the bias).
pub(crate) fn depthwise_plane(plane: &[f32], kernel: &[f32], g: &PlaneGeometry, out: &mut [f64]) {
    record_macs(g.k * g.k * g.oh * g.ow);
    for ky in 0..g.k {
        let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
        for kx in 0..g.k {
            let wv = kernel[ky * g.k + kx] as f64;
            if wv == 0.0 {
                continue;
            }
            let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
            for oy in oy_lo..oy_hi {
                let iy = oy * g.stride + ky - g.padding;
                let in_row = &plane[iy * g.w..(iy + 1) * g.w];
                let out_row = &mut out[oy * g.ow..(oy + 1) * g.ow];
                if g.stride == 1 {
                    let shift = ox_lo + kx - g.padding;
                    let len = ox_hi - ox_lo;
                    for (o, &v) in out_row[ox_lo..ox_hi]
                        .iter_mut()
                        .zip(&in_row[shift..shift + len])
                    {
                        *o += wv * v as f64;
                    }
                } else {
                    for ox in ox_lo..ox_hi {
                        out_row[ox] += wv * in_row[ox * g.stride + kx - g.padding] as f64;
                    }
                }
            }
        }
    }
}

/// Unfolds `channels` planes into a `[channels * k * k, oh * ow]` patch matrix.
pub(crate) fn im2col(input: &[f32], channels: usize, g: &PlaneGeometry) -> Vec<f32> {
    let cols = g.oh * g.ow;
    let mut out = vec![0f32; channels * g.k * g.k * cols];
    for c in 0..channels {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.k {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                let row = ((c * g.k + ky) * g.k + kx) * cols;
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.padding;
                    let dst = &mut out[row + oy * g.ow..row + (oy + 1) * g.ow];
                    for ox in ox_lo..ox_hi {
                        dst[ox] = plane[iy * g.w + ox * g.stride + kx - g.padding];
                    }
                }
            }
        }
    }
    out
}
