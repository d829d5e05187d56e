use super::counter::record_norm_ops;
use super::kernels::{depthwise_plane, gemm, im2col, PlaneGeometry};
use super::{BnSpec, ConvSpec, Matrix, Tensor};
use crate::error::{ensure_dim, Error, Result};

/// Grouped cross-correlation with bias.
pub fn conv2d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let [b, c, h, w] = x.shape();
    ensure_dim("conv2d", "channels", spec.in_channels(), c)?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let oc = spec.out_channels();
    let k = spec.kernel_size();
    let geom = PlaneGeometry {
        h,
        w,
        oh,
        ow,
        k,
        stride: spec.stride,
        padding: spec.padding,
    };
    let plane_out = oh * ow;
    let mut out = vec![0f32; b * oc * plane_out];
    let weight = spec.weight.data();

    for n in 0..b {
        let input = x.item(n);
        let output = &mut out[n * oc * plane_out..(n + 1) * oc * plane_out];
        if spec.is_depthwise() {
            let mut acc = vec![0f64; plane_out];
            for ch in 0..c {
                acc.fill(spec.bias[ch] as f64);
                depthwise_plane(
                    &input[ch * h * w..(ch + 1) * h * w],
                    &weight[ch * k * k..(ch + 1) * k * k],
                    &geom,
                    &mut acc,
                );
                for (o, a) in output[ch * plane_out..(ch + 1) * plane_out]
                    .iter_mut()
                    .zip(&acc)
                {
                    *o = *a as f32;
                }
            }
            continue;
        }

        let icpg = spec.in_per_group();
        let ocpg = oc / spec.groups;
        let patch = icpg * k * k;
        let pointwise = k == 1 && spec.stride == 1 && spec.padding == 0;
        for g in 0..spec.groups {
            let group_in = &input[g * icpg * h * w..(g + 1) * icpg * h * w];
            let unfolded;
            let cols: &[f32] = if pointwise {
                group_in
            } else {
                unfolded = im2col(group_in, icpg, &geom);
                &unfolded
            };
            gemm(
                &weight[g * ocpg * patch..(g + 1) * ocpg * patch],
                cols,
                ocpg,
                patch,
                plane_out,
                Some(&spec.bias[g * ocpg..(g + 1) * ocpg]),
                None,
                &mut output[g * ocpg * plane_out..(g + 1) * ocpg * plane_out],
            );
        }
    }
    Tensor::from_parts([b, oc, oh, ow], out).ensure_finite("conv2d")
}

/// Per-channel inference batch norm.
pub fn batchnorm(x: &Tensor, bn: &BnSpec) -> Result<Tensor> {
    bn.validate()?;
    let [_, c, h, w] = x.shape();
    ensure_dim("batchnorm", "channels", bn.channels(), c)?;
    let mut data = x.data().to_vec();
    for item in data.chunks_exact_mut(c * h * w) {
        batchnorm_rows_in_place(item, h * w, bn);
    }
    Tensor::from_parts(x.shape(), data).ensure_finite("batchnorm")
}

/// Applies `bn` to a channel-major block `[C, plane]`; `bn` must already be
/// validated against `C`.
pub(crate) fn batchnorm_rows_in_place(data: &mut [f32], plane: usize, bn: &BnSpec) {
    record_norm_ops(2 * data.len());
    for (row, (slope, intercept)) in data.chunks_exact_mut(plane).zip(bn.affine()) {
        for v in row {
            *v = (*v as f64 * slope + intercept) as f32;
        }
    }
}

/// `x * w + b` for `x: [rows, in]`, `w: [in, out]`.
pub fn linear(x: &Matrix, w: &Matrix, b: Option<&[f32]>) -> Result<Matrix> {
    ensure_dim("linear", "inner dimension", w.rows(), x.cols())?;
    if let Some(b) = b {
        ensure_dim("linear", "bias", w.cols(), b.len())?;
    }
    let mut out = vec![0f32; x.rows() * w.cols()];
    gemm(
        x.data(),
        w.data(),
        x.rows(),
        x.cols(),
        w.cols(),
        None,
        b,
        &mut out,
    );
    let out = Matrix::from_parts(x.rows(), w.cols(), out);
    if out.data().iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite { op: "linear" })
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    linear(a, b, None)
}

/// Exact erf-form GELU.
pub fn gelu_scalar(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))) as f32
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn gelu_matrix(x: &Matrix) -> Matrix {
    x.map(gelu_scalar)
}

pub(crate) fn gelu_in_place(values: &mut [f32]) {
    for v in values {
        *v = gelu_scalar(*v);
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Vec::with_capacity(x.data().len());
    let mut row_buf = vec![0f64; x.cols()];
    for i in 0..x.rows() {
        softmax_into(x.row(i), &mut row_buf);
        out.extend(row_buf.iter().map(|&v| v as f32));
    }
    Matrix::from_parts(x.rows(), x.cols(), out)
}

pub(crate) fn softmax_into(row: &[f32], out: &mut [f64]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v as f64 - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-channel spatial mean, `[batch, channels]`.
pub fn avgpool_global(x: &Tensor) -> Result<Matrix> {
    let [b, c, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::invalid("avgpool_global", "empty spatial extent"));
    }
    let plane = h * w;
    let data = x
        .data()
        .chunks_exact(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Ok(Matrix::from_parts(b, c, data))
}
