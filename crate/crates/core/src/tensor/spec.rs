use std::cmp::Ordering;

use super::Tensor;
use crate::error::{ensure_dim, Error, Result};

/// Grouped 2-D convolution parameters.
///
/// `weight` is `[out_channels, in_channels / groups, k, k]`; only square
/// kernels are supported.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(
        weight: Tensor,
        bias: Vec<f32>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let spec = Self {
            weight,
            bias,
            stride,
            padding,
            groups,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Depthwise `k x k` kernel that copies every channel through unchanged.
    pub fn depthwise_identity(channels: usize, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::invalid(
                "depthwise_identity",
                format!("kernel size {k} has no center tap"),
            ));
        }
        let c = k / 2;
        let weight = Tensor::from_fn([channels, 1, k, k], |[_, _, y, x]| {
            if y == c && x == c {
                1.0
            } else {
                0.0
            }
        });
        Self::new(weight, vec![0.0; channels], 1, c, channels)
    }

    pub fn validate(&self) -> Result<()> {
        let [out, _, kh, kw] = self.weight.shape();
        ensure_dim("conv spec", "kernel width", kh, kw)?;
        ensure_dim("conv spec", "bias", out, self.bias.len())?;
        if kh == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::invalid(
                "conv spec",
                "kernel size, stride and groups must be positive",
            ));
        }
        if out % self.groups != 0 {
            return Err(Error::invalid(
                "conv spec",
                format!(
                    "{out} output channels not divisible by {} groups",
                    self.groups
                ),
            ));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_per_group(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.in_per_group() * self.groups
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn is_depthwise(&self) -> bool {
        self.in_per_group() == 1
            && self.groups == self.out_channels()
            && self.groups == self.in_channels()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel_size();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k || pw < k {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {k} larger than padded input {ph}x{pw}"),
            ));
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.len()
    }

    /// Multiply-accumulates for one item at output size `oh x ow`.
    pub fn macs(&self, oh: usize, ow: usize) -> usize {
        let k = self.kernel_size();
        self.out_channels() * self.in_per_group() * k * k * oh * ow
    }
}

/// Inference-time batch norm: `(x - mean) / std * gamma + beta`.
///
/// `std` is the already-stabilized denominator `sqrt(var + eps)`; `eps` is
/// kept for provenance only and takes no part in the arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct BnSpec {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub eps: f32,
}

impl BnSpec {
    pub const DEFAULT_EPS: f32 = 1e-5;

    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        ensure_dim("batchnorm", "beta", c, self.beta.len())?;
        ensure_dim("batchnorm", "mean", c, self.mean.len())?;
        ensure_dim("batchnorm", "std", c, self.std.len())?;
        if let Some(s) = self
            .std
            .iter()
            .find(|s| (**s).partial_cmp(&0.0) != Some(Ordering::Greater))
        {
            return Err(Error::invalid(
                "batchnorm",
                format!("std must be strictly positive, found {s}"),
            ));
        }
        if self.eps.partial_cmp(&0.0) != Some(Ordering::Greater) {
            return Err(Error::invalid("batchnorm", "eps must be positive"));
        }
        Ok(())
    }

    /// Per-channel `(slope, intercept)` of the affine map, in f64.
    pub fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|c| {
                let slope = self.gamma[c] as f64 / self.std[c] as f64;
                (slope, self.beta[c] as f64 - self.mean[c] as f64 * slope)
            })
            .collect()
    }

    /// gamma, beta, mean, std.
    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_square_kernel() {
        let w = Tensor::zeros([2, 1, 3, 1]);
        assert!(ConvSpec::new(w, vec![0.0; 2], 1, 0, 2).is_err());
    }

    #[test]
    fn rejects_indivisible_groups() {
        let w = Tensor::zeros([3, 1, 1, 1]);
        assert!(ConvSpec::new(w, vec![0.0; 3], 1, 0, 2).is_err());
    }

    #[test]
    fn depthwise_detection() {
        let dw = ConvSpec::depthwise_identity(4, 3).unwrap();
        assert!(dw.is_depthwise());
        assert_eq!(dw.in_channels(), 4);
        assert_eq!(dw.param_count(), 4 * 9 + 4);
        let dense = ConvSpec::new(Tensor::zeros([4, 4, 1, 1]), vec![0.0; 4], 1, 0, 1).unwrap();
        assert!(!dense.is_depthwise());
    }

    #[test]
    fn bn_rejects_non_positive_std() {
        let mut bn = BnSpec::identity(3);
        bn.std[1] = 0.0;
        assert!(bn.validate().is_err());
        bn.std[1] = -1.0;
        assert!(bn.validate().is_err());
    }

    #[test]
    fn output_extent_formula() {
        let spec = ConvSpec::new(Tensor::zeros([1, 1, 3, 3]), vec![0.0], 2, 1, 1).unwrap();
        assert_eq!(spec.output_hw(112, 112).unwrap(), (56, 56));
        assert_eq!(spec.output_hw(7, 7).unwrap(), (4, 4));
    }
}
