use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{batchnorm, conv2d, BnSpec, ConvSpec, Tensor};

use super::Form;

/// Reparameterizable convolutional token mixer:
/// `y = BN(conv_kxk(x) + conv_1x1(x)) (+ x)`.
///
/// Each optional part disappears as fusion absorbs it: `bn` into the
/// convolutions, `conv_1x1` into the center tap of `conv_kxk`, and the
/// residual into an identity tap. A fully fused block is a single `conv_kxk`.
///
/// Stride-1 blocks are depthwise and carry the residual. Stride-2 blocks are
/// downsamplers: no residual, and their convolutions may change channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct RepMixBlock {
    pub conv_kxk: ConvSpec,
    pub conv_1x1: Option<ConvSpec>,
    pub bn: Option<BnSpec>,
    pub residual: bool,
}

impl RepMixBlock {
    /// Unfused block; the residual is present iff the stride is 1.
    pub fn train(conv_kxk: ConvSpec, conv_1x1: ConvSpec, bn: BnSpec) -> Result<Self> {
        let residual = conv_kxk.stride == 1;
        let block = Self {
            conv_kxk,
            conv_1x1: Some(conv_1x1),
            bn: Some(bn),
            residual,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn deploy(fused: ConvSpec) -> Result<Self> {
        let block = Self {
            conv_kxk: fused,
            conv_1x1: None,
            bn: None,
            residual: false,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn stride(&self) -> usize {
        self.conv_kxk.stride
    }

    pub fn in_channels(&self) -> usize {
        self.conv_kxk.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv_kxk.out_channels()
    }

    pub fn form(&self) -> Form {
        let deploy = self.conv_1x1.is_none() && self.bn.is_none() && !self.residual;
        let train =
            self.conv_1x1.is_some() && self.bn.is_some() && self.residual == (self.stride() == 1);
        match (train, deploy) {
            (true, _) => Form::Train,
            (_, true) => Form::Deploy,
            _ => Form::Partial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kxk = &self.conv_kxk;
        kxk.validate()?;
        if let Some(one) = &self.conv_1x1 {
            one.validate()?;
            ensure_dim("repmix", "1x1 kernel", 1, one.kernel_size())?;
            ensure_dim(
                "repmix",
                "1x1 out channels",
                kxk.out_channels(),
                one.out_channels(),
            )?;
            ensure_dim(
                "repmix",
                "1x1 in channels",
                kxk.in_channels(),
                one.in_channels(),
            )?;
            ensure_dim("repmix", "1x1 groups", kxk.groups, one.groups)?;
            ensure_dim("repmix", "1x1 stride", kxk.stride, one.stride)?;
            if one.padding + kxk.kernel_size() / 2 != kxk.padding {
                return Err(Error::invalid(
                    "repmix",
                    "1x1 branch is not aligned with the kxk center tap",
                ));
            }
        }
        if let Some(bn) = &self.bn {
            bn.validate()?;
            ensure_dim("repmix", "bn channels", kxk.out_channels(), bn.channels())?;
        }
        if self.residual {
            if kxk.stride != 1 {
                return Err(Error::Form(
                    "residual requires stride 1 (downsampling blocks have none)".into(),
                ));
            }
            ensure_dim(
                "repmix",
                "residual channels",
                kxk.in_channels(),
                kxk.out_channels(),
            )?;
            let (k, p) = (kxk.kernel_size(), kxk.padding);
            if k % 2 == 0 || 2 * p + 1 != k {
                return Err(Error::Form(
                    "residual requires an odd, same-padded kernel".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.validate()?;
        let mut y = conv2d(x, &self.conv_kxk)?;
        if let Some(one) = &self.conv_1x1 {
            y = y.add(&conv2d(x, one)?)?;
        }
        if let Some(bn) = &self.bn {
            y = batchnorm(&y, bn)?;
        }
        if self.residual {
            y = y.add(x)?;
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.conv_kxk.param_count()
            + self.conv_1x1.as_ref().map_or(0, ConvSpec::param_count)
            + self.bn.as_ref().map_or(0, BnSpec::param_count)
    }
}
