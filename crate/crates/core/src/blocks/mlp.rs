use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{
    batchnorm_rows_in_place, ensure_dims, gelu_in_place, gemm, BnSpec, Matrix, Tensor,
};

/// Channel mixer: `BN(gelu(BN(x W_e)) W_r)` at every spatial position.
///
/// The biases are absent in train form and appear once the batch norms are
/// folded into the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpBlock {
    /// `[C, r*C]`
    pub w_expand: Matrix,
    pub b_expand: Option<Vec<f32>>,
    pub bn_inner: Option<BnSpec>,
    /// `[r*C, C]`
    pub w_reduce: Matrix,
    pub b_reduce: Option<Vec<f32>>,
    pub bn_outer: Option<BnSpec>,
}

impl MlpBlock {
    pub fn train(
        w_expand: Matrix,
        bn_inner: BnSpec,
        w_reduce: Matrix,
        bn_outer: BnSpec,
    ) -> Result<Self> {
        let block = Self {
            w_expand,
            b_expand: None,
            bn_inner: Some(bn_inner),
            w_reduce,
            b_reduce: None,
            bn_outer: Some(bn_outer),
        };
        block.validate()?;
        Ok(block)
    }

    pub fn channels(&self) -> usize {
        self.w_expand.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_expand.cols()
    }

    pub fn expansion(&self) -> usize {
        self.hidden() / self.channels().max(1)
    }

    pub fn has_bn(&self) -> bool {
        self.bn_inner.is_some() || self.bn_outer.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, hidden) = (self.channels(), self.hidden());
        if c == 0 || hidden == 0 || hidden % c != 0 {
            return Err(Error::invalid(
                "mlp",
                format!("hidden width {hidden} is not a positive multiple of {c} channels"),
            ));
        }
        ensure_dims("mlp", &self.w_reduce, hidden, c)?;
        if let Some(b) = &self.b_expand {
            ensure_dim("mlp", "expand bias", hidden, b.len())?;
        }
        if let Some(b) = &self.b_reduce {
            ensure_dim("mlp", "reduce bias", c, b.len())?;
        }
        if let Some(bn) = &self.bn_inner {
            bn.validate()?;
            ensure_dim("mlp", "inner bn channels", hidden, bn.channels())?;
        }
        if let Some(bn) = &self.bn_outer {
            bn.validate()?;
            ensure_dim("mlp", "outer bn channels", c, bn.channels())?;
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.validate()?;
        let [_, c, h, w] = x.shape();
        ensure_dim("mlp", "channels", self.channels(), c)?;
        let plane = h * w;
        let hidden_c = self.hidden();
        // Channel-major items: out[co, p] = sum_ci W^T[co, ci] x[ci, p].
        let expand_t = self.w_expand.transpose();
        let reduce_t = self.w_reduce.transpose();
        let mut hidden = vec![0f32; hidden_c * plane];
        let mut out = vec![0f32; x.numel()];
        for (n, dst) in out.chunks_exact_mut(c * plane).enumerate() {
            gemm(
                expand_t.data(),
                x.item(n),
                hidden_c,
                c,
                plane,
                self.b_expand.as_deref(),
                None,
                &mut hidden,
            );
            if let Some(bn) = &self.bn_inner {
                batchnorm_rows_in_place(&mut hidden, plane, bn);
            }
            gelu_in_place(&mut hidden);
            gemm(
                reduce_t.data(),
                &hidden,
                c,
                hidden_c,
                plane,
                self.b_reduce.as_deref(),
                None,
                dst,
            );
            if let Some(bn) = &self.bn_outer {
                batchnorm_rows_in_place(dst, plane, bn);
            }
        }
        Tensor::new(x.shape(), out)
    }

    pub fn param_count(&self) -> usize {
        self.w_expand.data().len()
            + self.w_reduce.data().len()
            + self.b_expand.as_ref().map_or(0, Vec::len)
            + self.b_reduce.as_ref().map_or(0, Vec::len)
            + self.bn_inner.as_ref().map_or(0, BnSpec::param_count)
            + self.bn_outer.as_ref().map_or(0, BnSpec::param_count)
    }
}
