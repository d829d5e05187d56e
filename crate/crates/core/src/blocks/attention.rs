//! Token mixers that operate on flattened `[N, C]` token matrices.

use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{ensure_dims, gelu_in_place, gemm, matmul, softmax_into, Matrix};

/// Multi-head softmax self-attention with bias-free projections.
#[derive(Clone, Debug, PartialEq)]
pub struct MhsaBlock {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub heads: usize,
}

impl MhsaBlock {
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix, heads: usize) -> Result<Self> {
        let block = Self {
            wq,
            wk,
            wv,
            wo,
            heads,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn channels(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for w in [&self.wq, &self.wk, &self.wv, &self.wo] {
            ensure_dims("mhsa", w, c, c)?;
        }
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return Err(Error::invalid(
                "mhsa",
                format!("{c} channels not divisible by {} heads", self.heads),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let (mixed, _) = self.attend(x, false)?;
        matmul(&mixed, &self.wo)
    }

    /// Per-head `[N, N]` attention weights for `x`.
    pub fn attention_maps(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        Ok(self.attend(x, true)?.1)
    }

    fn attend(&self, x: &Matrix, keep_maps: bool) -> Result<(Matrix, Vec<Matrix>)> {
        self.validate()?;
        let n = x.rows();
        if n == 0 {
            return Err(Error::invalid("mhsa", "no tokens"));
        }
        let c = self.channels();
        ensure_dim("mhsa", "channels", c, x.cols())?;
        let q = matmul(x, &self.wq)?;
        let k = matmul(x, &self.wk)?;
        let v = matmul(x, &self.wv)?;

        let d = self.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = vec![0f32; n * c];
        let mut maps = Vec::new();
        let mut logits = vec![0f32; n];
        let mut probs = vec![0f64; n];
        for h in 0..self.heads {
            let cols = h * d..(h + 1) * d;
            // Q_h K_h^T and P V_h: n * n * d multiply-accumulates each.
            crate::tensor::count_macs(2 * n * n * d);
            let mut map = keep_maps.then(|| Vec::with_capacity(n * n));
            for i in 0..n {
                let qi = &q.row(i)[cols.clone()];
                for (j, logit) in logits.iter_mut().enumerate() {
                    let kj = &k.row(j)[cols.clone()];
                    let dot: f64 = qi.iter().zip(kj).map(|(&a, &b)| a as f64 * b as f64).sum();
                    *logit = (dot * scale) as f32;
                }
                softmax_into(&logits, &mut probs);
                let out_row = &mut out[i * c + h * d..i * c + (h + 1) * d];
                for (t, o) in out_row.iter_mut().enumerate() {
                    let acc: f64 = probs
                        .iter()
                        .enumerate()
                        .map(|(j, &p)| p * v.get(j, h * d + t) as f64)
                        .sum();
                    *o = acc as f32;
                }
                if let Some(map) = map.as_mut() {
                    map.extend(probs.iter().map(|&p| p as f32));
                }
            }
            if let Some(map) = map {
                maps.push(Matrix::new(n, n, map)?);
            }
        }
        Ok((Matrix::new(n, c, out)?, maps))
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels() * self.channels()
    }
}

/// Nonlinearity between the two token-dimension projections of [`MhlaBlock`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Gelu,
    /// Makes the block linear; used to probe for stray bias terms.
    Identity,
}

/// Multi-head linear attention: channels are split into heads and each head
/// mixes tokens with its own two-layer MLP along the token axis,
/// `W_out(σ(X_h W_in))`. The token count is fixed by the weight shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct MhlaBlock {
    pub heads: usize,
    pub tokens: usize,
    pub expansion: usize,
    /// Per head, `[tokens, tokens * expansion]`.
    pub w_in: Vec<Matrix>,
    /// Per head, `[tokens * expansion, tokens]`.
    pub w_out: Vec<Matrix>,
}

impl MhlaBlock {
    pub fn new(w_in: Vec<Matrix>, w_out: Vec<Matrix>) -> Result<Self> {
        let heads = w_in.len();
        let tokens = w_in.first().map_or(0, Matrix::rows);
        let expansion = match w_in.first() {
            Some(m) if tokens > 0 => m.cols() / tokens,
            _ => 0,
        };
        let block = Self {
            heads,
            tokens,
            expansion,
            w_in,
            w_out,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.tokens == 0 || self.expansion == 0 {
            return Err(Error::invalid(
                "mhla",
                "heads, tokens and expansion must be positive",
            ));
        }
        ensure_dim("mhla", "w_in heads", self.heads, self.w_in.len())?;
        ensure_dim("mhla", "w_out heads", self.heads, self.w_out.len())?;
        let hidden = self.tokens * self.expansion;
        for (w_in, w_out) in self.w_in.iter().zip(&self.w_out) {
            ensure_dims("mhla", w_in, self.tokens, hidden)?;
            ensure_dims("mhla", w_out, hidden, self.tokens)?;
        }
        Ok(())
    }

    /// Tokens `[N, C]` in, tokens out.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_with(x, Activation::Gelu)
    }

    pub fn forward_with(&self, x: &Matrix, activation: Activation) -> Result<Matrix> {
        ensure_dim("mhla", "tokens", self.tokens, x.rows())?;
        Ok(self
            .forward_channel_major(&x.transpose(), activation)?
            .transpose())
    }

    /// Same computation on a channel-major `[C, N]` matrix, which is how a
    /// feature map is laid out already; each head's slice is a row block.
    pub fn forward_channel_major(&self, x: &Matrix, activation: Activation) -> Result<Matrix> {
        self.validate()?;
        let (c, n) = (x.rows(), x.cols());
        ensure_dim("mhla", "tokens", self.tokens, n)?;
        if !c.is_multiple_of(self.heads) {
            return Err(Error::invalid(
                "mhla",
                format!("{c} channels not divisible by {} heads", self.heads),
            ));
        }
        let d = c / self.heads;
        let hidden_len = n * self.expansion;
        let mut hidden = vec![0f32; d * hidden_len];
        let mut out = vec![0f32; c * n];
        for (h, (w_in, w_out)) in self.w_in.iter().zip(&self.w_out).enumerate() {
            let rows = h * d * n..(h + 1) * d * n;
            gemm(
                &x.data()[rows.clone()],
                w_in.data(),
                d,
                n,
                hidden_len,
                None,
                None,
                &mut hidden,
            );
            if activation == Activation::Gelu {
                gelu_in_place(&mut hidden);
            }
            gemm(
                &hidden,
                w_out.data(),
                d,
                hidden_len,
                n,
                None,
                None,
                &mut out[rows],
            );
        }
        let out = Matrix::new(c, n, out)?;
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        2 * self.heads * self.tokens * self.tokens * self.expansion
    }
}
