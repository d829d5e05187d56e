//! Block kinds of the backbone and the two-residual block wrapper
//! `X' = X + TokenMixer(X)`, `X'' = X' + ChannelMixer(X')`.

mod attention;
mod mlp;
mod repmix;

pub use attention::{Activation, MhlaBlock, MhsaBlock};
pub use mlp::MlpBlock;
pub use repmix::RepMixBlock;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Matrix, Tensor};

/// Parameterization state of a block or model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// Multi-branch, unfused batch norms.
    Train,
    /// Some but not all fusions applied.
    Partial,
    /// Every fusible structure collapsed.
    Deploy,
}

impl Form {
    /// Combined form of a collection of parts.
    pub fn combine(forms: impl IntoIterator<Item = Form>) -> Form {
        let mut iter = forms.into_iter();
        let Some(first) = iter.next() else {
            return Form::Deploy;
        };
        iter.fold(first, |acc, f| if acc == f { acc } else { Form::Partial })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Form::Train => "train",
            Form::Partial => "partial",
            Form::Deploy => "deploy",
        }
    }
}

impl std::fmt::Display for Form {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TokenMixer {
    RepMix(RepMixBlock),
    Mhsa(MhsaBlock),
    Mhla(MhlaBlock),
}

impl TokenMixer {
    pub fn param_count(&self) -> usize {
        match self {
            TokenMixer::RepMix(b) => b.param_count(),
            TokenMixer::Mhsa(b) => b.param_count(),
            TokenMixer::Mhla(b) => b.param_count(),
        }
    }
}

/// One backbone block: a token mixer followed by the channel-mixer MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaBlock {
    pub token_mixer: TokenMixer,
    pub channel_mixer: MlpBlock,
}

impl MetaBlock {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mixed = self.mix_tokens(x)?;
        mixed.add(&self.channel_mixer.forward(&mixed)?)
    }

    /// `X'`. RepMix already contains its residual, so nothing is added here.
    pub fn mix_tokens(&self, x: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = x.shape();
        let mixed = match &self.token_mixer {
            TokenMixer::RepMix(block) => return block.forward(x),
            TokenMixer::Mhsa(block) => {
                let items = (0..b)
                    .map(|n| block.forward(&x.tokens(n)))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::from_tokens(&items, h, w)?
            }
            TokenMixer::Mhla(block) => {
                let mut data = Vec::with_capacity(x.numel());
                for n in 0..b {
                    let item = Matrix::new(c, h * w, x.item(n).to_vec())?;
                    let y = block.forward_channel_major(&item, Activation::Gelu)?;
                    data.extend_from_slice(y.data());
                }
                Tensor::new([b, c, h, w], data)?
            }
        };
        x.add(&mixed)
    }

    pub fn form(&self) -> Form {
        let mixer = match &self.token_mixer {
            TokenMixer::RepMix(b) => Some(b.form()),
            _ => None,
        };
        let mlp = if self.channel_mixer.has_bn() {
            Form::Train
        } else {
            Form::Deploy
        };
        Form::combine(mixer.into_iter().chain([mlp]))
    }

    pub fn param_count(&self) -> usize {
        self.token_mixer.param_count() + self.channel_mixer.param_count()
    }
}
