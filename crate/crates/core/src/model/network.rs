use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{MixerKind, ModelConfig};
use crate::blocks::{Form, MetaBlock, MhlaBlock, MhsaBlock, MlpBlock, RepMixBlock, TokenMixer};
use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{
    avgpool_global, batchnorm, conv2d, gelu, linear, BnSpec, ConvSpec, Matrix, Tensor,
};

/// Stem convolution: `gelu(BN(conv(x)))`, the BN disappearing once fused.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: ConvSpec,
    pub bn: Option<BnSpec>,
}

impl ConvBn {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = conv2d(x, &self.conv)?;
        if let Some(bn) = &self.bn {
            y = batchnorm(&y, bn)?;
        }
        Ok(gelu(&y))
    }

    pub fn form(&self) -> Form {
        if self.bn.is_some() {
            Form::Train
        } else {
            Form::Deploy
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.as_ref().map_or(0, BnSpec::param_count)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    /// Stride-2 RepMix that halves resolution and changes width; absent for
    /// the first stage, whose input comes straight from the stem.
    pub downsample: Option<RepMixBlock>,
    pub blocks: Vec<MetaBlock>,
}

/// Global average pool followed by a fully connected embedding layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// `[C_last, embed_dim]`
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Head {
    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }
}

/// How [`Model::build_with`] fills the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Seeded uniform weights scaled by `1/sqrt(fan_in)`, randomized batch
    /// norm statistics.
    Random { seed: u64 },
    /// Every residual block is an exact identity map and every batch norm is
    /// the identity; stem, downsampler and head keep seeded weights, all
    /// biases are zero.
    Identity { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub stem: Vec<ConvBn>,
    pub stages: Vec<Stage>,
    pub head: Head,
}

/// Output of [`Model::forward_traced`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub embedding: Vec<f32>,
    pub stem_shape: [usize; 4],
    pub stage_shapes: Vec<[usize; 4]>,
}

impl Model {
    /// Train-form model with seeded random weights.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Model> {
        Self::build_with(config, Init::Random { seed })
    }

    pub fn build_with(config: &ModelConfig, init: Init) -> Result<Model> {
        config.validate()?;
        let (seed, identity) = match init {
            Init::Random { seed } => (seed, false),
            Init::Identity { seed } => (seed, true),
        };
        let mut g = WeightGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            identity,
        };
        let k = config.kernel_size;

        let mut stem = Vec::with_capacity(2);
        let mut in_c = 3;
        for _ in 0..2 {
            let conv = g.conv(in_c, config.stem.dim, k, 2, 1, false)?;
            stem.push(ConvBn {
                conv,
                bn: Some(g.bn(config.stem.dim)),
            });
            in_c = config.stem.dim;
        }

        let mut stages = Vec::with_capacity(config.stages.len());
        for (i, sc) in config.stages.iter().enumerate() {
            let downsample = if i == 0 {
                None
            } else {
                let prev = config.stages[i - 1].dim;
                Some(RepMixBlock::train(
                    g.conv(prev, sc.dim, k, 2, 1, false)?,
                    g.conv(prev, sc.dim, 1, 2, 1, false)?,
                    g.bn(sc.dim),
                )?)
            };
            let mut blocks = Vec::with_capacity(sc.blocks);
            for _ in 0..sc.blocks {
                let token_mixer = match sc.mixer {
                    MixerKind::RepMix => TokenMixer::RepMix(RepMixBlock::train(
                        g.conv(sc.dim, sc.dim, k, 1, sc.dim, true)?,
                        g.conv(sc.dim, sc.dim, 1, 1, sc.dim, true)?,
                        g.bn(sc.dim),
                    )?),
                    MixerKind::Mhsa => {
                        let c = sc.dim;
                        TokenMixer::Mhsa(MhsaBlock::new(
                            g.matrix(c, c, c, false),
                            g.matrix(c, c, c, false),
                            g.matrix(c, c, c, false),
                            g.matrix(c, c, c, true),
                            config.attention.heads,
                        )?)
                    }
                    MixerKind::Mhla => {
                        let n = sc.tokens();
                        let hidden = n * config.attention.mhla_expansion;
                        let mut w_in = Vec::new();
                        let mut w_out = Vec::new();
                        for _ in 0..config.attention.heads {
                            w_in.push(g.matrix(n, hidden, n, false));
                            w_out.push(g.matrix(hidden, n, hidden, true));
                        }
                        TokenMixer::Mhla(MhlaBlock::new(w_in, w_out)?)
                    }
                };
                let hidden = sc.dim * config.mlp_expansion;
                let channel_mixer = MlpBlock::train(
                    g.matrix(sc.dim, hidden, sc.dim, false),
                    g.bn(hidden),
                    g.matrix(hidden, sc.dim, hidden, true),
                    g.bn(sc.dim),
                )?;
                blocks.push(MetaBlock {
                    token_mixer,
                    channel_mixer,
                });
            }
            stages.push(Stage { downsample, blocks });
        }

        let last = config.stages.last().map_or(0, |s| s.dim);
        let head = Head {
            weight: g.matrix(last, config.embed_dim, last, false),
            bias: g.bias(config.embed_dim, last),
        };
        let model = Model {
            config: config.clone(),
            stem,
            stages,
            head,
        };
        model.check_structure()?;
        Ok(model)
    }

    /// Checks that the parts agree with the config and with each other.
    pub fn check_structure(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        ensure_dim("model", "stem convolutions", 2, self.stem.len())?;
        ensure_dim("model", "stages", c.stages.len(), self.stages.len())?;
        let mut width = 3;
        for s in &self.stem {
            s.conv.validate()?;
            ensure_dim("stem", "in channels", width, s.conv.in_channels())?;
            ensure_dim("stem", "stride", 2, s.conv.stride)?;
            if let Some(bn) = &s.bn {
                bn.validate()?;
                ensure_dim("stem", "bn channels", s.conv.out_channels(), bn.channels())?;
            }
            width = s.conv.out_channels();
        }
        for (i, (stage, sc)) in self.stages.iter().zip(&c.stages).enumerate() {
            match (&stage.downsample, i) {
                (None, 0) => {}
                (Some(ds), i) if i > 0 => {
                    ds.validate()?;
                    ensure_dim("downsample", "in channels", width, ds.in_channels())?;
                    ensure_dim("downsample", "stride", 2, ds.stride())?;
                    width = ds.out_channels();
                }
                _ => {
                    return Err(Error::invalid(
                        "model",
                        format!("stage {} downsampler does not match the config", i + 1),
                    ))
                }
            }
            ensure_dim("stage", "channels", sc.dim, width)?;
            ensure_dim("stage", "blocks", sc.blocks, stage.blocks.len())?;
            for block in &stage.blocks {
                let (kind, channels) = match &block.token_mixer {
                    TokenMixer::RepMix(b) => {
                        b.validate()?;
                        ensure_dim("repmix", "stride", 1, b.stride())?;
                        (MixerKind::RepMix, b.out_channels())
                    }
                    TokenMixer::Mhsa(b) => {
                        b.validate()?;
                        ensure_dim("mhsa", "heads", c.attention.heads, b.heads)?;
                        (MixerKind::Mhsa, b.channels())
                    }
                    TokenMixer::Mhla(b) => {
                        b.validate()?;
                        ensure_dim("mhla", "heads", c.attention.heads, b.heads)?;
                        ensure_dim("mhla", "tokens", sc.tokens(), b.tokens)?;
                        (MixerKind::Mhla, width)
                    }
                };
                if kind != sc.mixer {
                    return Err(Error::invalid(
                        "model",
                        format!(
                            "stage {} has a {} block, config says {}",
                            i + 1,
                            kind.as_str(),
                            sc.mixer.as_str()
                        ),
                    ));
                }
                ensure_dim("mixer", "channels", width, channels)?;
                block.channel_mixer.validate()?;
                ensure_dim("mlp", "channels", width, block.channel_mixer.channels())?;
            }
        }
        ensure_dim("head", "in features", width, self.head.weight.rows())?;
        ensure_dim("head", "embedding", c.embed_dim, self.head.weight.cols())?;
        ensure_dim("head", "bias", c.embed_dim, self.head.bias.len())?;
        Ok(())
    }

    pub fn form(&self) -> Form {
        let stem = self.stem.iter().map(ConvBn::form);
        let stages = self.stages.iter().flat_map(|s| {
            s.downsample
                .iter()
                .map(RepMixBlock::form)
                .chain(s.blocks.iter().map(MetaBlock::form))
        });
        Form::combine(stem.chain(stages))
    }

    pub fn param_count(&self) -> usize {
        self.stem.iter().map(ConvBn::param_count).sum::<usize>()
            + self
                .stages
                .iter()
                .map(|s| {
                    s.downsample.as_ref().map_or(0, RepMixBlock::param_count)
                        + s.blocks.iter().map(MetaBlock::param_count).sum::<usize>()
                })
                .sum::<usize>()
            + self.head.param_count()
    }

    /// Embedding of a single `[1, 3, S, S]` image; unnormalized.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<f32>> {
        ensure_dim("forward", "batch", 1, image.batch())?;
        Ok(self.forward_traced(image)?.embedding)
    }

    /// Embeddings `[B, embed_dim]` for a batch of images.
    pub fn embed_batch(&self, images: &Tensor) -> Result<Matrix> {
        self.run(images, |_| {})
    }

    pub fn forward_traced(&self, image: &Tensor) -> Result<ForwardTrace> {
        ensure_dim("forward", "batch", 1, image.batch())?;
        let mut shapes = Vec::new();
        let out = self.run(image, |s| shapes.push(s))?;
        Ok(ForwardTrace {
            embedding: out.into_data(),
            stem_shape: shapes[0],
            stage_shapes: shapes[1..].to_vec(),
        })
    }

    fn run(&self, images: &Tensor, mut observe: impl FnMut([usize; 4])) -> Result<Matrix> {
        let size = self.config.input_size;
        let [_, c, h, w] = images.shape();
        ensure_dim("forward", "input channels", 3, c)?;
        ensure_dim("forward", "input height", size, h)?;
        ensure_dim("forward", "input width", size, w)?;

        let mut x = images.clone();
        for conv in &self.stem {
            x = conv.forward(&x)?;
        }
        observe(x.shape());
        for (stage, sc) in self.stages.iter().zip(&self.config.stages) {
            if let Some(ds) = &stage.downsample {
                x = ds.forward(&x)?;
            }
            for block in &stage.blocks {
                x = block.forward(&x)?;
            }
            if x.height() != sc.resolution || x.width() != sc.resolution || x.channels() != sc.dim {
                return Err(Error::invalid(
                    "forward",
                    format!(
                        "stage produced {:?}, expected {} channels at {}x{}",
                        x.shape(),
                        sc.dim,
                        sc.resolution,
                        sc.resolution
                    ),
                ));
            }
            observe(x.shape());
        }
        let pooled = avgpool_global(&x)?;
        linear(&pooled, &self.head.weight, Some(&self.head.bias))
    }
}

struct WeightGen {
    rng: ChaCha8Rng,
    identity: bool,
}

impl WeightGen {
    fn uniform(&mut self, n: usize, bound: f32) -> Vec<f32> {
        (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect()
    }

    fn bias(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        if self.identity {
            vec![0.0; n]
        } else {
            self.uniform(n, 1.0 / (fan_in as f32).sqrt())
        }
    }

    /// `residual_branch` weights are zeroed under identity init.
    fn conv(
        &mut self,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        residual_branch: bool,
    ) -> Result<ConvSpec> {
        let fan_in = cin / groups * k * k;
        let len = cout * fan_in;
        let data = if self.identity && residual_branch {
            vec![0.0; len]
        } else {
            self.uniform(len, 1.0 / (fan_in as f32).sqrt())
        };
        let bias = if residual_branch && self.identity {
            vec![0.0; cout]
        } else {
            self.bias(cout, fan_in)
        };
        ConvSpec::new(
            Tensor::new([cout, cin / groups, k, k], data)?,
            bias,
            stride,
            k / 2,
            groups,
        )
    }

    /// `zero_under_identity` marks the last projection of a residual branch.
    fn matrix(
        &mut self,
        rows: usize,
        cols: usize,
        fan_in: usize,
        zero_under_identity: bool,
    ) -> Matrix {
        if self.identity && zero_under_identity {
            return Matrix::zeros(rows, cols);
        }
        let data = self.uniform(rows * cols, 1.0 / (fan_in as f32).sqrt());
        Matrix::new(rows, cols, data).expect("finite uniform draws")
    }

    fn bn(&mut self, c: usize) -> BnSpec {
        if self.identity {
            return BnSpec::identity(c);
        }
        let mut draw = |lo: f32, hi: f32| -> Vec<f32> {
            (0..c).map(|_| self.rng.random_range(lo..hi)).collect()
        };
        BnSpec {
            gamma: draw(0.5, 1.0),
            beta: draw(-0.1, 0.1),
            mean: draw(-0.1, 0.1),
            std: draw(0.5, 1.5),
            eps: BnSpec::DEFAULT_EPS,
        }
    }
}
