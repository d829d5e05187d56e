//! Model <-> [`WeightArchive`] mapping.
//!
//! The config travels as UTF-8 TOML stored byte-per-value under
//! `meta.config`. Every other entry is a weight; which optional entries are
//! present determines the form of each block, so train, partially fused and
//! deploy models share one naming scheme:
//!
//! ```text
//! stem.{i}.conv.{weight,bias,geometry}   stem.{i}.bn.{gamma,beta,mean,std,eps}
//! stages.{s}.downsample.{kxk,one,bn}.*
//! stages.{s}.blocks.{b}.mixer.{kxk,one,bn}.*, mixer.residual     (repmix)
//! stages.{s}.blocks.{b}.mixer.{wq,wk,wv,wo}                      (mhsa)
//! stages.{s}.blocks.{b}.mixer.heads.{h}.{w_in,w_out}              (mhla)
//! stages.{s}.blocks.{b}.mlp.{expand,reduce}.{weight,bias}, mlp.{bn_inner,bn_outer}.*
//! head.{weight,bias}
//! ```
//!
//! `geometry` holds `[stride, padding, groups]`.

use std::path::Path;

use super::config::{MixerKind, ModelConfig};
use super::network::{ConvBn, Head, Model, Stage};
use crate::archive::WeightArchive;
use crate::blocks::{MetaBlock, MhlaBlock, MhsaBlock, MlpBlock, RepMixBlock, TokenMixer};
use crate::error::{Error, Result};
use crate::tensor::{BnSpec, ConvSpec, Matrix, Tensor};

impl Model {
    pub fn to_archive(&self) -> WeightArchive {
        let mut w = Writer(WeightArchive::new());
        let toml = self.config.to_toml_string();
        w.vec("meta.config", toml.bytes().map(f32::from).collect());
        for (i, s) in self.stem.iter().enumerate() {
            w.conv(&format!("stem.{i}.conv"), &s.conv);
            if let Some(bn) = &s.bn {
                w.bn(&format!("stem.{i}.bn"), bn);
            }
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if let Some(ds) = &stage.downsample {
                w.repmix(&format!("stages.{si}.downsample"), ds);
            }
            for (bi, block) in stage.blocks.iter().enumerate() {
                let p = format!("stages.{si}.blocks.{bi}");
                match &block.token_mixer {
                    TokenMixer::RepMix(b) => w.repmix(&format!("{p}.mixer"), b),
                    TokenMixer::Mhsa(b) => {
                        for (name, m) in
                            [("wq", &b.wq), ("wk", &b.wk), ("wv", &b.wv), ("wo", &b.wo)]
                        {
                            w.matrix(&format!("{p}.mixer.{name}"), m);
                        }
                    }
                    TokenMixer::Mhla(b) => {
                        for (h, (wi, wo)) in b.w_in.iter().zip(&b.w_out).enumerate() {
                            w.matrix(&format!("{p}.mixer.heads.{h}.w_in"), wi);
                            w.matrix(&format!("{p}.mixer.heads.{h}.w_out"), wo);
                        }
                    }
                }
                let mlp = &block.channel_mixer;
                w.matrix(&format!("{p}.mlp.expand.weight"), &mlp.w_expand);
                w.matrix(&format!("{p}.mlp.reduce.weight"), &mlp.w_reduce);
                if let Some(b) = &mlp.b_expand {
                    w.vec(&format!("{p}.mlp.expand.bias"), b.clone());
                }
                if let Some(b) = &mlp.b_reduce {
                    w.vec(&format!("{p}.mlp.reduce.bias"), b.clone());
                }
                if let Some(bn) = &mlp.bn_inner {
                    w.bn(&format!("{p}.mlp.bn_inner"), bn);
                }
                if let Some(bn) = &mlp.bn_outer {
                    w.bn(&format!("{p}.mlp.bn_outer"), bn);
                }
            }
        }
        w.matrix("head.weight", &self.head.weight);
        w.vec("head.bias", self.head.bias.clone());
        w.0
    }

    pub fn from_archive(archive: &WeightArchive) -> Result<Model> {
        let r = Reader(archive);
        let bytes = archive
            .require("meta.config")?
            .data
            .iter()
            .map(|&v| u8::try_from(v as u32).map_err(|_| Error::Archive("bad config byte".into())))
            .collect::<Result<Vec<u8>>>()?;
        let text =
            String::from_utf8(bytes).map_err(|_| Error::Archive("config is not utf-8".into()))?;
        let config = ModelConfig::from_toml_str(&text)?;

        let stem = (0..2)
            .map(|i| {
                Ok(ConvBn {
                    conv: r.conv(&format!("stem.{i}.conv"))?,
                    bn: r.opt_bn(&format!("stem.{i}.bn"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut stages = Vec::new();
        for (si, sc) in config.stages.iter().enumerate() {
            let downsample = if si == 0 {
                None
            } else {
                Some(r.repmix(&format!("stages.{si}.downsample"), false)?)
            };
            let mut blocks = Vec::new();
            for bi in 0..sc.blocks {
                let p = format!("stages.{si}.blocks.{bi}");
                let token_mixer = match sc.mixer {
                    MixerKind::RepMix => TokenMixer::RepMix(r.repmix(&format!("{p}.mixer"), true)?),
                    MixerKind::Mhsa => TokenMixer::Mhsa(MhsaBlock::new(
                        r.matrix(&format!("{p}.mixer.wq"))?,
                        r.matrix(&format!("{p}.mixer.wk"))?,
                        r.matrix(&format!("{p}.mixer.wv"))?,
                        r.matrix(&format!("{p}.mixer.wo"))?,
                        config.attention.heads,
                    )?),
                    MixerKind::Mhla => {
                        let heads = config.attention.heads;
                        let w_in = (0..heads)
                            .map(|h| r.matrix(&format!("{p}.mixer.heads.{h}.w_in")))
                            .collect::<Result<Vec<_>>>()?;
                        let w_out = (0..heads)
                            .map(|h| r.matrix(&format!("{p}.mixer.heads.{h}.w_out")))
                            .collect::<Result<Vec<_>>>()?;
                        TokenMixer::Mhla(MhlaBlock::new(w_in, w_out)?)
                    }
                };
                let channel_mixer = MlpBlock {
                    w_expand: r.matrix(&format!("{p}.mlp.expand.weight"))?,
                    b_expand: r.opt_vec(&format!("{p}.mlp.expand.bias"))?,
                    bn_inner: r.opt_bn(&format!("{p}.mlp.bn_inner"))?,
                    w_reduce: r.matrix(&format!("{p}.mlp.reduce.weight"))?,
                    b_reduce: r.opt_vec(&format!("{p}.mlp.reduce.bias"))?,
                    bn_outer: r.opt_bn(&format!("{p}.mlp.bn_outer"))?,
                };
                channel_mixer.validate()?;
                blocks.push(MetaBlock {
                    token_mixer,
                    channel_mixer,
                });
            }
            stages.push(Stage { downsample, blocks });
        }
        let head = Head {
            weight: r.matrix("head.weight")?,
            bias: r.vec("head.bias")?,
        };
        let model = Model {
            config,
            stem,
            stages,
            head,
        };
        model.check_structure()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Self::from_archive(&WeightArchive::load(path)?)
    }
}

struct Writer(WeightArchive);

impl Writer {
    fn put(&mut self, name: &str, dims: Vec<usize>, data: Vec<f32>) {
        self.0
            .insert(name, dims, data)
            .expect("model entry names are unique and sized");
    }

    fn vec(&mut self, name: &str, v: Vec<f32>) {
        self.put(name, vec![v.len()], v);
    }

    fn matrix(&mut self, name: &str, m: &Matrix) {
        self.put(name, vec![m.rows(), m.cols()], m.data().to_vec());
    }

    fn conv(&mut self, name: &str, c: &ConvSpec) {
        self.put(
            &format!("{name}.weight"),
            c.weight.shape().to_vec(),
            c.weight.data().to_vec(),
        );
        self.vec(&format!("{name}.bias"), c.bias.clone());
        self.vec(
            &format!("{name}.geometry"),
            vec![c.stride as f32, c.padding as f32, c.groups as f32],
        );
    }

    fn bn(&mut self, name: &str, bn: &BnSpec) {
        self.vec(&format!("{name}.gamma"), bn.gamma.clone());
        self.vec(&format!("{name}.beta"), bn.beta.clone());
        self.vec(&format!("{name}.mean"), bn.mean.clone());
        self.vec(&format!("{name}.std"), bn.std.clone());
        self.put(&format!("{name}.eps"), vec![], vec![bn.eps]);
    }

    fn repmix(&mut self, name: &str, b: &RepMixBlock) {
        self.conv(&format!("{name}.kxk"), &b.conv_kxk);
        if let Some(one) = &b.conv_1x1 {
            self.conv(&format!("{name}.one"), one);
        }
        if let Some(bn) = &b.bn {
            self.bn(&format!("{name}.bn"), bn);
        }
        self.put(
            &format!("{name}.residual"),
            vec![],
            vec![b.residual as u8 as f32],
        );
    }
}

struct Reader<'a>(&'a WeightArchive);

impl Reader<'_> {
    fn vec(&self, name: &str) -> Result<Vec<f32>> {
        let e = self.0.require(name)?;
        if e.dims.len() != 1 {
            return Err(Error::Archive(format!(
                "{name}: expected rank 1, got {:?}",
                e.dims
            )));
        }
        Ok(e.data.clone())
    }

    fn opt_vec(&self, name: &str) -> Result<Option<Vec<f32>>> {
        self.0.contains(name).then(|| self.vec(name)).transpose()
    }

    fn scalar(&self, name: &str) -> Result<f32> {
        let e = self.0.require(name)?;
        match e.data.as_slice() {
            [v] if e.dims.is_empty() => Ok(*v),
            _ => Err(Error::Archive(format!("{name}: expected a scalar"))),
        }
    }

    fn matrix(&self, name: &str) -> Result<Matrix> {
        let e = self.0.require(name)?;
        match e.dims.as_slice() {
            &[r, c] => Matrix::new(r, c, e.data.clone()),
            d => Err(Error::Archive(format!(
                "{name}: expected rank 2, got {d:?}"
            ))),
        }
    }

    fn conv(&self, name: &str) -> Result<ConvSpec> {
        let e = self.0.require(&format!("{name}.weight"))?;
        let shape: [usize; 4] = e
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| Error::Archive(format!("{name}.weight: expected rank 4")))?;
        let weight = Tensor::new(shape, e.data.clone())?;
        let geometry = self.vec(&format!("{name}.geometry"))?;
        let [stride, padding, groups] = geometry[..] else {
            return Err(Error::Archive(format!(
                "{name}.geometry: expected 3 values"
            )));
        };
        ConvSpec::new(
            weight,
            self.vec(&format!("{name}.bias"))?,
            stride as usize,
            padding as usize,
            groups as usize,
        )
    }

    fn opt_conv(&self, name: &str) -> Result<Option<ConvSpec>> {
        self.0
            .contains(&format!("{name}.weight"))
            .then(|| self.conv(name))
            .transpose()
    }

    fn opt_bn(&self, name: &str) -> Result<Option<BnSpec>> {
        if !self.0.contains(&format!("{name}.gamma")) {
            return Ok(None);
        }
        let bn = BnSpec {
            gamma: self.vec(&format!("{name}.gamma"))?,
            beta: self.vec(&format!("{name}.beta"))?,
            mean: self.vec(&format!("{name}.mean"))?,
            std: self.vec(&format!("{name}.std"))?,
            eps: self.scalar(&format!("{name}.eps"))?,
        };
        bn.validate()?;
        Ok(Some(bn))
    }

    fn repmix(&self, name: &str, mixer: bool) -> Result<RepMixBlock> {
        let block = RepMixBlock {
            conv_kxk: self.conv(&format!("{name}.kxk"))?,
            conv_1x1: self.opt_conv(&format!("{name}.one"))?,
            bn: self.opt_bn(&format!("{name}.bn"))?,
            residual: self.scalar(&format!("{name}.residual"))? != 0.0,
        };
        block.validate()?;
        let expected_stride = if mixer { 1 } else { 2 };
        if block.stride() != expected_stride {
            return Err(Error::Archive(format!(
                "{name}: stride {} where {expected_stride} is required",
                block.stride()
            )));
        }
        Ok(block)
    }
}
