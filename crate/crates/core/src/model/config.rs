use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    RepMix,
    Mhsa,
    Mhla,
}

impl MixerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MixerKind::RepMix => "repmix",
            MixerKind::Mhsa => "mhsa",
            MixerKind::Mhla => "mhla",
        }
    }
}

/// The four published variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    S,
    M,
    SLi,
    MLi,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::S, Variant::M, Variant::SLi, Variant::MLi];

    pub fn name(self) -> &'static str {
        match self {
            Variant::S => "s",
            Variant::M => "m",
            Variant::SLi => "s-li",
            Variant::MLi => "m-li",
        }
    }

    pub fn config(self) -> ModelConfig {
        let (dims, attention) = match self {
            Variant::S => ([40, 80, 160, 320], MixerKind::Mhsa),
            Variant::M => ([64, 128, 256, 512], MixerKind::Mhsa),
            Variant::SLi => ([40, 80, 160, 320], MixerKind::Mhla),
            Variant::MLi => ([64, 128, 256, 512], MixerKind::Mhla),
        };
        let mixers = [MixerKind::RepMix, MixerKind::RepMix, attention, attention];
        let stages = dims
            .iter()
            .zip([2, 4, 6, 2])
            .zip(mixers)
            .zip([28, 14, 7, 4])
            .map(|(((&dim, blocks), mixer), resolution)| StageConfig {
                dim,
                blocks,
                mixer,
                resolution,
            })
            .collect();
        ModelConfig {
            variant: self.name().to_string(),
            input_size: 112,
            embed_dim: 512,
            mlp_expansion: 3,
            kernel_size: 3,
            stem: StemConfig { dim: dims[0] },
            attention: AttentionConfig {
                heads: 16,
                mhla_expansion: 4,
            },
            stages,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' '], "-");
        let norm = norm.trim_start_matches("facelivt-").replace("-la", "-li");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected s, m, s-li or m-li)"
                ))
            })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    /// Width of both stem convolutions; must equal the first stage width.
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub heads: usize,
    pub mhla_expansion: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub dim: usize,
    pub blocks: usize,
    pub mixer: MixerKind,
    /// Side length of the square feature map in this stage.
    pub resolution: usize,
}

impl StageConfig {
    pub fn tokens(&self) -> usize {
        self.resolution * self.resolution
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    pub input_size: usize,
    pub embed_dim: usize,
    pub mlp_expansion: usize,
    pub kernel_size: usize,
    pub stem: StemConfig,
    pub attention: AttentionConfig,
    pub stages: Vec<StageConfig>,
}

impl ModelConfig {
    pub fn variant(name: &str) -> Result<Self> {
        Ok(name.parse::<Variant>()?.config())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.attention.heads = heads;
        self
    }

    /// Spatial side after the two stride-2 stem convolutions.
    pub fn stem_output_size(&self) -> usize {
        halve(halve(self.input_size, self.kernel_size), self.kernel_size)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stages.is_empty() {
            return fail("at least one stage is required".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel size {} must be odd", self.kernel_size));
        }
        if self.mlp_expansion == 0 || self.embed_dim == 0 || self.input_size == 0 {
            return fail("mlp_expansion, embed_dim and input_size must be positive".into());
        }
        if self.stem.dim != self.stages[0].dim {
            return fail(format!(
                "stem width {} must equal the first stage width {}",
                self.stem.dim, self.stages[0].dim
            ));
        }
        let mut expected = self.stem_output_size();
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                expected = halve(expected, self.kernel_size);
            }
            if stage.resolution != expected {
                return fail(format!(
                    "stage {} resolution {} does not match the {expected} produced by the network",
                    i + 1,
                    stage.resolution
                ));
            }
            if stage.dim == 0 || stage.blocks == 0 {
                return fail(format!("stage {} has zero width or depth", i + 1));
            }
            if stage.mixer != MixerKind::RepMix {
                let heads = self.attention.heads;
                if heads == 0 || !stage.dim.is_multiple_of(heads) {
                    return fail(format!(
                        "stage {} width {} is not divisible by {heads} heads",
                        i + 1,
                        stage.dim
                    ));
                }
                if stage.mixer == MixerKind::Mhla && self.attention.mhla_expansion == 0 {
                    return fail("mhla_expansion must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Output side of a stride-2, same-padded `k x k` convolution.
fn halve(size: usize, k: usize) -> usize {
    (size + 2 * (k / 2) - k) / 2 + 1
}
