//! Parameter and operation counts.
//!
//! `macs` counts multiply-accumulates of every convolution, matrix product
//! and attention product. `flops` is `2 * macs` plus two operations per
//! element for each unfused batch norm; activations, softmax, pooling and
//! residual additions are not counted. Published FLOP figures for this
//! family line up with `macs`, so that is what [`Deviation`] compares.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{MixerKind, ModelConfig, Variant};
use super::network::Model;
use crate::blocks::{Form, MlpBlock, RepMixBlock, TokenMixer};
use crate::error::{Error, Result};
use crate::tensor::{count_ops, BnSpec, ConvSpec, OpCount, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
}

impl Cost {
    fn new(params: usize, macs: usize, norm_ops: usize) -> Self {
        Cost {
            params: params as u64,
            macs: macs as u64,
            flops: 2 * macs as u64 + norm_ops as u64,
        }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            macs: self.macs + o.macs,
            flops: self.flops + o.flops,
        }
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

/// Published size of a variant, in millions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub params_m: f64,
    pub flops_m: f64,
}

/// Signed relative deviation from a [`Reference`], in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub params_pct: f64,
    pub flops_pct: f64,
}

impl Deviation {
    pub fn of(cost: &Cost, reference: &Reference) -> Deviation {
        let pct = |got: u64, want_m: f64| (got as f64 / 1e6 - want_m) / want_m * 100.0;
        Deviation {
            params_pct: pct(cost.params, reference.params_m),
            flops_pct: pct(cost.macs, reference.flops_m),
        }
    }
}

/// Published figures for a preset variant with the given head count.
pub fn published_reference(variant: Variant, heads: usize) -> Option<Reference> {
    let (params_m, flops_m) = match (variant, heads) {
        (Variant::S, 16) => (5.89, 237.0),
        (Variant::M, 16) => (14.3, 569.0),
        (Variant::SLi, 16) => (5.05, 160.0),
        (Variant::SLi, 8) => (4.09, 157.0),
        (Variant::MLi, 16) => (9.75, 386.0),
        _ => return None,
    };
    Some(Reference { params_m, flops_m })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub name: String,
    pub cost: Cost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub variant: String,
    pub form: Form,
    pub heads: usize,
    pub total: Cost,
    /// `stem`, `stage1` .. `stageN`, `head`; each stage includes its
    /// downsampler.
    pub stages: Vec<StageCost>,
    /// Totals per block kind: `stem`, `downsample`, `repmix`, `mhsa`,
    /// `mhla`, `mlp`, `head`.
    pub by_kind: BTreeMap<String, Cost>,
    pub reference: Option<Reference>,
    pub deviation: Option<Deviation>,
}

impl CostReport {
    fn finish(
        config: &ModelConfig,
        form: Form,
        stages: Vec<StageCost>,
        by_kind: BTreeMap<String, Cost>,
    ) -> Self {
        let total = stages.iter().map(|s| s.cost).sum();
        let reference = config
            .variant
            .parse::<Variant>()
            .ok()
            .filter(|v| strip_variant(v.config()) == strip_variant(config.clone()))
            .and_then(|v| published_reference(v, config.attention.heads));
        let deviation = reference.as_ref().map(|r| Deviation::of(&total, r));
        CostReport {
            variant: config.variant.clone(),
            form,
            heads: config.attention.heads,
            total,
            stages,
            by_kind,
            reference,
            deviation,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "variant {}  form {}  heads {}\n{:<10} {:>12} {:>14} {:>14}\n",
            self.variant, self.form, self.heads, "part", "params", "macs", "flops"
        );
        let row = |name: &str, c: &Cost| {
            format!(
                "{:<10} {:>12} {:>14} {:>14}\n",
                name, c.params, c.macs, c.flops
            )
        };
        for st in &self.stages {
            s += &row(&st.name, &st.cost);
        }
        s += &row("total", &self.total);
        s += &format!(
            "params {:.4} M   macs {:.2} M   flops {:.2} M\n",
            self.total.params as f64 / 1e6,
            self.total.macs as f64 / 1e6,
            self.total.flops as f64 / 1e6
        );
        if let (Some(r), Some(d)) = (&self.reference, &self.deviation) {
            s += &format!(
                "published params {:.2} M ({:+.2}%)   published FLOPs {:.0} M vs macs ({:+.2}%)\n",
                r.params_m, d.params_pct, r.flops_m, d.flops_pct
            );
        }
        s
    }
}

/// Only the head count may differ from a preset for its reference to apply.
fn strip_variant(mut c: ModelConfig) -> ModelConfig {
    c.variant.clear();
    c.attention.heads = 0;
    c
}

pub fn mhla_complexity(tokens: usize, channels: usize, expansion: usize) -> u64 {
    2 * (tokens * tokens * expansion * channels) as u64
}

pub fn mhsa_complexity(tokens: usize, channels: usize) -> u64 {
    (4 * tokens * channels * channels + 2 * tokens * tokens * channels) as u64
}

fn conv_cost(c: &ConvSpec, oh: usize, ow: usize) -> Cost {
    Cost::new(c.param_count(), c.macs(oh, ow), 0)
}

fn bn_cost(bn: &BnSpec, plane: usize) -> Cost {
    Cost::new(bn.param_count(), 0, 2 * bn.channels() * plane)
}

fn repmix_cost(b: &RepMixBlock, oh: usize, ow: usize) -> Cost {
    conv_cost(&b.conv_kxk, oh, ow)
        + b.conv_1x1
            .as_ref()
            .map_or_else(Cost::default, |c| conv_cost(c, oh, ow))
        + b.bn
            .as_ref()
            .map_or_else(Cost::default, |bn| bn_cost(bn, oh * ow))
}

fn mlp_cost(b: &MlpBlock, plane: usize) -> Cost {
    let weights = b.w_expand.data().len() + b.w_reduce.data().len();
    let biases = b.b_expand.as_ref().map_or(0, Vec::len) + b.b_reduce.as_ref().map_or(0, Vec::len);
    Cost::new(weights + biases, weights * plane, 0)
        + b.bn_inner
            .as_ref()
            .map_or_else(Cost::default, |bn| bn_cost(bn, plane))
        + b.bn_outer
            .as_ref()
            .map_or_else(Cost::default, |bn| bn_cost(bn, plane))
}

/// Analytic cost of one token mixer on a `channels x side x side` map.
pub fn token_mixer_cost(mixer: &TokenMixer, channels: usize, side: usize) -> Cost {
    let n = side * side;
    match mixer {
        TokenMixer::RepMix(b) => repmix_cost(b, side, side),
        TokenMixer::Mhsa(b) => Cost::new(b.param_count(), mhsa_complexity(n, channels) as usize, 0),
        TokenMixer::Mhla(b) => Cost::new(
            b.param_count(),
            mhla_complexity(b.tokens, channels, b.expansion) as usize,
            0,
        ),
    }
}

/// Counts of an instantiated model, walked block by block.
pub fn cost_report(model: &Model) -> Result<CostReport> {
    let config = &model.config;
    let mut by_kind: BTreeMap<String, Cost> = BTreeMap::new();
    let mut add = |kind: &str, c: Cost| *by_kind.entry(kind.to_string()).or_default() += c;
    let mut stages = Vec::new();

    let mut size = config.input_size;
    let mut stem = Cost::default();
    for s in &model.stem {
        let (oh, ow) = s.conv.output_hw(size, size)?;
        size = oh;
        stem += conv_cost(&s.conv, oh, ow)
            + s.bn
                .as_ref()
                .map_or_else(Cost::default, |bn| bn_cost(bn, oh * ow));
    }
    add("stem", stem);
    stages.push(StageCost {
        name: "stem".into(),
        cost: stem,
    });

    for (i, (stage, sc)) in model.stages.iter().zip(&config.stages).enumerate() {
        let mut cost = Cost::default();
        if let Some(ds) = &stage.downsample {
            let (oh, ow) = ds.conv_kxk.output_hw(size, size)?;
            size = oh;
            let c = repmix_cost(ds, oh, ow);
            add("downsample", c);
            cost += c;
        }
        let plane = size * size;
        for block in &stage.blocks {
            let kind = match &block.token_mixer {
                TokenMixer::RepMix(_) => "repmix",
                TokenMixer::Mhsa(_) => "mhsa",
                TokenMixer::Mhla(_) => "mhla",
            };
            let c = token_mixer_cost(&block.token_mixer, sc.dim, size);
            add(kind, c);
            let m = mlp_cost(&block.channel_mixer, plane);
            add("mlp", m);
            cost += c + m;
        }
        stages.push(StageCost {
            name: format!("stage{}", i + 1),
            cost,
        });
    }

    let head = Cost::new(model.head.param_count(), model.head.weight.data().len(), 0);
    add("head", head);
    stages.push(StageCost {
        name: "head".into(),
        cost: head,
    });
    Ok(CostReport::finish(config, model.form(), stages, by_kind))
}

/// Counts from the config alone, for a fully train-form or fully deploy-form
/// model. Agrees with [`cost_report`] on built models of that form.
pub fn config_cost_report(config: &ModelConfig, form: Form) -> Result<CostReport> {
    config.validate()?;
    let train = match form {
        Form::Train => true,
        Form::Deploy => false,
        Form::Partial => {
            return Err(Error::Config(
                "analytic costs need a train or deploy form".into(),
            ))
        }
    };
    let k2 = config.kernel_size * config.kernel_size;
    // Conv with bias, plus a batch norm in train form.
    let conv_bn = |cin: usize, cout: usize, k2: usize, plane: usize| {
        let mut c = Cost::new(cout * cin * k2 + cout, cout * cin * k2 * plane, 0);
        if train {
            c += Cost::new(4 * cout, 0, 2 * cout * plane);
        }
        c
    };
    let mut by_kind: BTreeMap<String, Cost> = BTreeMap::new();
    let mut add = |kind: &str, c: Cost| *by_kind.entry(kind.to_string()).or_default() += c;
    let mut stages = Vec::new();

    let mut size = config.input_size;
    let mut stem = Cost::default();
    let mut cin = 3;
    for _ in 0..2 {
        size = size.div_ceil(2);
        stem += conv_bn(cin, config.stem.dim, k2, size * size);
        cin = config.stem.dim;
    }
    add("stem", stem);
    stages.push(StageCost {
        name: "stem".into(),
        cost: stem,
    });

    for (i, sc) in config.stages.iter().enumerate() {
        let c = sc.dim;
        let n = sc.tokens();
        let mut cost = Cost::default();
        if i > 0 {
            let prev = config.stages[i - 1].dim;
            let mut ds = conv_bn(prev, c, k2, n);
            if train {
                ds += Cost::new(prev * c + c, prev * c * n, 0);
            }
            add("downsample", ds);
            cost += ds;
        }
        let hidden = c * config.mlp_expansion;
        for _ in 0..sc.blocks {
            let (kind, mixer) = match sc.mixer {
                MixerKind::RepMix => {
                    let mut m = conv_bn(1, c, k2, n);
                    if train {
                        m += Cost::new(2 * c, c * n, 0);
                    }
                    ("repmix", m)
                }
                MixerKind::Mhsa => (
                    "mhsa",
                    Cost::new(4 * c * c, mhsa_complexity(n, c) as usize, 0),
                ),
                MixerKind::Mhla => {
                    let r = config.attention.mhla_expansion;
                    (
                        "mhla",
                        Cost::new(
                            2 * config.attention.heads * n * n * r,
                            mhla_complexity(n, c, r) as usize,
                            0,
                        ),
                    )
                }
            };
            let mlp = if train {
                Cost::new(
                    2 * c * hidden + 4 * (hidden + c),
                    2 * c * hidden * n,
                    2 * (hidden + c) * n,
                )
            } else {
                Cost::new(2 * c * hidden + hidden + c, 2 * c * hidden * n, 0)
            };
            add(kind, mixer);
            add("mlp", mlp);
            cost += mixer + mlp;
        }
        stages.push(StageCost {
            name: format!("stage{}", i + 1),
            cost,
        });
    }

    let last = config.stages.last().map_or(0, |s| s.dim);
    let head = Cost::new(
        last * config.embed_dim + config.embed_dim,
        last * config.embed_dim,
        0,
    );
    add("head", head);
    stages.push(StageCost {
        name: "head".into(),
        cost: head,
    });
    Ok(CostReport::finish(config, form, stages, by_kind))
}

/// Operations actually executed by one forward pass.
pub fn instrumented_op_count(model: &Model, image: &Tensor) -> Result<OpCount> {
    let (out, count) = count_ops(|| model.forward(image));
    out?;
    Ok(count)
}

/// `2 * macs + norm ops` actually executed by one forward pass.
pub fn instrumented_flop_count(model: &Model, image: &Tensor) -> Result<u64> {
    Ok(instrumented_op_count(model, image)?.flops())
}
