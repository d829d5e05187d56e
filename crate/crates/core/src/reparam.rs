//! Structural reparameterization: folding batch norms into the preceding
//! linear operator, merging parallel convolution branches, and absorbing the
//! identity shortcut into a convolution kernel.

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Form, MetaBlock, MlpBlock, RepMixBlock, TokenMixer};
use crate::embedding::cosine_similarity;
use crate::error::{ensure_dim, Error, Result};
use crate::model::{ConvBn, Model};
use crate::tensor::{BnSpec, ConvSpec, Matrix, Tensor};

/// `BN(conv(x))` as a single convolution:
/// `W' = W * gamma / std`, `b' = (b - mean) * gamma / std + beta`.
pub fn fuse_bn_into_conv(conv: &ConvSpec, bn: &BnSpec) -> Result<ConvSpec> {
    conv.validate()?;
    bn.validate()?;
    let oc = conv.out_channels();
    ensure_dim("fuse_bn_into_conv", "channels", oc, bn.channels())?;
    let per_out = conv.weight.numel() / oc;
    let affine = bn.affine();
    let mut weight = conv.weight.data().to_vec();
    for (chunk, &(slope, _)) in weight.chunks_exact_mut(per_out).zip(&affine) {
        for w in chunk {
            *w = (*w as f64 * slope) as f32;
        }
    }
    let bias = conv
        .bias
        .iter()
        .zip(&affine)
        .map(|(&b, &(slope, intercept))| (b as f64 * slope + intercept) as f32)
        .collect();
    ConvSpec::new(
        Tensor::new(conv.weight.shape(), weight)?,
        bias,
        conv.stride,
        conv.padding,
        conv.groups,
    )
}

/// Adds 1.0 at the center tap of each output channel's own input channel,
/// making the convolution also compute `+ x`.
pub fn add_identity_tap(conv: &ConvSpec) -> Result<ConvSpec> {
    conv.validate()?;
    let (oc, icpg, k) = (conv.out_channels(), conv.in_per_group(), conv.kernel_size());
    if conv.stride != 1 {
        return Err(Error::Form(
            "identity folding needs stride 1; a strided block has no residual".into(),
        ));
    }
    if k.is_multiple_of(2) {
        return Err(Error::invalid(
            "identity fold",
            format!("even kernel size {k} has no center tap"),
        ));
    }
    ensure_dim("identity fold", "channels", conv.in_channels(), oc)?;
    if 2 * conv.padding + 1 != k {
        return Err(Error::invalid("identity fold", "kernel is not same-padded"));
    }
    let ocpg = oc / conv.groups;
    let center = k / 2;
    let mut weight = conv.weight.data().to_vec();
    for o in 0..oc {
        let i = o - (o / ocpg) * icpg;
        weight[((o * icpg + i) * k + center) * k + center] += 1.0;
    }
    ConvSpec::new(
        Tensor::new(conv.weight.shape(), weight)?,
        conv.bias.clone(),
        conv.stride,
        conv.padding,
        conv.groups,
    )
}

/// Merges a `1x1` branch into the center tap of a `kxk` branch with the same
/// grouping and stride, optionally folding the identity shortcut as well.
/// Biases add.
pub fn merge_dw_branches(kxk: &ConvSpec, one: &ConvSpec, add_identity: bool) -> Result<ConvSpec> {
    kxk.validate()?;
    one.validate()?;
    let k = kxk.kernel_size();
    ensure_dim("merge_dw_branches", "1x1 kernel", 1, one.kernel_size())?;
    ensure_dim(
        "merge_dw_branches",
        "out channels",
        kxk.out_channels(),
        one.out_channels(),
    )?;
    ensure_dim(
        "merge_dw_branches",
        "in channels per group",
        kxk.in_per_group(),
        one.in_per_group(),
    )?;
    ensure_dim("merge_dw_branches", "groups", kxk.groups, one.groups)?;
    ensure_dim("merge_dw_branches", "stride", kxk.stride, one.stride)?;
    if k.is_multiple_of(2) {
        return Err(Error::invalid(
            "merge_dw_branches",
            format!("even kernel size {k} has no center tap"),
        ));
    }
    if one.padding + k / 2 != kxk.padding {
        return Err(Error::invalid(
            "merge_dw_branches",
            "1x1 branch does not sample the kxk center tap",
        ));
    }
    if add_identity && kxk.stride != 1 {
        return Err(Error::Form(
            "identity folding needs stride 1; a strided block has no residual".into(),
        ));
    }

    let center = k / 2;
    let mut weight = kxk.weight.data().to_vec();
    for (pair, &w1) in one.weight.data().iter().enumerate() {
        // pair indexes (out, in_per_group) of the 1x1 kernel
        weight[(pair * k + center) * k + center] += w1;
    }
    let bias = kxk.bias.iter().zip(&one.bias).map(|(a, b)| a + b).collect();
    let merged = ConvSpec::new(
        Tensor::new(kxk.weight.shape(), weight)?,
        bias,
        kxk.stride,
        kxk.padding,
        kxk.groups,
    )?;
    if add_identity {
        add_identity_tap(&merged)
    } else {
        Ok(merged)
    }
}

/// Which fusion steps to apply. All on by default; switching one off leaves
/// that structure explicit in the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionOptions {
    pub fuse_bn: bool,
    pub fold_residual: bool,
    pub merge_1x1: bool,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self::ALL
    }
}

impl FusionOptions {
    pub const ALL: FusionOptions = FusionOptions {
        fuse_bn: true,
        fold_residual: true,
        merge_1x1: true,
    };

    pub const NONE: FusionOptions = FusionOptions {
        fuse_bn: false,
        fold_residual: false,
        merge_1x1: false,
    };
}

/// Full fusion of a train- or partially-fused RepMix block to deploy form.
pub fn reparameterize_repmix(block: &RepMixBlock) -> Result<RepMixBlock> {
    let fused = reparameterize_repmix_with(block, FusionOptions::ALL)?;
    debug_assert_eq!(fused.form(), Form::Deploy);
    Ok(fused)
}

/// Applies the enabled steps in order: batch norm, then the 1x1 branch,
/// then the residual.
///
/// The batch norm follows the branch sum, so its full affine map goes into
/// the `kxk` branch and only its scale into the `1x1` branch. The residual
/// can be folded only once no batch norm sits between it and the kernel.
pub fn reparameterize_repmix_with(
    block: &RepMixBlock,
    options: FusionOptions,
) -> Result<RepMixBlock> {
    block.validate()?;
    if block.form() == Form::Deploy {
        return Err(Error::Form("RepMix block is already in deploy form".into()));
    }
    let mut out = block.clone();
    if options.fuse_bn {
        if let Some(bn) = out.bn.take() {
            out.conv_kxk = fuse_bn_into_conv(&out.conv_kxk, &bn)?;
            if let Some(one) = &out.conv_1x1 {
                out.conv_1x1 = Some(fuse_bn_into_conv(one, &scale_only(&bn))?);
            }
        }
    }
    if options.merge_1x1 {
        if let Some(one) = out.conv_1x1.take() {
            out.conv_kxk = merge_dw_branches(&out.conv_kxk, &one, false)?;
        }
    }
    if options.fold_residual && out.residual && out.bn.is_none() {
        out.conv_kxk = add_identity_tap(&out.conv_kxk)?;
        out.residual = false;
    }
    out.validate()?;
    Ok(out)
}

fn scale_only(bn: &BnSpec) -> BnSpec {
    BnSpec {
        beta: vec![0.0; bn.channels()],
        mean: vec![0.0; bn.channels()],
        ..bn.clone()
    }
}

/// Folds both batch norms of the channel mixer into its weights and biases.
pub fn fuse_mlp_bn(block: &MlpBlock) -> Result<MlpBlock> {
    block.validate()?;
    let mut out = block.clone();
    if let Some(bn) = out.bn_inner.take() {
        let (w, b) = fold_bn_into_columns(&out.w_expand, out.b_expand.as_deref(), &bn)?;
        out.w_expand = w;
        out.b_expand = Some(b);
    }
    if let Some(bn) = out.bn_outer.take() {
        let (w, b) = fold_bn_into_columns(&out.w_reduce, out.b_reduce.as_deref(), &bn)?;
        out.w_reduce = w;
        out.b_reduce = Some(b);
    }
    out.validate()?;
    Ok(out)
}

/// `BN(x W + b)` for `W: [in, out]` with one norm channel per output column.
pub fn fold_bn_into_columns(
    w: &Matrix,
    b: Option<&[f32]>,
    bn: &BnSpec,
) -> Result<(Matrix, Vec<f32>)> {
    bn.validate()?;
    ensure_dim("fold_bn", "channels", w.cols(), bn.channels())?;
    let affine = bn.affine();
    let weight = Matrix::from_fn(w.rows(), w.cols(), |i, j| {
        (w.get(i, j) as f64 * affine[j].0) as f32
    });
    let bias = affine
        .iter()
        .enumerate()
        .map(|(j, &(slope, intercept))| (b.map_or(0.0, |b| b[j] as f64) * slope + intercept) as f32)
        .collect();
    Ok((weight, bias))
}

/// Seed of the probe images drawn by [`reparameterize_model`].
pub const PROBE_SEED: u64 = 0x5eed_f00d;

/// Fuses every stem conv-BN pair, downsampler, RepMix mixer and MLP of a
/// model, then checks the result against the input on `probes` images drawn
/// uniformly from `[-1, 1]`. With zero probes the report carries
/// `max_abs_error = 0` and `min_cosine = 1`.
pub fn reparameterize_model(
    model: &Model,
    options: FusionOptions,
    probes: usize,
) -> Result<(Model, FusionReport)> {
    model.check_structure()?;
    if model.form() == Form::Deploy {
        return Err(Error::Form("model is already in deploy form".into()));
    }
    let mut out = model.clone();
    let mut fused = 0;
    let mut repmix = |b: &mut RepMixBlock| -> Result<()> {
        if b.form() != Form::Deploy {
            let next = reparameterize_repmix_with(b, options)?;
            fused += usize::from(next != *b);
            *b = next;
        }
        Ok(())
    };
    for stage in &mut out.stages {
        if let Some(ds) = &mut stage.downsample {
            repmix(ds)?;
        }
        for block in &mut stage.blocks {
            if let TokenMixer::RepMix(b) = &mut block.token_mixer {
                repmix(b)?;
            }
        }
    }
    if options.fuse_bn {
        for s in &mut out.stem {
            if let Some(bn) = s.bn.take() {
                *s = ConvBn {
                    conv: fuse_bn_into_conv(&s.conv, &bn)?,
                    bn: None,
                };
                fused += 1;
            }
        }
        for block in out.stages.iter_mut().flat_map(|s| s.blocks.iter_mut()) {
            let MetaBlock { channel_mixer, .. } = block;
            if channel_mixer.has_bn() {
                *channel_mixer = fuse_mlp_bn(channel_mixer)?;
                fused += 1;
            }
        }
    }
    out.check_structure()?;

    let (max_abs_error, min_cosine) = probe_agreement(model, &out, probes, PROBE_SEED)?;
    let report = FusionReport {
        max_abs_error,
        min_cosine,
        probe_count: probes,
        blocks_fused: fused,
        params_before: model.param_count(),
        params_after: out.param_count(),
        options,
    };
    Ok((out, report))
}

/// Largest absolute embedding difference and smallest cosine between two
/// models over seeded uniform `[-1, 1]` probe images.
pub fn probe_agreement(a: &Model, b: &Model, probes: usize, seed: u64) -> Result<(f32, f32)> {
    let size = a.config.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs = 0f32;
    let mut min_cos = 1f32;
    for _ in 0..probes {
        let image = Tensor::from_fn([1, 3, size, size], |_| rng.random_range(-1.0..=1.0));
        let ea = a.forward(&image)?;
        let eb = b.forward(&image)?;
        for (x, y) in ea.iter().zip(&eb) {
            max_abs = max_abs.max((x - y).abs());
        }
        min_cos = min_cos.min(cosine_similarity(&ea, &eb)?);
    }
    Ok((max_abs, min_cos))
}

/// Evidence that a fused model still computes the same function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    /// Largest embedding deviation over the probes.
    pub max_abs_error: f32,
    /// Smallest train/deploy embedding cosine over the probes.
    pub min_cosine: f32,
    pub probe_count: usize,
    pub blocks_fused: usize,
    pub params_before: usize,
    pub params_after: usize,
    pub options: FusionOptions,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    fn random_conv(
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> ConvSpec {
        let w = Tensor::from_fn([cout, cin / groups, k, k], |_| rng.random_range(-1.0..1.0));
        ConvSpec::new(w, rand_vec(rng, cout, -1.0, 1.0), stride, k / 2, groups).unwrap()
    }

    fn random_bn(rng: &mut ChaCha8Rng, c: usize) -> BnSpec {
        BnSpec {
            gamma: rand_vec(rng, c, 0.5, 1.5),
            beta: rand_vec(rng, c, -0.5, 0.5),
            mean: rand_vec(rng, c, -0.5, 0.5),
            std: rand_vec(rng, c, 0.5, 1.5),
            eps: 1e-5,
        }
    }

    fn probe(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_bn_leaves_conv_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let conv = random_conv(&mut rng, 3, 5, 3, 1, 1);
        let fused = fuse_bn_into_conv(&conv, &BnSpec::identity(5)).unwrap();
        assert_eq!(fused, conv);
        assert_eq!(
            fuse_bn_into_conv(&fused, &BnSpec::identity(5)).unwrap(),
            fused
        );
    }

    #[test]
    fn zero_conv_bias_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let conv = ConvSpec::new(Tensor::zeros([4, 1, 3, 3]), vec![0.0; 4], 1, 1, 4).unwrap();
        let bn = random_bn(&mut rng, 4);
        let fused = fuse_bn_into_conv(&conv, &bn).unwrap();
        assert!(fused.weight.data().iter().all(|&w| w == 0.0));
        for o in 0..4 {
            let want = bn.beta[o] - bn.mean[o] * bn.gamma[o] / bn.std[o];
            assert!((fused.bias[o] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn fused_conv_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let conv = random_conv(&mut rng, 6, 6, 3, 1, 6);
            let bn = random_bn(&mut rng, 6);
            let fused = fuse_bn_into_conv(&conv, &bn).unwrap();
            let x = probe(&mut rng, [1, 6, 7, 7]);
            let want = crate::tensor::batchnorm(&conv2d(&x, &conv).unwrap(), &bn).unwrap();
            assert!(conv2d(&x, &fused).unwrap().max_abs_diff(&want).unwrap() < 1e-5);
        }
    }

    #[test]
    fn fuse_rejects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let conv = random_conv(&mut rng, 3, 3, 3, 1, 3);
        assert!(fuse_bn_into_conv(&conv, &BnSpec::identity(4)).is_err());
        let mut bn = BnSpec::identity(3);
        bn.std[2] = -0.1;
        assert!(fuse_bn_into_conv(&conv, &bn).is_err());
    }

    #[test]
    fn merge_with_zero_one_is_noop_and_identity_fold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let kxk = random_conv(&mut rng, 4, 4, 3, 1, 4);
        let zero_one = ConvSpec::new(Tensor::zeros([4, 1, 1, 1]), vec![0.0; 4], 1, 0, 4).unwrap();
        assert_eq!(merge_dw_branches(&kxk, &zero_one, false).unwrap(), kxk);

        let zero_kxk = ConvSpec::new(Tensor::zeros([4, 1, 3, 3]), vec![0.0; 4], 1, 1, 4).unwrap();
        let id = merge_dw_branches(&zero_kxk, &zero_one, true).unwrap();
        assert_eq!(id, ConvSpec::depthwise_identity(4, 3).unwrap());
        let x = probe(&mut rng, [2, 4, 5, 5]);
        assert_eq!(conv2d(&x, &id).unwrap(), x);
    }

    #[test]
    fn merged_branches_match_branch_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..20 {
            let kxk = random_conv(&mut rng, 5, 5, 3, 1, 5);
            let one = random_conv(&mut rng, 5, 5, 1, 1, 5);
            let merged = merge_dw_branches(&kxk, &one, true).unwrap();
            let x = probe(&mut rng, [1, 5, 6, 6]);
            let want = conv2d(&x, &kxk)
                .unwrap()
                .add(&conv2d(&x, &one).unwrap())
                .unwrap()
                .add(&x)
                .unwrap();
            assert!(conv2d(&x, &merged).unwrap().max_abs_diff(&want).unwrap() < 1e-5);
        }
    }

    #[test]
    fn dense_strided_branches_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let kxk = random_conv(&mut rng, 3, 6, 3, 2, 1);
        let one = random_conv(&mut rng, 3, 6, 1, 2, 1);
        let merged = merge_dw_branches(&kxk, &one, false).unwrap();
        let x = probe(&mut rng, [1, 3, 7, 7]);
        let want = conv2d(&x, &kxk)
            .unwrap()
            .add(&conv2d(&x, &one).unwrap())
            .unwrap();
        assert!(conv2d(&x, &merged).unwrap().max_abs_diff(&want).unwrap() < 1e-5);
        assert!(matches!(
            merge_dw_branches(&kxk, &one, true),
            Err(Error::Form(_))
        ));
    }

    #[test]
    fn even_kernel_identity_is_rejected() {
        let w = Tensor::zeros([2, 1, 2, 2]);
        let conv = ConvSpec::new(w, vec![0.0; 2], 1, 1, 2).unwrap();
        assert!(add_identity_tap(&conv).is_err());
    }

    #[test]
    fn merge_is_additive_on_kernel_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let kxk = random_conv(&mut rng, 3, 3, 5, 1, 3);
        let one = random_conv(&mut rng, 3, 3, 1, 1, 3);
        for identity in [false, true] {
            let merged = merge_dw_branches(&kxk, &one, identity).unwrap();
            for c in 0..3 {
                for y in 0..5 {
                    for x in 0..5 {
                        let mut want = kxk.weight.get([c, 0, y, x]);
                        if (y, x) == (2, 2) {
                            want += one.weight.get([c, 0, 0, 0]);
                            if identity {
                                want += 1.0;
                            }
                        }
                        assert_eq!(merged.weight.get([c, 0, y, x]), want);
                    }
                }
                assert_eq!(merged.bias[c], kxk.bias[c] + one.bias[c]);
            }
        }
    }

    fn random_repmix(rng: &mut ChaCha8Rng, c: usize) -> RepMixBlock {
        RepMixBlock::train(
            random_conv(rng, c, c, 3, 1, c),
            random_conv(rng, c, c, 1, 1, c),
            random_bn(rng, c),
        )
        .unwrap()
    }

    #[test]
    fn repmix_sweep_train_matches_deploy() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for _ in 0..50 {
            let block = random_repmix(&mut rng, 6);
            let fused = reparameterize_repmix(&block).unwrap();
            assert_eq!(fused.form(), Form::Deploy);
            assert_eq!(fused.param_count(), 6 * 9 + 6);
            assert!(fused.param_count() < block.param_count());
            for _ in 0..5 {
                let x = probe(&mut rng, [1, 6, 7, 7]);
                let err = block
                    .forward(&x)
                    .unwrap()
                    .max_abs_diff(&fused.forward(&x).unwrap())
                    .unwrap();
                assert!(err < 1e-5, "{err}");
            }
        }
    }

    #[test]
    fn repmix_identity_block_fuses_to_identity_kernel() {
        let zero = |k: usize| {
            ConvSpec::new(Tensor::zeros([3, 1, k, k]), vec![0.0; 3], 1, k / 2, 3).unwrap()
        };
        let block = RepMixBlock::train(zero(3), zero(1), BnSpec::identity(3)).unwrap();
        let fused = reparameterize_repmix(&block).unwrap();
        assert_eq!(fused.conv_kxk, ConvSpec::depthwise_identity(3, 3).unwrap());
    }

    #[test]
    fn repmix_rejects_double_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let fused = reparameterize_repmix(&random_repmix(&mut rng, 4)).unwrap();
        assert!(matches!(reparameterize_repmix(&fused), Err(Error::Form(_))));
    }

    #[test]
    fn repmix_partial_options_stay_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let block = random_repmix(&mut rng, 4);
        let x = probe(&mut rng, [1, 4, 6, 6]);
        let want = block.forward(&x).unwrap();
        for bits in 0..8u8 {
            let options = FusionOptions {
                fuse_bn: bits & 1 != 0,
                fold_residual: bits & 2 != 0,
                merge_1x1: bits & 4 != 0,
            };
            let fused = reparameterize_repmix_with(&block, options).unwrap();
            assert_eq!(fused.bn.is_some(), !options.fuse_bn);
            assert_eq!(fused.conv_1x1.is_some(), !options.merge_1x1);
            assert_eq!(fused.residual, !(options.fold_residual && options.fuse_bn));
            let err = fused.forward(&x).unwrap().max_abs_diff(&want).unwrap();
            assert!(err < 1e-5, "{options:?}: {err}");
        }
        assert_eq!(
            reparameterize_repmix_with(&block, FusionOptions::NONE).unwrap(),
            block
        );
    }

    fn random_mlp(rng: &mut ChaCha8Rng, c: usize) -> MlpBlock {
        MlpBlock::train(
            Matrix::from_fn(c, 3 * c, |_, _| rng.random_range(-0.5..0.5)),
            random_bn(rng, 3 * c),
            Matrix::from_fn(3 * c, c, |_, _| rng.random_range(-0.5..0.5)),
            random_bn(rng, c),
        )
        .unwrap()
    }

    #[test]
    fn mlp_identity_bn_fusion_adds_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut block = random_mlp(&mut rng, 4);
        block.bn_inner = Some(BnSpec::identity(12));
        block.bn_outer = Some(BnSpec::identity(4));
        let fused = fuse_mlp_bn(&block).unwrap();
        assert_eq!(fused.w_expand, block.w_expand);
        assert_eq!(fused.w_reduce, block.w_reduce);
        assert_eq!(fused.b_expand, Some(vec![0.0; 12]));
        assert_eq!(fused.b_reduce, Some(vec![0.0; 4]));
    }

    #[test]
    fn mlp_fusion_matches_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let block = random_mlp(&mut rng, 5);
        let fused = fuse_mlp_bn(&block).unwrap();
        assert!(!fused.has_bn());
        for _ in 0..20 {
            let x = probe(&mut rng, [1, 5, 3, 3]);
            let err = block
                .forward(&x)
                .unwrap()
                .max_abs_diff(&fused.forward(&x).unwrap())
                .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn mlp_zero_weights_bias_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let mut block = random_mlp(&mut rng, 3);
        block.w_expand = Matrix::zeros(3, 9);
        let inner = block.bn_inner.clone().unwrap();
        let fused = fuse_mlp_bn(&block).unwrap();
        for (j, b) in fused.b_expand.unwrap().iter().enumerate() {
            let want = inner.beta[j] - inner.mean[j] * inner.gamma[j] / inner.std[j];
            assert!((b - want).abs() < 1e-6);
        }
    }
}
