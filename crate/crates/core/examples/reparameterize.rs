//! Fuses a train-form S-Li model under each combination of fusion steps and
//! reports how far the embeddings move.
//!
//! cargo run --release --example reparameterize

use facelivt::model::{Model, Variant};
use facelivt::reparam::{reparameterize_model, FusionOptions};

fn main() -> facelivt::Result<()> {
    let train = Model::build(&Variant::SLi.config(), 7)?;
    println!(
        "train: {} params, form {}",
        train.param_count(),
        train.form()
    );
    for fuse_bn in [true, false] {
        for merge_1x1 in [true, false] {
            for fold_residual in [true, false] {
                let options = FusionOptions {
                    fuse_bn,
                    fold_residual,
                    merge_1x1,
                };
                let (fused, r) = reparameterize_model(&train, options, 2)?;
                println!(
                    "fuse_bn {fuse_bn:<5} merge_1x1 {merge_1x1:<5} fold_residual {fold_residual:<5} \
                     -> {:<7} params {:>8}  max_abs {:.2e}  cos {:.7}",
                    fused.form().as_str(),
                    r.params_after,
                    r.max_abs_error,
                    r.min_cosine
                );
            }
        }
    }
    Ok(())
}
