//! Writes train and deploy archives for one variant, reloads them and checks
//! the embeddings agree, the same way `facelivt verify` does.
//!
//! cargo run --release --example verify_equivalence -- [variant] [seed]

use facelivt::model::{Model, Variant};
use facelivt::reparam::{probe_agreement, reparameterize_model, FusionOptions, PROBE_SEED};

fn main() -> facelivt::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("s-li").parse()?;
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let dir = std::env::temp_dir().join(format!("facelivt-verify-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (train_path, deploy_path) = (dir.join("train.flvt"), dir.join("deploy.flvt"));

    let train = Model::build(&variant.config(), seed)?;
    train.save(&train_path)?;
    let (deploy, _) = reparameterize_model(&Model::load(&train_path)?, FusionOptions::ALL, 0)?;
    deploy.save(&deploy_path)?;

    let (max_abs, cos) = probe_agreement(
        &Model::load(&train_path)?,
        &Model::load(&deploy_path)?,
        5,
        PROBE_SEED,
    )?;
    println!(
        "{variant} seed {seed}: {} -> {} bytes on disk, max_abs {max_abs:.3e}, min cosine {cos:.7}",
        std::fs::metadata(&train_path)?.len(),
        std::fs::metadata(&deploy_path)?.len()
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
