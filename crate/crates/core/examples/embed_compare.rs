//! Embeds a synthetic face-sized PNG with train and deploy forms of one model
//! and compares the embeddings.
//!
//! cargo run --release --example embed_compare

use facelivt::embedding::{cosine_similarity, load_image, read_embedding, write_embedding};
use facelivt::model::{Model, Variant};
use facelivt::reparam::{reparameterize_model, FusionOptions};

fn main() -> facelivt::Result<()> {
    let dir = std::env::temp_dir().join(format!("facelivt-embed-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let png = dir.join("face.png");
    image::RgbImage::from_fn(112, 112, |x, y| {
        image::Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8])
    })
    .save(&png)
    .map_err(|e| facelivt::Error::Archive(e.to_string()))?;

    let train = Model::build(&Variant::SLi.config(), 3)?;
    let (deploy, _) = reparameterize_model(&train, FusionOptions::ALL, 0)?;
    let image = load_image(&png, 112)?;

    let a = dir.join("train.emb");
    let b = dir.join("deploy.emb");
    write_embedding(&a, &train.forward(&image)?)?;
    write_embedding(&b, &deploy.forward(&image)?)?;
    let (ea, eb) = (read_embedding(&a)?, read_embedding(&b)?);
    println!(
        "{}-d embeddings, train vs deploy cosine {:.7}",
        ea.len(),
        cosine_similarity(&ea, &eb)?
    );
    let flipped: Vec<f32> = ea.iter().map(|v| -v).collect();
    println!(
        "embedding vs its negation: {:.7}",
        cosine_similarity(&ea, &flipped)?
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
