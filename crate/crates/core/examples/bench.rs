//! Times train-form and deploy-form forwards of one variant.
//!
//! cargo run --release --example bench -- [variant] [iters]

use std::time::Instant;

use facelivt::model::{Model, Variant};
use facelivt::reparam::{reparameterize_model, FusionOptions};
use facelivt::tensor::Tensor;

fn main() -> facelivt::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("s-li").parse()?;
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let train = Model::build(&variant.config(), 0)?;
    let (deploy, _) = reparameterize_model(&train, FusionOptions::ALL, 0)?;
    let image = Tensor::full([1, 3, 112, 112], 0.25);

    // Interleave so that drift in machine load hits both forms alike.
    let mut times = [Vec::new(), Vec::new()];
    for _ in 0..iters {
        for (i, m) in [&train, &deploy].into_iter().enumerate() {
            let t = Instant::now();
            m.forward(&image)?;
            times[i].push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    for (name, t) in ["train", "deploy"].iter().zip(&mut times) {
        t.sort_by(f64::total_cmp);
        println!(
            "{variant} {name:<6} median {:8.2} ms  min {:8.2} ms",
            t[t.len() / 2],
            t[0]
        );
    }
    Ok(())
}
