//! Compares the closed-form cost of the two attention kinds on the stage 3
//! and 4 shapes, and checks the MHLA count against an instrumented forward.
//!
//! cargo run --release --example attention_complexity

use facelivt::blocks::MhlaBlock;
use facelivt::model::{mhla_complexity, mhsa_complexity};
use facelivt::tensor::{count_ops, Matrix};

fn main() -> facelivt::Result<()> {
    let r = 4;
    println!(
        "{:>4} {:>5} {:>12} {:>12}  cheaper",
        "N", "C", "mhla", "mhsa"
    );
    for (n, c) in [(49, 160), (16, 320), (49, 256), (16, 512)] {
        let (la, sa) = (mhla_complexity(n, c, r), mhsa_complexity(n, c));
        let winner = if la < sa { "mhla" } else { "mhsa" };
        println!("{n:>4} {c:>5} {la:>12} {sa:>12}  {winner}");
    }

    let (n, c, heads) = (49, 160, 16);
    let block = MhlaBlock::new(
        (0..heads)
            .map(|h| Matrix::from_fn(n, n * r, |i, j| ((i + j + h) % 7) as f32 * 0.01))
            .collect(),
        (0..heads)
            .map(|h| Matrix::from_fn(n * r, n, |i, j| ((i * j + h) % 5) as f32 * 0.01))
            .collect(),
    )?;
    let x = Matrix::from_fn(n, c, |i, j| ((i + 2 * j) % 11) as f32 * 0.1 - 0.5);
    let (out, ops) = count_ops(|| block.forward(&x));
    out?;
    println!(
        "instrumented MHLA N={n} C={c}: {} MACs, closed form {}",
        ops.macs,
        mhla_complexity(n, c, r)
    );
    Ok(())
}
