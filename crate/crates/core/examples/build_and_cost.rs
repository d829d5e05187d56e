//! Builds every preset and prints its parameter and operation counts next
//! to the published figures.
//!
//! cargo run --example build_and_cost

use facelivt::blocks::Form;
use facelivt::model::{config_cost_report, Variant};

fn main() -> facelivt::Result<()> {
    for variant in Variant::ALL {
        let report = config_cost_report(&variant.config(), Form::Deploy)?;
        print!("{}", report.to_text());
        println!();
    }
    let he8 = config_cost_report(&Variant::SLi.config().with_heads(8), Form::Deploy)?;
    print!("{}", he8.to_text());

    let train = config_cost_report(&Variant::SLi.config(), Form::Train)?;
    println!(
        "\ns-li train form: {} params, {} flops (batch norms counted)",
        train.total.params, train.total.flops
    );
    Ok(())
}
