//! Client-side parameters and forward FLOPs against the whole model for
//! the bundled architectures.
//!
//!     cargo run --release --example efficiency_table

use splitsim::nn::ModelSpec;
use splitsim::privacy::efficiency_report;
use splitsim::protocol::split_model;

fn main() -> splitsim::Result<()> {
    let cases = [
        ("image, 3 channels", ModelSpec::image_conv(3, 28, 9)?, ModelSpec::IMAGE_CUT),
        ("image, 1 channel", ModelSpec::image_conv(1, 28, 11)?, ModelSpec::IMAGE_CUT),
        ("compact image", ModelSpec::image_conv_compact(1, 28, 4)?, ModelSpec::IMAGE_CUT),
        ("dense 2808", ModelSpec::mlp_2808()?, 1),
    ];
    for (name, model, cut) in cases {
        let split = split_model(&model, cut)?;
        println!("{name} (smashed width {})", split.smashed_dim);
        print!("{}", efficiency_report(&split)?.table());
        println!();
    }
    Ok(())
}
