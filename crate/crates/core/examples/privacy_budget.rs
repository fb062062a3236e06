//! How many dimensions per local sample each scheme reveals, and the data
//! size at which split learning starts revealing more than federated
//! learning.
//!
//!     cargo run --release --example privacy_budget

use splitsim::nn::ModelSpec;
use splitsim::privacy::{analyze, budget_curve, min_data_size};
use splitsim::protocol::split_model;

fn main() -> splitsim::Result<()> {
    let image = split_model(&ModelSpec::image_conv(3, 28, 9)?, ModelSpec::IMAGE_CUT)?;
    let dense = split_model(&ModelSpec::mlp_2808()?, 1)?;

    for (name, split, n_c) in [("image", &image, 100), ("dense", &dense, 2000)] {
        println!("{name} model, cut after layer {}", split.cut);
        print!("{}", analyze(split, n_c, None)?.table());
        println!();
    }

    // Break-even points for a few model sizes and cut widths.
    println!("{:>12}{:>8}{:>12}", "N_w", "d", "break-even");
    for (n_w, d) in [(235_225, 2304), (186_049, 64), (1_558_556, 128), (23_000_000, 512)] {
        println!("{n_w:>12}{d:>8}{:>12}", min_data_size(n_w, d)?);
    }
    println!();

    let n_w = image.model.param_count() as u64;
    let d = image.smashed_dim as u64;
    println!("image model: dims per sample against local data size");
    println!("{:>8}{:>14}{:>8}", "n_c", "federated", "split");
    let sizes: Vec<u64> = (0..12).map(|i| 1 << i).collect();
    for (n, fl, sl) in budget_curve(n_w, d, &sizes)? {
        let marker = if fl < sl as f64 { "  <- federated reveals less" } else { "" };
        println!("{n:>8}{fl:>14.1}{sl:>8}{marker}");
    }
    Ok(())
}
