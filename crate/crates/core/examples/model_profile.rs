//! Per-layer parameter and FLOP breakdown of the image model, plus a quick
//! measurement of training-step throughput on this machine.
//!
//!     cargo run --release --example model_profile

use std::time::Instant;

use splitsim::nn::{self, ModelSpec};
use splitsim::rng::SeededRng;
use splitsim::tensor::rng_uniform;

fn main() -> splitsim::Result<()> {
    let model = ModelSpec::image_conv(3, 28, 9)?;
    println!(
        "{:>3}  {:<12} {:>14} {:>10} {:>12}",
        "#", "layer", "output", "params", "flops"
    );
    for row in nn::profile(&model.layers, &model.input_shape)? {
        println!(
            "{:>3}  {:<12} {:>14} {:>10} {:>12}",
            row.index,
            row.layer,
            format!("{:?}", row.output_shape),
            row.params,
            row.flops
        );
    }
    println!(
        "total: {} params, {} flops per sample",
        model.param_count(),
        nn::estimate_flops(&model.layers, &model.input_shape)?
    );

    let mut rng = SeededRng::new(0);
    let mut params = nn::init_params(&model.layers, &mut rng)?;
    let batch = 64;
    let x = rng_uniform(&mut rng, &[batch, 3, 28, 28], 0.0, 1.0)?;
    let labels: Vec<usize> = (0..batch).map(|i| i % 9).collect();
    let reps = 5;
    let start = Instant::now();
    for _ in 0..reps {
        let (logits, cache) = nn::forward_train(&model.layers, &mut params, &x)?;
        let (_, dlogits) = nn::loss_and_grad(model.loss, &logits, &labels)?;
        nn::backward(&model.layers, &params, cache, &dlogits)?;
    }
    let per_sample = start.elapsed().as_secs_f64() / (reps * batch) as f64;
    println!(
        "train step: {:.3} ms per sample (batch {batch})",
        per_sample * 1e3
    );
    Ok(())
}
