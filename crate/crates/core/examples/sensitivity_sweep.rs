//! Final accuracy over a grid of client counts and samples per client for
//! two protocols, and their difference.
//!
//!     cargo run --release --example sensitivity_sweep

use splitsim::data::gen_blobs;
use splitsim::nn::{LossKind, ModelSpec};
use splitsim::protocol::{sensitivity_sweep, split_model, Protocol, SweepGrid, TrainConfig};

fn main() -> splitsim::Result<()> {
    let train = gen_blobs(3, 10, 400, 1.0, 3)?;
    let test = gen_blobs(3, 10, 100, 1.0, 4)?;
    let model = ModelSpec::mlp(&[10, 16], 3, LossKind::SoftmaxCrossEntropy)?;
    let split = split_model(&model, 1)?;
    let grid = SweepGrid {
        clients: vec![2, 4, 8],
        samples_per_client: vec![10, 40, 120],
    };
    let mut cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        ..Default::default()
    };
    cfg.adam.learning_rate = 1e-2;
    let r = sensitivity_sweep(
        [Protocol::Fedavg, Protocol::SlSequential],
        &split,
        &train,
        &test,
        &grid,
        "accuracy",
        &cfg,
    )?;
    for (title, m) in [("fedavg", &r.first), ("sl-sequential", &r.second), ("fedavg - sl-sequential", &r.difference)] {
        println!("{title}");
        print!("{}", r.matrix_csv(m)?);
        println!();
    }
    Ok(())
}
