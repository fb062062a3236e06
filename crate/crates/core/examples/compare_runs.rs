//! Trains FedAvg and SplitFed side by side, then reports the per-epoch
//! relative accuracy gap and the regression of one learning curve on the
//! other.
//!
//!     cargo run --release --example compare_runs

use splitsim::cli::compare_reports;
use splitsim::data::{gen_blobs, partition_iid};
use splitsim::nn::{LossKind, ModelSpec};
use splitsim::protocol::{run_protocol, split_model, Protocol, TrainConfig};

fn main() -> splitsim::Result<()> {
    let train = gen_blobs(3, 12, 200, 0.9, 10)?;
    let test = gen_blobs(3, 12, 60, 0.9, 11)?;
    let model = ModelSpec::mlp(&[12, 24, 12], 3, LossKind::SoftmaxCrossEntropy)?;
    let split = split_model(&model, 1)?;
    let partition = partition_iid(train.len(), 4, None, 1)?;
    let mut cfg = TrainConfig {
        epochs: 12,
        batch_size: 32,
        ..Default::default()
    };
    cfg.adam.learning_rate = 2e-3;

    let sf = run_protocol(Protocol::Splitfed, &split, &train, &partition, &test, &cfg)?;
    let fa = run_protocol(Protocol::Fedavg, &split, &train, &partition, &test, &cfg)?;
    let cmp = compare_reports(&sf, &fa)?;

    let acc = &cmp.metrics["accuracy"];
    println!("{:>6}{:>11}{:>11}{:>10}", "epoch", "splitfed", "fedavg", "gap %");
    for (i, d) in acc.delta_percent.iter().enumerate() {
        println!(
            "{:>6}{:>11.4}{:>11.4}{:>10.2}",
            i + 1,
            sf.epochs[i].metrics.accuracy,
            fa.epochs[i].metrics.accuracy,
            d
        );
    }
    for (name, m) in &cmp.metrics {
        match &m.fit {
            Some(f) => println!("{name:<9} slope {:.3}  intercept {:+.3}  r2 {:.3}", f.slope, f.intercept, f.r2),
            None => println!("{name:<9} constant reference, no fit"),
        }
    }
    if !cmp.skipped.is_empty() {
        println!("skipped: {}", cmp.skipped.join(", "));
    }
    Ok(())
}
