//! Trains one model under all four protocols on the same data and
//! partition, then prints final test metrics next to the traffic each
//! protocol generated. Pass a directory to also write the JSON and CSV
//! reports.
//!
//!     cargo run --release --example train_protocols [OUT_DIR]

use splitsim::data::{gen_blobs, partition_iid};
use splitsim::nn::{LossKind, ModelSpec};
use splitsim::protocol::{run_protocol, split_model, Protocol, TrainConfig};

fn main() -> splitsim::Result<()> {
    let out = std::env::args().nth(1);
    let train = gen_blobs(4, 16, 150, 0.7, 1)?;
    let test = gen_blobs(4, 16, 50, 0.7, 2)?;
    let model = ModelSpec::mlp(&[16, 32, 16], 4, LossKind::SoftmaxCrossEntropy)?;
    let split = split_model(&model, 2)?;
    let partition = partition_iid(train.len(), 5, None, 0)?;
    let mut cfg = TrainConfig {
        epochs: 15,
        batch_size: 16,
        ..Default::default()
    };
    cfg.adam.learning_rate = 3e-3;

    println!(
        "{:<14}{:>10}{:>10}{:>10}{:>12}{:>14}",
        "protocol", "accuracy", "f1", "kappa", "messages", "bytes"
    );
    for p in Protocol::ALL {
        let r = run_protocol(p, &split, &train, &partition, &test, &cfg)?;
        let m = r.final_metrics();
        println!(
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>12}{:>14}",
            p.as_str(),
            m.accuracy,
            m.f1,
            m.kappa.unwrap_or(f64::NAN),
            r.transcript.total.messages,
            r.transcript.total.bytes
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| splitsim::Error::io(dir, e))?;
            r.write_json(format!("{dir}/{p}.json"))?;
            r.write_csv(format!("{dir}/{p}.csv"))?;
        }
    }
    Ok(())
}
