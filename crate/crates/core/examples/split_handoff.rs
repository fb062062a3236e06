//! Drives one round of sequential split learning by hand: each client runs
//! its prefix, the server answers with the cut-layer gradient, and the
//! client sub-model is handed to the next client.
//!
//!     cargo run --release --example split_handoff

use splitsim::data::{gen_blobs, partition_iid};
use splitsim::nn::{AdamConfig, LossKind, ModelSpec, OptimizerState};
use splitsim::protocol::{evaluate_params, initial_params, split_model, SlClient, SlServer};
use splitsim::metrics::F1Mode;
use splitsim::nn::Parameters;

fn main() -> splitsim::Result<()> {
    let train = gen_blobs(3, 8, 60, 1.0, 5)?;
    let test = gen_blobs(3, 8, 30, 1.0, 6)?;
    let model = ModelSpec::mlp(&[8, 16, 8], 3, LossKind::SoftmaxCrossEntropy)?;
    let split = split_model(&model, 2)?;
    let partition = partition_iid(train.len(), 3, None, 0)?;
    let adam = AdamConfig::new(1e-2, 0.0);

    let (client_params, server_params) = initial_params(&model, 0)?.split_at(split.cut);
    let mut server = SlServer::new(&split, server_params.clone(), OptimizerState::new(&server_params, adam));
    let mut state = (client_params.clone(), OptimizerState::new(&client_params, adam));

    for (id, shard) in partition.shards().iter().enumerate() {
        let mut client = SlClient::new(id, split.client_layers(), state.0, state.1);
        let mut losses = Vec::new();
        for batch in shard.chunks(10) {
            let (x, labels) = train.batch(batch)?;
            let smashed = client.forward(&x, labels)?;
            let (grad, loss) = server.process(&smashed)?;
            client.apply(&grad)?;
            losses.push(loss);
        }
        println!(
            "client {id}: {} batches, loss {:.4} -> {:.4}",
            losses.len(),
            losses[0],
            losses[losses.len() - 1]
        );
        state = client.into_state()?;
    }

    let full = Parameters::concat(&state.0, server.params());
    let m = evaluate_params(&model, &full, &test, F1Mode::Macro)?;
    println!("after one round: accuracy {:.4}, f1 {:.4}", m.accuracy, m.f1);
    Ok(())
}
