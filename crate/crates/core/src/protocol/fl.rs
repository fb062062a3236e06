use super::report::{Recorder, TrainReport};
use super::transcript::{Message, MessageKind, Party};
use super::{
    check_loss, check_setup, epoch_batches, initial_params, map_clients, shard_weights, LossMeter,
    Protocol, TrainConfig,
};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::nn::{backward_params, forward_train, loss_and_grad, LayerSpec, LossKind, ModelSpec, OptimizerState, Parameters};

/// One Adam step of a full model on one batch; returns the batch loss.
pub(crate) fn train_step(
    layers: &[LayerSpec],
    loss: LossKind,
    params: &mut Parameters,
    opt: &mut OptimizerState,
    data: &Dataset,
    batch: &[usize],
) -> Result<f64> {
    let (x, labels) = data.batch(batch)?;
    let (logits, cache) = forward_train(layers, params, &x)?;
    let (l, dy) = loss_and_grad(loss, &logits, &labels)?;
    let grads = backward_params(layers, params, cache, &dy)?;
    opt.step(params, &grads)?;
    check_loss(l)
}

fn local_epoch(
    model: &ModelSpec,
    params: &mut Parameters,
    opt: &mut OptimizerState,
    data: &Dataset,
    batches: &[Vec<usize>],
) -> Result<LossMeter> {
    let mut meter = LossMeter::default();
    for b in batches {
        let l = train_step(&model.layers, model.loss, params, opt, data, b)?;
        meter.add(l, b.len());
    }
    Ok(meter)
}

/// Mini-batch Adam on the whole training set. Batches follow client 0's
/// shuffle stream, so a one-client run of any other protocol sees the same
/// order.
pub fn run_centralized(model: &ModelSpec, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let partition = Partition::whole(train.len());
    check_setup(model, train, test, &partition, cfg)?;
    let mut params = initial_params(model, cfg.seed)?;
    let mut opt = OptimizerState::new(&params, cfg.adam);
    let mut rec = Recorder::start(model, test, cfg, &params)?;
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(partition.shard(0), cfg.batch_size, cfg.seed, 0, epoch);
        let meter = local_epoch(model, &mut params, &mut opt, train, &batches)?;
        rec.end_epoch(epoch, meter.mean(), &params)?;
    }
    Ok(rec.finish(Protocol::Centralized, None, &partition, params))
}

/// `Σ (n_i / n) · w_i` over client parameters, buffers included, summed in
/// client order.
pub fn fedavg_aggregate(clients: &[Parameters], sizes: &[usize]) -> Result<Parameters> {
    if clients.len() != sizes.len() || clients.is_empty() {
        return Err(Error::Argument(format!(
            "{} parameter sets for {} shard sizes",
            clients.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Argument("shard sizes must be positive".into()));
    }
    let n: usize = sizes.iter().sum();
    let items: Vec<(&Parameters, f64)> = clients
        .iter()
        .zip(sizes)
        .map(|(p, &s)| (p, s as f64 / n as f64))
        .collect();
    Parameters::weighted_sum(&items)
}

/// Federated averaging: each epoch every client trains one local epoch
/// from the global parameters, then the server averages. Each client keeps
/// its own Adam state across epochs.
pub fn run_fedavg(
    model: &ModelSpec,
    train: &Dataset,
    partition: &Partition,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_setup(model, train, test, partition, cfg)?;
    let k = partition.k();
    let weights = shard_weights(partition);
    let mut global = initial_params(model, cfg.seed)?;
    let mut opts: Vec<OptimizerState> = (0..k).map(|_| OptimizerState::new(&global, cfg.adam)).collect();
    let mut rec = Recorder::start(model, test, cfg, &global)?;
    let size = global.element_count();
    for epoch in 1..=cfg.epochs {
        for i in 0..k {
            rec.send(Message::new(MessageKind::GlobalParams, Party::Server, Party::Client(i), epoch, 0, size));
        }
        let results = map_clients(&mut opts, cfg.parallel, |i, opt| {
            let mut local = global.clone();
            let batches = epoch_batches(partition.shard(i), cfg.batch_size, cfg.seed, i, epoch);
            let meter = local_epoch(model, &mut local, opt, train, &batches)?;
            Ok((local, meter))
        })?;
        let mut meter = LossMeter::default();
        for (i, (_, m)) in results.iter().enumerate() {
            rec.send(Message::new(MessageKind::ClientParams, Party::Client(i), Party::Server, epoch, 0, size));
            meter.merge(*m);
        }
        let items: Vec<(&Parameters, f64)> = results.iter().map(|(p, _)| p).zip(weights.iter().copied()).collect();
        global = Parameters::weighted_sum(&items)?;
        rec.end_epoch(epoch, meter.mean(), &global)?;
    }
    Ok(rec.finish(Protocol::Fedavg, None, partition, global))
}
