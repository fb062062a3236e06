use super::report::{Recorder, TrainReport};
use super::sl::{server_pass, SmashedBatch};
use super::transcript::{Message, MessageKind, Party};
use super::{
    batch_count, check_setup, epoch_batches, initial_params, map_clients, shard_weights, LossMeter, Protocol,
    SplitSpec, TrainConfig,
};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::nn::{backward_params, forward_train, AdamConfig, Gradients, OptimizerState, Parameters};
use crate::tensor::Tensor;

/// What one synchronization step computed, for the clients that took part.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Indices of the clients that had a batch.
    pub active: Vec<usize>,
    /// Per active client, in `active` order.
    pub client_grads: Vec<Gradients>,
    pub server_grads: Vec<Gradients>,
    pub losses: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub smashed_elements: Vec<usize>,
    /// `Σ (n_i / n) · g_i` over active clients, as applied by the optimizers.
    pub applied_client: Gradients,
    pub applied_server: Gradients,
}

struct ClientResult {
    client_grads: Gradients,
    server_grads: Gradients,
    client_after: Parameters,
    server_after: Parameters,
    loss: f64,
    batch: usize,
    smashed: usize,
}

/// Shared state of a SplitFed run: one client sub-model held by the
/// federated server and one server sub-model held by the main server.
#[derive(Debug, Clone)]
pub struct SplitFedState<'a> {
    split: &'a SplitSpec,
    weights: Vec<f64>,
    client_params: Parameters,
    server_params: Parameters,
    client_opt: OptimizerState,
    server_opt: OptimizerState,
}

impl<'a> SplitFedState<'a> {
    /// `params` covers the full model; `weights` are the global `n_i / n`.
    pub fn new(split: &'a SplitSpec, params: &Parameters, adam: AdamConfig, weights: Vec<f64>) -> Result<Self> {
        params.check_against(&split.model.layers)?;
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("client weights must be positive".into()));
        }
        let (client_params, server_params) = params.split_at(split.cut);
        Ok(SplitFedState {
            split,
            weights,
            client_opt: OptimizerState::new(&client_params, adam),
            server_opt: OptimizerState::new(&server_params, adam),
            client_params,
            server_params,
        })
    }

    pub fn client_params(&self) -> &Parameters {
        &self.client_params
    }

    pub fn server_params(&self) -> &Parameters {
        &self.server_params
    }

    pub fn full_params(&self) -> Parameters {
        Parameters::concat(&self.client_params, &self.server_params)
    }

    /// One synchronization step. `batches[i]` is client `i`'s batch, or
    /// `None` once its shard is exhausted. Every active client runs against
    /// its own server replica; the main and federated servers then each
    /// take one Adam step on the weighted gradient, and BatchNorm
    /// statistics become the weight-normalized mean over active clients.
    pub fn step(&mut self, batches: &mut [Option<(Tensor, Vec<usize>)>], parallel: bool) -> Result<StepOutcome> {
        if batches.len() != self.weights.len() {
            return Err(Error::Protocol(format!(
                "{} client batches for a {}-client federation",
                batches.len(),
                self.weights.len()
            )));
        }
        let split = self.split;
        let (cp, sp) = (&self.client_params, &self.server_params);
        let results = map_clients(batches, parallel, |i, slot| {
            let Some((x, labels)) = slot.take() else {
                return Ok(None);
            };
            let mut client = cp.clone();
            let mut server = sp.clone();
            let (activations, cache) = forward_train(split.client_layers(), &mut client, &x)?;
            let smashed = SmashedBatch {
                client: i,
                seq: 0,
                activations,
                labels,
            };
            let (g, server_grads, loss) =
                server_pass(split.server_layers(), split.model.loss, &mut server, split.smashed_dim, &smashed)?;
            let client_grads = backward_params(split.client_layers(), &client, cache, &g.grad)?;
            Ok(Some(ClientResult {
                client_grads,
                server_grads,
                client_after: client,
                server_after: server,
                loss,
                batch: smashed.labels.len(),
                smashed: smashed.elements(),
            }))
        })?;
        let mut active = Vec::new();
        let mut done = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            if let Some(r) = r {
                active.push(i);
                done.push(r);
            }
        }
        if done.is_empty() {
            return Err(Error::Protocol("synchronization step with no active client".into()));
        }
        let w = |j: usize| self.weights[active[j]];
        let cg: Vec<(&Gradients, f64)> = done.iter().enumerate().map(|(j, r)| (&r.client_grads, w(j))).collect();
        let sg: Vec<(&Gradients, f64)> = done.iter().enumerate().map(|(j, r)| (&r.server_grads, w(j))).collect();
        let applied_client = Gradients::weighted_sum(&cg)?;
        let applied_server = Gradients::weighted_sum(&sg)?;
        let cb: Vec<(&Parameters, f64)> = done.iter().enumerate().map(|(j, r)| (&r.client_after, w(j))).collect();
        let sb: Vec<(&Parameters, f64)> = done.iter().enumerate().map(|(j, r)| (&r.server_after, w(j))).collect();
        self.client_params.set_buffers_weighted(&cb)?;
        self.server_params.set_buffers_weighted(&sb)?;
        self.server_opt.step(&mut self.server_params, &applied_server)?;
        self.client_opt.step(&mut self.client_params, &applied_client)?;
        Ok(StepOutcome {
            active,
            losses: done.iter().map(|r| r.loss).collect(),
            batch_sizes: done.iter().map(|r| r.batch).collect(),
            smashed_elements: done.iter().map(|r| r.smashed).collect(),
            client_grads: done.iter().map(|r| r.client_grads.clone()).collect(),
            server_grads: done.into_iter().map(|r| r.server_grads).collect(),
            applied_client,
            applied_server,
        })
    }
}

/// SplitFed: clients compute in parallel against per-client server
/// replicas and synchronize after every mini-batch. A client whose shard is
/// exhausted sits out the remaining steps of the epoch.
pub fn run_splitfed(
    split: &SplitSpec,
    train: &Dataset,
    partition: &Partition,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_setup(&split.model, train, test, partition, cfg)?;
    let k = partition.k();
    let full = initial_params(&split.model, cfg.seed)?;
    let mut state = SplitFedState::new(split, &full, cfg.adam, shard_weights(partition))?;
    let mut rec = Recorder::start(&split.model, test, cfg, &full)?;
    let steps = partition.sizes().iter().map(|&n| batch_count(n, cfg.batch_size)).max().unwrap_or(0);
    let client_size = state.client_params.element_count();
    let buffer_size = client_size - state.client_params.trainable_count();
    for epoch in 1..=cfg.epochs {
        let plans: Vec<Vec<Vec<usize>>> = (0..k)
            .map(|i| epoch_batches(partition.shard(i), cfg.batch_size, cfg.seed, i, epoch))
            .collect();
        let mut meter = LossMeter::default();
        for step in 0..steps {
            let mut batches = plans
                .iter()
                .map(|p| p.get(step).map(|b| train.batch(b)).transpose())
                .collect::<Result<Vec<_>>>()?;
            for (i, b) in batches.iter().enumerate() {
                if b.is_some() {
                    rec.send(Message::new(MessageKind::GlobalParams, Party::FedServer, Party::Client(i), epoch, step, client_size));
                }
            }
            let out = state.step(&mut batches, cfg.parallel)?;
            for (j, &i) in out.active.iter().enumerate() {
                let e = out.smashed_elements[j];
                rec.send(Message::new(MessageKind::Smashed, Party::Client(i), Party::Server, epoch, step, e));
                rec.send(Message::new(MessageKind::SmashedGrad, Party::Server, Party::Client(i), epoch, step, e));
                // gradients plus the client's BatchNorm statistics
                let size = out.client_grads[j].element_count() + buffer_size;
                rec.send(Message::new(MessageKind::ClientGrads, Party::Client(i), Party::FedServer, epoch, step, size));
                meter.add(out.losses[j], out.batch_sizes[j]);
            }
        }
        rec.end_epoch(epoch, meter.mean(), &state.full_params())?;
    }
    let final_params = state.full_params();
    Ok(rec.finish(Protocol::Splitfed, Some((split.cut, split.smashed_dim)), partition, final_params))
}
