use super::report::{Recorder, TrainReport};
use super::transcript::{Message, MessageKind, Party};
use super::{check_loss, check_setup, epoch_batches, initial_params, LossMeter, Protocol, SplitSpec, TrainConfig};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::nn::{
    backward, backward_params, forward_train, loss_and_grad, ForwardCache, Gradients, LayerSpec, LossKind,
    OptimizerState, Parameters,
};
use crate::tensor::Tensor;

/// Cut-layer activations sent to the server, with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SmashedBatch {
    pub client: usize,
    pub seq: u64,
    pub activations: Tensor,
    pub labels: Vec<usize>,
}

impl SmashedBatch {
    /// Payload size; labels are not counted.
    pub fn elements(&self) -> usize {
        self.activations.len()
    }
}

/// Gradient of the loss with respect to a [`SmashedBatch`]'s activations.
#[derive(Debug, Clone, PartialEq)]
pub struct SmashedGrad {
    pub client: usize,
    pub seq: u64,
    pub grad: Tensor,
}

impl SmashedGrad {
    pub fn elements(&self) -> usize {
        self.grad.len()
    }
}

/// Server forward, loss and backward on one smashed batch. Updates the
/// BatchNorm statistics in `params` but takes no optimizer step.
pub(crate) fn server_pass(
    layers: &[LayerSpec],
    loss: LossKind,
    params: &mut Parameters,
    smashed_dim: usize,
    b: &SmashedBatch,
) -> Result<(SmashedGrad, Gradients, f64)> {
    let rows = b.activations.rows();
    if rows == 0 || b.activations.row_len() != smashed_dim || b.labels.len() != rows {
        return Err(Error::Protocol(format!(
            "client {} batch {}: expected {} labelled rows of width {smashed_dim}, got shape {:?} with {} labels",
            b.client,
            b.seq,
            rows,
            b.activations.shape(),
            b.labels.len()
        )));
    }
    let (logits, cache) = forward_train(layers, params, &b.activations)?;
    let (l, dy) = loss_and_grad(loss, &logits, &b.labels)?;
    let (dx, grads) = backward(layers, params, cache, &dy)?;
    let grad = SmashedGrad {
        client: b.client,
        seq: b.seq,
        grad: dx,
    };
    Ok((grad, grads, check_loss(l)?))
}

/// Holder of the client sub-model during its turn.
#[derive(Debug)]
pub struct SlClient<'a> {
    id: usize,
    layers: &'a [LayerSpec],
    params: Parameters,
    opt: OptimizerState,
    next_seq: u64,
    pending: Option<(u64, ForwardCache, Vec<usize>)>,
}

impl<'a> SlClient<'a> {
    pub fn new(id: usize, layers: &'a [LayerSpec], params: Parameters, opt: OptimizerState) -> Self {
        SlClient {
            id,
            layers,
            params,
            opt,
            next_seq: 0,
            pending: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Runs the client prefix. Only one batch may be in flight.
    pub fn forward(&mut self, x: &Tensor, labels: Vec<usize>) -> Result<SmashedBatch> {
        if let Some((seq, ..)) = &self.pending {
            return Err(Error::Protocol(format!(
                "client {}: batch {seq} still awaits its gradient",
                self.id
            )));
        }
        let (activations, cache) = forward_train(self.layers, &mut self.params, x)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending = Some((seq, cache, activations.shape().to_vec()));
        Ok(SmashedBatch {
            client: self.id,
            seq,
            activations,
            labels,
        })
    }

    /// Client-side gradients for the in-flight batch.
    pub fn gradients(&mut self, g: &SmashedGrad) -> Result<Gradients> {
        let matches = matches!(&self.pending, Some((seq, ..)) if g.client == self.id && *seq == g.seq);
        if !matches {
            return Err(Error::Protocol(format!(
                "client {} received a gradient for unknown batch {} of client {}",
                self.id, g.seq, g.client
            )));
        }
        let (_, cache, shape) = self.pending.take().expect("checked above");
        if g.grad.shape() != shape.as_slice() {
            return Err(Error::Protocol(format!(
                "gradient shape {:?} does not match smashed shape {shape:?}",
                g.grad.shape()
            )));
        }
        backward_params(self.layers, &self.params, cache, &g.grad)
    }

    /// Backward plus one Adam step.
    pub fn apply(&mut self, g: &SmashedGrad) -> Result<()> {
        let grads = self.gradients(g)?;
        self.opt.step(&mut self.params, &grads)
    }

    /// Parameters and optimizer state for the next client.
    pub fn into_state(self) -> Result<(Parameters, OptimizerState)> {
        if let Some((seq, ..)) = self.pending {
            return Err(Error::Protocol(format!(
                "client {} hands off with batch {seq} in flight",
                self.id
            )));
        }
        Ok((self.params, self.opt))
    }
}

/// The server sub-model with its own optimizer.
#[derive(Debug)]
pub struct SlServer<'a> {
    layers: &'a [LayerSpec],
    loss: LossKind,
    smashed_dim: usize,
    params: Parameters,
    opt: OptimizerState,
}

impl<'a> SlServer<'a> {
    pub fn new(split: &'a SplitSpec, params: Parameters, opt: OptimizerState) -> Self {
        SlServer {
            layers: split.server_layers(),
            loss: split.model.loss,
            smashed_dim: split.smashed_dim,
            params,
            opt,
        }
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Forward, loss, backward and one Adam step; returns the gradient for
    /// the client and the batch loss.
    pub fn process(&mut self, b: &SmashedBatch) -> Result<(SmashedGrad, f64)> {
        let (g, grads, l) = server_pass(self.layers, self.loss, &mut self.params, self.smashed_dim, b)?;
        self.opt.step(&mut self.params, &grads)?;
        Ok((g, l))
    }
}

/// Round-robin split learning: clients train in turn and pass the client
/// sub-model (parameters and Adam moments) to the next client.
pub fn run_sl_sequential(
    split: &SplitSpec,
    train: &Dataset,
    partition: &Partition,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_setup(&split.model, train, test, partition, cfg)?;
    let k = partition.k();
    let (cp, sp) = initial_params(&split.model, cfg.seed)?.split_at(split.cut);
    let copt = OptimizerState::new(&cp, cfg.adam);
    let sopt = OptimizerState::new(&sp, cfg.adam);
    let mut server = SlServer::new(split, sp, sopt);
    let mut state = (cp, copt);
    let mut rec = Recorder::start(&split.model, test, cfg, &Parameters::concat(&state.0, server.params()))?;
    for epoch in 1..=cfg.epochs {
        let mut meter = LossMeter::default();
        let mut step = 0;
        for i in 0..k {
            let mut client = SlClient::new(i, split.client_layers(), state.0, state.1);
            for b in epoch_batches(partition.shard(i), cfg.batch_size, cfg.seed, i, epoch) {
                let (x, labels) = train.batch(&b)?;
                let smashed = client.forward(&x, labels)?;
                rec.send(Message::new(MessageKind::Smashed, Party::Client(i), Party::Server, epoch, step, smashed.elements()));
                let (g, l) = server.process(&smashed)?;
                rec.send(Message::new(MessageKind::SmashedGrad, Party::Server, Party::Client(i), epoch, step, g.elements()));
                client.apply(&g)?;
                meter.add(l, b.len());
                step += 1;
            }
            state = client.into_state()?;
            let size = state.0.element_count() + state.1.element_count();
            rec.send(Message::new(MessageKind::ClientParams, Party::Client(i), Party::Client((i + 1) % k), epoch, step, size));
        }
        rec.end_epoch(epoch, meter.mean(), &Parameters::concat(&state.0, server.params()))?;
    }
    let final_params = Parameters::concat(&state.0, server.params());
    Ok(rec.finish(Protocol::SlSequential, Some((split.cut, split.smashed_dim)), partition, final_params))
}
