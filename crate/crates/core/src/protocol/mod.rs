//! Centralized, federated and split training over an in-process message
//! log.

mod fl;
mod report;
mod sl;
mod splitfed;
mod sweep;
mod transcript;

pub use fl::{fedavg_aggregate, run_centralized, run_fedavg};
pub use report::{EpochRecord, TrainReport};
pub use sl::{run_sl_sequential, SlClient, SlServer, SmashedBatch, SmashedGrad};
pub use splitfed::{run_splitfed, SplitFedState, StepOutcome};
pub use sweep::{cell_seed, sensitivity_sweep, SweepGrid, SweepResult};
pub use transcript::{
    message_bytes, Direction, Message, MessageKind, Party, Tally, Transcript, TranscriptSummary,
    HEADER_BYTES,
};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, F1Mode, MetricSet, ScoredPredictions};
use crate::nn::{class_scores, forward_eval, init_params, AdamConfig, LayerSpec, ModelSpec, Parameters};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Centralized,
    Fedavg,
    SlSequential,
    Splitfed,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Centralized,
        Protocol::Fedavg,
        Protocol::SlSequential,
        Protocol::Splitfed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Centralized => "centralized",
            Protocol::Fedavg => "fedavg",
            Protocol::SlSequential => "sl-sequential",
            Protocol::Splitfed => "splitfed",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A model cut into a client prefix `[0, cut)` and a server suffix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSpec {
    pub model: ModelSpec,
    pub cut: usize,
    /// Flattened per-sample width of the cut-layer output.
    pub smashed_dim: usize,
}

impl SplitSpec {
    pub fn client_layers(&self) -> &[LayerSpec] {
        &self.model.layers[..self.cut]
    }

    pub fn server_layers(&self) -> &[LayerSpec] {
        &self.model.layers[self.cut..]
    }

    /// Cut indices accepted by [`split_model`].
    pub fn legal_cuts(model: &ModelSpec) -> Vec<usize> {
        (1..model.layers.len())
            .filter(|&c| !splits_conv_from_norm(&model.layers, c))
            .collect()
    }
}

fn splits_conv_from_norm(layers: &[LayerSpec], cut: usize) -> bool {
    matches!(
        (&layers[cut - 1], &layers[cut]),
        (LayerSpec::Conv2d { .. }, LayerSpec::BatchNorm2d { .. })
    )
}

pub fn split_model(model: &ModelSpec, cut: usize) -> Result<SplitSpec> {
    model.validate()?;
    let legal = SplitSpec::legal_cuts(model);
    if !legal.contains(&cut) {
        return Err(Error::Config(format!(
            "cut {cut} is not allowed for a {}-layer model; legal cuts: {legal:?}",
            model.layers.len()
        )));
    }
    let shapes = model.shapes()?;
    Ok(SplitSpec {
        model: model.clone(),
        cut,
        smashed_dim: shapes[cut].iter().product(),
    })
}

/// Training hyperparameters shared by every protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub f1_mode: F1Mode,
    /// Run clients on the rayon pool. Results do not depend on it.
    #[serde(default, skip_serializing)]
    pub parallel: bool,
    /// Keep the full parameters after every epoch in the report.
    #[serde(default, skip_serializing)]
    pub keep_trajectory: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
            f1_mode: F1Mode::default(),
            parallel: false,
            keep_trajectory: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate.is_finite() && a.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                a.learning_rate
            )));
        }
        if !(a.weight_decay.is_finite() && a.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                a.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

/// Runs `protocol`. Centralized training uses every sample the partition
/// covers, in shard order; FedAvg ignores the cut.
pub fn run_protocol(
    protocol: Protocol,
    split: &SplitSpec,
    train: &Dataset,
    partition: &Partition,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    match protocol {
        Protocol::Centralized => {
            let pooled = if partition.total() == train.len() && partition.k() == 1 {
                train.clone()
            } else {
                train.subset(&partition.shards().concat())?
            };
            run_centralized(&split.model, &pooled, test, cfg)
        }
        Protocol::Fedavg => run_fedavg(&split.model, train, partition, test, cfg),
        Protocol::SlSequential => run_sl_sequential(split, train, partition, test, cfg),
        Protocol::Splitfed => run_splitfed(split, train, partition, test, cfg),
    }
}

/// Seeded initial parameters of the full model.
pub fn initial_params(model: &ModelSpec, seed: u64) -> Result<Parameters> {
    init_params(&model.layers, &mut SeededRng::new(seed).derive("init"))
}

/// Batches of client `client`'s shard for `epoch` (1-based), in the
/// seed-determined shuffled order. The last batch may be short.
pub(crate) fn epoch_batches(shard: &[usize], batch: usize, seed: u64, client: usize, epoch: usize) -> Vec<Vec<usize>> {
    let perm = SeededRng::new(seed)
        .derive("shuffle")
        .derive_index(client as u64)
        .derive_index(epoch as u64)
        .permutation(shard.len());
    let order: Vec<usize> = perm.into_iter().map(|p| shard[p]).collect();
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

pub(crate) fn batch_count(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Checks that the data fit the model and the partition fits the data.
pub(crate) fn check_setup(model: &ModelSpec, train: &Dataset, test: &Dataset, partition: &Partition, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    model.validate()?;
    for (what, d) in [("training", train), ("test", test)] {
        if d.sample_shape() != model.input_shape.as_slice() {
            return Err(Error::Data(format!(
                "{what} samples have shape {:?}, model expects {:?}",
                d.sample_shape(),
                model.input_shape
            )));
        }
        if d.classes != model.num_classes() {
            return Err(Error::Data(format!(
                "{what} set has {} classes, model scores {}",
                d.classes,
                model.num_classes()
            )));
        }
    }
    if partition.k() == 0 {
        return Err(Error::Config("partition has no clients".into()));
    }
    for (i, shard) in partition.shards().iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::Config(format!("client {i} holds no samples")));
        }
        if let Some(&bad) = shard.iter().find(|&&j| j >= train.len()) {
            return Err(Error::Config(format!(
                "client {i} references sample {bad} of a {}-sample training set",
                train.len()
            )));
        }
    }
    Ok(())
}

/// Global shard weights `n_i / n`.
pub(crate) fn shard_weights(partition: &Partition) -> Vec<f64> {
    let n = partition.total() as f64;
    partition.sizes().iter().map(|&s| s as f64 / n).collect()
}

const EVAL_CHUNK: usize = 256;

/// Test-set metrics of the full model.
pub fn evaluate_params(model: &ModelSpec, params: &Parameters, test: &Dataset, f1_mode: F1Mode) -> Result<MetricSet> {
    let mut scores = Vec::with_capacity(test.len());
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = test.batch(chunk)?;
        let logits = forward_eval(&model.layers, params, &x)?;
        if !logits.all_finite() {
            return Err(Error::Numeric("non-finite logits during evaluation".into()));
        }
        scores.extend(class_scores(model.loss, &logits));
    }
    evaluate(&ScoredPredictions::new(scores, test.labels.clone())?, f1_mode)
}

/// Running sample-weighted mean of batch losses.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct LossMeter {
    sum: f64,
    count: usize,
}

impl LossMeter {
    pub fn add(&mut self, batch_mean: f64, batch: usize) {
        self.sum += batch_mean * batch as f64;
        self.count += batch;
    }

    pub fn merge(&mut self, other: LossMeter) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

pub(crate) fn check_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric("training loss diverged".into()))
    }
}

/// Applies `f` to every client state, on the rayon pool when `parallel`.
/// Results keep client order either way.
pub(crate) fn map_clients<S: Send, T: Send>(
    states: &mut [S],
    parallel: bool,
    f: impl Fn(usize, &mut S) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if parallel {
        use rayon::prelude::*;
        states.par_iter_mut().enumerate().map(|(i, s)| f(i, s)).collect()
    } else {
        states.iter_mut().enumerate().map(|(i, s)| f(i, s)).collect()
    }
}
