use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::transcript::{Message, Tally, Transcript, TranscriptSummary};
use super::{evaluate_params, Protocol, TrainConfig};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::nn::{ModelSpec, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training loss over the epoch.
    pub train_loss: f64,
    pub metrics: MetricSet,
    pub messages: u64,
    pub bytes: u64,
    pub cumulative_bytes: u64,
    pub by_kind: BTreeMap<String, Tally>,
}

/// Outcome of one training run. Serializes to stable JSON; the final
/// parameters, the trajectory and the raw message log are kept in memory
/// only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub protocol: Protocol,
    pub config: TrainConfig,
    pub cut: Option<usize>,
    pub smashed_dim: Option<usize>,
    pub clients: usize,
    pub shard_sizes: Vec<usize>,
    pub test_samples: usize,
    pub parameter_count: usize,
    /// Test metrics of the initial parameters.
    pub initial: MetricSet,
    pub epochs: Vec<EpochRecord>,
    pub transcript: TranscriptSummary,
    /// SHA-256 of the final full-model parameters.
    pub final_digest: String,
    #[serde(skip)]
    pub final_params: Parameters,
    /// Full parameters after each epoch, when requested.
    #[serde(skip)]
    pub trajectory: Vec<Parameters>,
    #[serde(skip)]
    pub log: Transcript,
}

impl TrainReport {
    pub fn final_metrics(&self) -> &MetricSet {
        self.epochs.last().map_or(&self.initial, |e| &e.metrics)
    }

    /// Per-epoch values of `metric`, epoch 1 first.
    pub fn series(&self, metric: &str) -> Result<Vec<f64>> {
        self.epochs
            .iter()
            .map(|e| {
                e.metrics.get(metric).ok_or_else(|| {
                    Error::Data(format!("metric {metric} missing at epoch {}", e.epoch))
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("report encoding: {e}")))
    }

    pub fn from_json(text: &str) -> Result<TrainReport> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report decoding: {e}")))
    }

    /// One row per epoch, epoch 0 being the initial evaluation.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["epoch", "train_loss"];
        header.extend(MetricSet::NAMES);
        header.extend(["messages", "bytes", "cumulative_bytes"]);
        let encode = |e: csv::Error| Error::Data(format!("csv encoding: {e}"));
        w.write_record(&header).map_err(encode)?;
        let metric_cells = |m: &MetricSet| -> Vec<String> {
            MetricSet::NAMES
                .iter()
                .map(|n| m.get(n).map(|v| v.to_string()).unwrap_or_default())
                .collect()
        };
        let mut row = vec!["0".to_string(), String::new()];
        row.extend(metric_cells(&self.initial));
        row.extend(["0", "0", "0"].map(String::from));
        w.write_record(&row).map_err(encode)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), e.train_loss.to_string()];
            row.extend(metric_cells(&e.metrics));
            row.extend([e.messages, e.bytes, e.cumulative_bytes].map(|v| v.to_string()));
            w.write_record(&row).map_err(encode)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Accumulates the transcript and per-epoch records during a run.
pub(crate) struct Recorder<'a> {
    model: &'a ModelSpec,
    test: &'a Dataset,
    cfg: &'a TrainConfig,
    log: Transcript,
    epochs: Vec<EpochRecord>,
    trajectory: Vec<Parameters>,
    initial: MetricSet,
    cumulative: u64,
}

impl<'a> Recorder<'a> {
    pub fn start(model: &'a ModelSpec, test: &'a Dataset, cfg: &'a TrainConfig, initial: &Parameters) -> Result<Self> {
        Ok(Recorder {
            model,
            test,
            cfg,
            log: Transcript::default(),
            epochs: Vec::with_capacity(cfg.epochs),
            trajectory: Vec::new(),
            initial: evaluate_params(model, initial, test, cfg.f1_mode)?,
            cumulative: 0,
        })
    }

    pub fn send(&mut self, m: Message) {
        self.log.log(m);
    }

    pub fn end_epoch(&mut self, epoch: usize, train_loss: f64, params: &Parameters) -> Result<()> {
        let metrics = evaluate_params(self.model, params, self.test, self.cfg.f1_mode)?;
        let s = self.log.epoch_summary(epoch);
        self.cumulative += s.total.bytes;
        self.epochs.push(EpochRecord {
            epoch,
            train_loss,
            metrics,
            messages: s.total.messages,
            bytes: s.total.bytes,
            cumulative_bytes: self.cumulative,
            by_kind: s.by_kind,
        });
        if self.cfg.keep_trajectory {
            self.trajectory.push(params.clone());
        }
        Ok(())
    }

    pub fn finish(self, protocol: Protocol, split: Option<(usize, usize)>, partition: &Partition, final_params: Parameters) -> TrainReport {
        TrainReport {
            protocol,
            config: self.cfg.clone(),
            cut: split.map(|s| s.0),
            smashed_dim: split.map(|s| s.1),
            clients: partition.k(),
            shard_sizes: partition.sizes(),
            test_samples: self.test.len(),
            parameter_count: self.model.param_count(),
            initial: self.initial,
            epochs: self.epochs,
            transcript: self.log.summary(),
            final_digest: final_params.digest(),
            final_params,
            trajectory: self.trajectory,
            log: self.log,
        }
    }
}
