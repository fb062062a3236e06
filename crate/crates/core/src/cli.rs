//! JSON-configured experiments behind the `splitsim` subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{partition_iid, write_container, Container, DataSource, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{linfit, relative_error_series, F1Mode, MetricSet, RegressionFit};
use crate::nn::{AdamConfig, LayerSpec, LossKind, ModelSpec};
use crate::privacy::{analyze, budget_curve, efficiency_report, EfficiencyReport, PrivacyReport};
use crate::protocol::{run_protocol, sensitivity_sweep, split_model, Protocol, SplitSpec, SweepGrid, SweepResult, TrainConfig, TrainReport};

/// Which network to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelChoice {
    /// The five-conv image classifier. Shape fields default to the data
    /// source, or to 3 channels, 28 pixels and 9 classes without one.
    ImageConv {
        #[serde(default)]
        channels: Option<usize>,
        #[serde(default)]
        side: Option<usize>,
        #[serde(default)]
        classes: Option<usize>,
    },
    /// Same client side, smaller server side.
    ImageConvCompact {
        #[serde(default)]
        channels: Option<usize>,
        #[serde(default)]
        side: Option<usize>,
        #[serde(default)]
        classes: Option<usize>,
    },
    /// 2808-64-32-32-1 binary classifier.
    #[serde(rename = "mlp-2808")]
    Mlp2808,
    /// Dense/ReLU stack sized from the data: `hidden` widths between the
    /// input and one logit per class.
    Mlp { hidden: Vec<usize> },
    Custom {
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        loss: LossKind,
    },
}

impl ModelChoice {
    /// Builds the model; `data` gives the per-sample shape and class count.
    pub fn build(&self, data: Option<(Vec<usize>, usize)>) -> Result<ModelSpec> {
        let image = |channels: &Option<usize>, side: &Option<usize>, classes: &Option<usize>| {
            let (shape, k) = data.clone().unwrap_or((vec![3, 28, 28], 9));
            let ch = channels.unwrap_or(shape.first().copied().unwrap_or(3));
            let sd = side.unwrap_or(shape.get(1).copied().unwrap_or(28));
            (ch, sd, classes.unwrap_or(k))
        };
        match self {
            ModelChoice::ImageConv { channels, side, classes } => {
                let (c, s, k) = image(channels, side, classes);
                ModelSpec::image_conv(c, s, k)
            }
            ModelChoice::ImageConvCompact { channels, side, classes } => {
                let (c, s, k) = image(channels, side, classes);
                ModelSpec::image_conv_compact(c, s, k)
            }
            ModelChoice::Mlp2808 => ModelSpec::mlp_2808(),
            ModelChoice::Mlp { hidden } => {
                let Some((shape, classes)) = data else {
                    return Err(Error::Config("model preset mlp needs a data source to size it".into()));
                };
                let mut widths = vec![shape.iter().product()];
                widths.extend(hidden);
                ModelSpec::mlp(&widths, classes, LossKind::SoftmaxCrossEntropy)
            }
            ModelChoice::Custom { input_shape, layers, loss } => {
                ModelSpec::new(input_shape.clone(), layers.clone(), *loss)
            }
        }
    }

    fn default_cut(&self) -> Option<usize> {
        match self {
            ModelChoice::ImageConv { .. } | ModelChoice::ImageConvCompact { .. } => Some(ModelSpec::IMAGE_CUT),
            ModelChoice::Mlp2808 => Some(1),
            ModelChoice::Mlp { .. } => Some(1),
            ModelChoice::Custom { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub clients: Vec<usize>,
    pub samples_per_client: Vec<usize>,
    #[serde(default = "default_sweep_protocols")]
    pub protocols: [Protocol; 2],
}

fn default_sweep_protocols() -> [Protocol; 2] {
    [Protocol::Fedavg, Protocol::SlSequential]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    /// Local sample count of the client being analysed.
    pub n_c: u64,
    /// Use this `N_w` instead of the model's own parameter count.
    #[serde(default)]
    pub n_w: Option<u64>,
}

fn default_protocol() -> Protocol {
    Protocol::Splitfed
}
fn default_clients() -> usize {
    5
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-4
}
fn default_wd() -> f64 {
    1e-5
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_metric() -> String {
    "accuracy".into()
}

/// One experiment. Defaults follow the standard setting: 50 epochs of Adam
/// at batch 256, learning rate 1e-4, weight decay 1e-5, 5 clients, 5 seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    pub model: ModelChoice,
    #[serde(default)]
    pub cut: Option<usize>,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default = "default_clients")]
    pub clients: usize,
    /// Per-client shard sizes; even split of the training set otherwise.
    #[serde(default)]
    pub client_sizes: Option<Vec<usize>>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub f1_mode: F1Mode,
    /// Metric reported by sweeps.
    #[serde(default = "default_metric")]
    pub metric: String,
    /// Run clients and seeds on the thread pool; output is unaffected.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub privacy: Option<PrivacySpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A missing or unreadable file is a
    /// configuration error naming the path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("field `{field}`: {why}")));
        if self.clients == 0 {
            return bad("clients", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed");
        }
        if let Some(s) = &self.client_sizes {
            if s.len() != self.clients {
                return bad("client_sizes", "needs one entry per client");
            }
        }
        if !MetricSet::NAMES.contains(&self.metric.as_str()) {
            return bad("metric", &format!("expected one of {:?}", MetricSet::NAMES));
        }
        if self.cut.is_none() && self.model.default_cut().is_none() {
            return bad("cut", "required for a custom model");
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig::new(self.learning_rate, self.weight_decay),
            seed,
            f1_mode: self.f1_mode,
            parallel: self.parallel,
            keep_trajectory: false,
        }
    }

    fn data_source(&self) -> Result<&DataSource> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("field `data`: required for this command".into()))
    }

    /// The split model, sized from `shape` when given.
    pub fn split(&self, shape: Option<(Vec<usize>, usize)>) -> Result<SplitSpec> {
        let model = self.model.build(shape)?;
        let cut = self.cut.or(self.model.default_cut()).expect("validated");
        split_model(&model, cut)
    }

    fn load_data(&self, seed: u64) -> Result<(Dataset, Dataset, SplitSpec)> {
        let (train, test) = self.data_source()?.load(seed)?;
        let split = self.split(Some((train.sample_shape().to_vec(), train.classes)))?;
        Ok((train, test, split))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Data(format!("json encoding: {e}")))
}

/// One seed's run inside [`cmd_train`].
pub fn train_seed(cfg: &ExperimentConfig, seed: u64) -> Result<TrainReport> {
    let (train, test, split) = cfg.load_data(seed)?;
    let partition = partition_iid(train.len(), cfg.clients, cfg.client_sizes.as_deref(), seed)?;
    run_protocol(cfg.protocol, &split, &train, &partition, &test, &cfg.train_config(seed))
}

/// Runs every seed, writes `<protocol>_seed<S>.json` / `.csv` per seed and
/// `<protocol>_summary.csv` with per-epoch mean and 1.96 standard
/// deviations across seeds. Returns the written paths.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<TrainReport>, Vec<PathBuf>)> {
    create_dir(out)?;
    let reports: Vec<TrainReport> = if cfg.parallel {
        use rayon::prelude::*;
        cfg.seeds.par_iter().map(|&s| train_seed(cfg, s)).collect::<Result<_>>()?
    } else {
        cfg.seeds.iter().map(|&s| train_seed(cfg, s)).collect::<Result<_>>()?
    };
    let mut paths = Vec::new();
    for (seed, r) in cfg.seeds.iter().zip(&reports) {
        let stem = format!("{}_seed{seed}", cfg.protocol);
        paths.push(write(out.join(format!("{stem}.json")), &r.to_json()?)?);
        paths.push(write(out.join(format!("{stem}.csv")), &r.to_csv()?)?);
    }
    paths.push(write(out.join(format!("{}_summary.csv", cfg.protocol)), &summary_csv(&reports)?)?);
    Ok((reports, paths))
}

/// Mean and `1.96 · sd` (sample standard deviation) of a set of values.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt())
}

/// Per-epoch mean and half-width across reports; epoch 0 is the initial
/// evaluation. Cells are empty where a value is missing in any report.
pub fn summary_csv(reports: &[TrainReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::Data("no reports to summarize".into()));
    };
    if reports.iter().any(|r| r.epochs.len() != first.epochs.len()) {
        return Err(Error::Data("reports cover different epoch counts".into()));
    }
    let encode = |e: csv::Error| Error::Data(format!("csv encoding: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    let names: Vec<&str> = std::iter::once("train_loss").chain(MetricSet::NAMES).collect();
    let mut header = vec!["epoch".to_string(), "seeds".to_string()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_ci95"));
    }
    w.write_record(&header).map_err(encode)?;
    for e in 0..=first.epochs.len() {
        let mut row = vec![e.to_string(), reports.len().to_string()];
        for n in &names {
            let vals: Option<Vec<f64>> = reports
                .iter()
                .map(|r| match (e, *n) {
                    (0, "train_loss") => None,
                    (0, m) => r.initial.get(m),
                    (_, "train_loss") => Some(r.epochs[e - 1].train_loss),
                    (_, m) => r.epochs[e - 1].metrics.get(m),
                })
                .collect();
            match vals {
                Some(v) => {
                    let (m, ci) = mean_ci(&v);
                    row.push(m.to_string());
                    row.push(ci.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row).map_err(encode)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    /// `|a - b| / |b| · 100` per epoch.
    pub delta_percent: Vec<f64>,
    /// Regression of `a`'s per-epoch values on `b`'s.
    pub fit: Option<RegressionFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Protocol,
    pub b: Protocol,
    pub epochs: usize,
    pub metrics: BTreeMap<String, MetricComparison>,
    /// Metrics left out because they, or their relative error, are
    /// undefined in some epoch.
    pub skipped: Vec<String>,
}

/// Per-epoch relative error and regression of report `a` against `b`.
pub fn compare_reports(a: &TrainReport, b: &TrainReport) -> Result<Comparison> {
    if a.epochs.len() != b.epochs.len() {
        return Err(Error::Data(format!(
            "reports cover {} and {} epochs",
            a.epochs.len(),
            b.epochs.len()
        )));
    }
    if a.epochs.is_empty() {
        return Err(Error::Data("reports have no epochs to compare".into()));
    }
    let mut metrics = BTreeMap::new();
    let mut skipped = Vec::new();
    for name in MetricSet::NAMES {
        let (Ok(va), Ok(vb)) = (a.series(name), b.series(name)) else {
            skipped.push(name.to_string());
            continue;
        };
        let delta_percent = match relative_error_series(&va, &vb) {
            Ok(d) => d,
            Err(Error::MetricUndefined(_)) => {
                skipped.push(name.to_string());
                continue;
            }
            Err(e) => return Err(e),
        };
        // a fit needs spread in b
        let fit = match linfit(&vb, &va) {
            Ok(f) => Some(f),
            Err(Error::Data(_)) => None,
            Err(e) => return Err(e),
        };
        metrics.insert(name.to_string(), MetricComparison { delta_percent, fit });
    }
    Ok(Comparison {
        a: a.protocol,
        b: b.protocol,
        epochs: a.epochs.len(),
        metrics,
        skipped,
    })
}

fn read_report(path: &Path) -> Result<TrainReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainReport::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes `comparison.json` for two report files.
pub fn cmd_compare(a: &Path, b: &Path, out: &Path) -> Result<(Comparison, PathBuf)> {
    let cmp = compare_reports(&read_report(a)?, &read_report(b)?)?;
    create_dir(out)?;
    let path = write(out.join("comparison.json"), &to_json(&cmp)?)?;
    Ok((cmp, path))
}

/// Writes the privacy and efficiency reports as JSON and text tables, plus
/// the budget-versus-size curve. `n_c` and `n_w` override the config.
pub fn cmd_analyze(
    cfg: &ExperimentConfig,
    n_c: Option<u64>,
    n_w: Option<u64>,
    out: &Path,
) -> Result<(PrivacyReport, EfficiencyReport, Vec<PathBuf>)> {
    let shape = match &cfg.data {
        Some(src) => match src.describe() {
            Some(s) => Some(s),
            None => {
                let (train, _) = src.load(cfg.seeds[0])?;
                Some((train.sample_shape().to_vec(), train.classes))
            }
        },
        None => None,
    };
    let split = cfg.split(shape)?;
    let spec = cfg.privacy.as_ref();
    let n_c = n_c
        .or(spec.map(|p| p.n_c))
        .ok_or_else(|| Error::Config("field `privacy.n_c`: required for analyze".into()))?;
    let n_w = n_w.or(spec.and_then(|p| p.n_w));
    let privacy = analyze(&split, n_c, n_w)?;
    let efficiency = efficiency_report(&split)?;
    create_dir(out)?;
    let mut paths = vec![
        write(out.join("privacy.json"), &to_json(&privacy)?)?,
        write(out.join("privacy.txt"), &privacy.table())?,
        write(out.join("efficiency.json"), &to_json(&efficiency)?)?,
        write(out.join("efficiency.txt"), &efficiency.table())?,
    ];
    let top = (privacy.min_data_size.max(1) * 4).max(16);
    let mut sizes = Vec::new();
    let mut s = 1u64;
    while s <= top {
        sizes.push(s);
        s *= 2;
    }
    let encode = |e: csv::Error| Error::Data(format!("csv encoding: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_c", "dims_per_sample_fl", "dims_per_sample_sl"]).map_err(encode)?;
    for (n, fl, sl) in budget_curve(privacy.n_w, privacy.d, &sizes)? {
        w.write_record([n.to_string(), fl.to_string(), sl.to_string()]).map_err(encode)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv encoding: {e}")))?;
    paths.push(write(out.join("budget_curve.csv"), &String::from_utf8(bytes).expect("utf-8"))?);
    Ok((privacy, efficiency, paths))
}

/// Runs the configured grid for every seed and writes the two protocol
/// matrices and their difference, averaged over seeds, as CSVs.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(SweepResult, Vec<PathBuf>)> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("field `sweep`: required for the sweep command".into()))?;
    let grid = SweepGrid {
        clients: spec.clients.clone(),
        samples_per_client: spec.samples_per_client.clone(),
    };
    let mut acc: Option<SweepResult> = None;
    for &seed in &cfg.seeds {
        let (train, test, split) = cfg.load_data(seed)?;
        let r = sensitivity_sweep(spec.protocols, &split, &train, &test, &grid, &cfg.metric, &cfg.train_config(seed))?;
        acc = Some(match acc {
            None => r,
            Some(mut a) => {
                for (dst, src) in [(&mut a.first, &r.first), (&mut a.second, &r.second), (&mut a.difference, &r.difference)] {
                    for (dr, sr) in dst.iter_mut().zip(src) {
                        for (d, s) in dr.iter_mut().zip(sr) {
                            *d += s;
                        }
                    }
                }
                a
            }
        });
    }
    let mut r = acc.expect("at least one seed");
    let n = cfg.seeds.len() as f64;
    for m in [&mut r.first, &mut r.second, &mut r.difference] {
        m.iter_mut().flatten().for_each(|v| *v /= n);
    }
    create_dir(out)?;
    let [p, q] = spec.protocols;
    let paths = vec![
        write(out.join(format!("sweep_first_{p}.csv")), &r.matrix_csv(&r.first)?)?,
        write(out.join(format!("sweep_second_{q}.csv")), &r.matrix_csv(&r.second)?)?,
        write(out.join("sweep_difference.csv"), &r.matrix_csv(&r.difference)?)?,
    ];
    Ok((r, paths))
}

/// Writes `train_seed<S>.slsim` and `test_seed<S>.slsim` containers for
/// every seed.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let src = cfg.data_source()?;
    create_dir(out)?;
    let mut paths = Vec::new();
    for &seed in &cfg.seeds {
        let (train, test) = src.load(seed)?;
        for (name, d) in [("train", train), ("test", test)] {
            let path = out.join(format!("{name}_seed{seed}.slsim"));
            write_container(&path, &Container::Dataset(d))?;
            paths.push(path);
        }
    }
    Ok(paths)
}
