//! Classification metrics and run-comparison statistics.
//!
//! Conventions: argmax ties go to the lowest class index; AUROC gives tied
//! positive/negative pairs half credit; AUPRC is the step-wise average
//! precision with tied scores forming one threshold; class averages are
//! unweighted. Two-class problems score AUROC/AUPRC on class 1 only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample class scores with true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPredictions {
    scores: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Data(format!("{} score rows for {} labels", scores.len(), labels.len())));
        }
        let classes = scores.first().map_or(0, Vec::len);
        if scores.iter().any(|r| r.len() != classes) {
            return Err(Error::Data("score rows differ in width".into()));
        }
        if scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite score".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(ScoredPredictions { scores, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    /// Argmax per sample, lowest index on ties.
    pub fn predicted(&self) -> Vec<usize> {
        self.scores.iter().map(|r| argmax(r)).collect()
    }

    pub fn confusion(&self) -> ConfusionCounts {
        let mut m = ConfusionCounts::zeros(self.classes);
        for (p, &l) in self.predicted().into_iter().zip(&self.labels) {
            m.counts[l][p] += 1;
        }
        m
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn zeros(classes: usize) -> Self {
        ConfusionCounts {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Data("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionCounts { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Observed agreement `trace / total`.
    pub fn agreement(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Data("empty confusion matrix".into()));
        }
        let trace: u64 = (0..self.classes()).map(|c| self.counts[c][c]).sum();
        Ok(trace as f64 / total as f64)
    }
}

pub fn accuracy(pred: &ScoredPredictions) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Data("accuracy of an empty prediction set".into()));
    }
    let correct = pred.predicted().iter().zip(&pred.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Per-class results of a one-vs-rest metric; `None` marks classes without
/// both a positive and a negative sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAverage {
    pub mean: f64,
    pub per_class: Vec<Option<f64>>,
}

impl ClassAverage {
    pub fn skipped(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

fn one_vs_rest(
    pred: &ScoredPredictions,
    what: &str,
    per_class: impl Fn(&[(f64, bool)]) -> f64,
) -> Result<ClassAverage> {
    if pred.is_empty() {
        return Err(Error::Data(format!("{what} of an empty prediction set")));
    }
    let scored: Vec<usize> = if pred.classes == 2 { vec![1] } else { (0..pred.classes).collect() };
    let mut results = vec![None; pred.classes];
    for &c in &scored {
        let pairs: Vec<(f64, bool)> = pred
            .scores
            .iter()
            .zip(&pred.labels)
            .map(|(s, &l)| (s[c], l == c))
            .collect();
        let pos = pairs.iter().filter(|p| p.1).count();
        if pos == 0 || pos == pairs.len() {
            continue;
        }
        results[c] = Some(per_class(&pairs));
    }
    let valid: Vec<f64> = results.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::MetricUndefined(format!(
            "{what}: no class has both positive and negative samples"
        )));
    }
    Ok(ClassAverage {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        per_class: results,
    })
}

/// Binary ROC area from average ranks (Mann-Whitney U).
fn binary_auroc(pairs: &[(f64, bool)]) -> f64 {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| pairs[k].1).count() as f64;
        i = j + 1;
    }
    let p = pairs.iter().filter(|x| x.1).count() as f64;
    let n = pairs.len() as f64 - p;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
}

/// Step-wise average precision: `Σ (R_k − R_{k−1}) P_k` over descending
/// distinct score thresholds.
fn binary_auprc(pairs: &[(f64, bool)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = sorted.iter().filter(|x| x.1).count() as f64;
    let (mut tp, mut seen, mut ap) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut new_tp = 0.0;
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            new_tp += f64::from(u8::from(sorted[j].1));
            j += 1;
        }
        tp += new_tp;
        seen += (j - i) as f64;
        ap += (new_tp / total_pos) * (tp / seen);
        i = j;
    }
    ap
}

pub fn auroc_ovr(pred: &ScoredPredictions) -> Result<ClassAverage> {
    one_vs_rest(pred, "AUROC", binary_auroc)
}

pub fn auprc(pred: &ScoredPredictions) -> Result<ClassAverage> {
    one_vs_rest(pred, "AUPRC", binary_auprc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Mode {
    /// Unweighted mean over classes.
    #[default]
    Macro,
    /// F1 of class 1 only (binary tasks).
    PositiveClass,
}

fn class_f1(conf: &ConfusionCounts, c: usize) -> f64 {
    let tp = conf.counts[c][c] as f64;
    let predicted = conf.col_sum(c) as f64;
    let actual = conf.row_sum(c) as f64;
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if actual > 0.0 { tp / actual } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Macro F1; classes with `P + R = 0` contribute 0.
pub fn f1_macro(conf: &ConfusionCounts) -> Result<f64> {
    if conf.total() == 0 {
        return Err(Error::Data("F1 of an empty confusion matrix".into()));
    }
    Ok((0..conf.classes()).map(|c| class_f1(conf, c)).sum::<f64>() / conf.classes() as f64)
}

pub fn f1_score(conf: &ConfusionCounts, mode: F1Mode) -> Result<f64> {
    match mode {
        F1Mode::Macro => f1_macro(conf),
        F1Mode::PositiveClass => {
            if conf.classes() != 2 {
                return Err(Error::Argument(format!(
                    "positive-class F1 needs 2 classes, got {}",
                    conf.classes()
                )));
            }
            if conf.total() == 0 {
                return Err(Error::Data("F1 of an empty confusion matrix".into()));
            }
            Ok(class_f1(conf, 1))
        }
    }
}

pub fn cohens_kappa(conf: &ConfusionCounts) -> Result<f64> {
    let p_o = conf.agreement()?;
    let total = conf.total() as f64;
    let p_e = (0..conf.classes())
        .map(|c| conf.row_sum(c) as f64 * conf.col_sum(c) as f64)
        .sum::<f64>()
        / (total * total);
    if p_e == 1.0 {
        return Err(Error::MetricUndefined("kappa: expected agreement is 1".into()));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// `|v_sl − v_fl| / |v_fl| × 100`.
pub fn relative_error(v_sl: f64, v_fl: f64) -> Result<f64> {
    if v_fl == 0.0 {
        return Err(Error::MetricUndefined("relative error against a zero reference".into()));
    }
    Ok((v_sl - v_fl).abs() / v_fl.abs() * 100.0)
}

pub fn relative_error_series(sl: &[f64], fl: &[f64]) -> Result<Vec<f64>> {
    if sl.len() != fl.len() {
        return Err(Error::Data(format!("series lengths differ: {} vs {}", sl.len(), fl.len())));
    }
    sl.iter().zip(fl).map(|(&s, &f)| relative_error(s, f)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`. A constant `ys` has `r2 = 0`.
pub fn linfit(xs: &[f64], ys: &[f64]) -> Result<RegressionFit> {
    if xs.len() != ys.len() {
        return Err(Error::Data(format!("series lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Data("a fit needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("x values are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RegressionFit { slope, intercept, r2 })
}

/// The metric bundle reported after each epoch. Entries that are undefined
/// for the evaluated set are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub f1: f64,
    pub kappa: Option<f64>,
}

impl MetricSet {
    pub const NAMES: [&'static str; 5] = ["accuracy", "auroc", "auprc", "f1", "kappa"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "auroc" => self.auroc,
            "auprc" => self.auprc,
            "f1" => Some(self.f1),
            "kappa" => self.kappa,
            _ => None,
        }
    }
}

pub fn evaluate(pred: &ScoredPredictions, f1_mode: F1Mode) -> Result<MetricSet> {
    let conf = pred.confusion();
    let undefined_ok = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MetricUndefined(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(MetricSet {
        accuracy: accuracy(pred)?,
        auroc: undefined_ok(auroc_ovr(pred).map(|a| a.mean))?,
        auprc: undefined_ok(auprc(pred).map(|a| a.mean))?,
        f1: f1_score(&conf, f1_mode)?,
        kappa: undefined_ok(cohens_kappa(&conf))?,
    })
}
