//! Test-only oracles shared by the integration suites. Nothing here calls
//! back into the code path it checks beyond the forward pass.
#![allow(dead_code)]

use splitsim::nn::{self, LayerSpec, LossKind, Parameters};
use splitsim::rng::SeededRng;
use splitsim::tensor::{rng_uniform, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this absolute difference two derivatives are considered equal
/// regardless of their relative error (both are round-off sized).
pub const FD_ABS_FLOOR: f64 = 1e-9;

#[derive(Debug, Default, Clone, Copy)]
pub struct FdOutcome {
    pub checked: usize,
    /// Largest relative error among derivatives above the absolute floor.
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub failures: usize,
}

impl FdOutcome {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let rel = diff / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        self.worst_abs = self.worst_abs.max(diff);
        if diff > FD_ABS_FLOOR {
            self.worst_rel = self.worst_rel.max(rel);
            if rel > FD_REL_TOL {
                self.failures += 1;
            }
        }
    }

    pub fn merge(&mut self, other: FdOutcome) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.worst_abs = self.worst_abs.max(other.worst_abs);
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// Objective `Σ r ⊙ forward(x)` with a fixed random projection `r`, in
/// training mode (batch statistics for BatchNorm).
fn objective(layers: &[LayerSpec], params: &Parameters, x: &Tensor, r: &Tensor) -> f64 {
    let mut p = params.clone();
    let (y, _) = nn::forward_train(layers, &mut p, x).expect("forward");
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn perturbed(t: &Tensor, i: usize, delta: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[i] += delta;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn with_param(params: &Parameters, layer: usize, slot: usize, value: Tensor) -> Parameters {
    let mut layers = params.layers().to_vec();
    layers[layer].trainable[slot].value = value;
    Parameters::from_layers(layers)
}

/// Central-difference check of `backward` for one layer list on one
/// random input. Every input element and every trainable scalar is probed.
pub fn check_layers(layers: &[LayerSpec], input_shape: &[usize], seed: u64) -> FdOutcome {
    let mut rng = SeededRng::new(seed);
    let params = nn::init_params(layers, &mut rng).unwrap();
    // random affine BatchNorm parameters so gamma/beta are not trivial
    let params = {
        let mut ls = params.layers().to_vec();
        for (spec, l) in layers.iter().zip(ls.iter_mut()) {
            if matches!(spec, LayerSpec::BatchNorm2d { .. }) {
                for t in l.trainable.iter_mut() {
                    t.value = rng_uniform(&mut rng, t.value.shape(), 0.5, 1.5).unwrap();
                }
            }
        }
        Parameters::from_layers(ls)
    };
    let x = rng_uniform(&mut rng, input_shape, -1.0, 1.0).unwrap();
    let mut p = params.clone();
    let (y, cache) = nn::forward_train(layers, &mut p, &x).unwrap();
    let r = rng_uniform(&mut rng, y.shape(), -1.0, 1.0).unwrap();
    let (dx, grads) = nn::backward(layers, &params, cache, &r).unwrap();

    let mut out = FdOutcome::default();
    let h = FD_STEP;
    for i in 0..x.len() {
        let fp = objective(layers, &params, &perturbed(&x, i, h), &r);
        let fm = objective(layers, &params, &perturbed(&x, i, -h), &r);
        out.record(dx.data()[i], (fp - fm) / (2.0 * h));
    }
    for (li, layer_grads) in grads.layers().iter().enumerate() {
        for (slot, g) in layer_grads.iter().enumerate() {
            let base = &params.layer(li).trainable[slot].value;
            for i in 0..base.len() {
                let pp = with_param(&params, li, slot, perturbed(base, i, h));
                let pm = with_param(&params, li, slot, perturbed(base, i, -h));
                let fd =
                    (objective(layers, &pp, &x, &r) - objective(layers, &pm, &x, &r)) / (2.0 * h);
                out.record(g.data()[i], fd);
            }
        }
    }
    out
}

/// Finite-difference check of `loss_and_grad` on random logits.
pub fn check_loss(kind: LossKind, batch: usize, classes: usize, seed: u64) -> FdOutcome {
    let mut rng = SeededRng::new(seed);
    let width = match kind {
        LossKind::SoftmaxCrossEntropy => classes,
        LossKind::SigmoidBinaryCrossEntropy => 1,
    };
    let logits = rng_uniform(&mut rng, &[batch, width], -4.0, 4.0).unwrap();
    let labels: Vec<usize> = (0..batch)
        .map(|_| rng.below(classes as u64) as usize)
        .collect();
    let (_, g) = nn::loss_and_grad(kind, &logits, &labels).unwrap();
    let mut out = FdOutcome::default();
    for i in 0..logits.len() {
        let lp = nn::loss_and_grad(kind, &perturbed(&logits, i, FD_STEP), &labels)
            .unwrap()
            .0;
        let lm = nn::loss_and_grad(kind, &perturbed(&logits, i, -FD_STEP), &labels)
            .unwrap()
            .0;
        out.record(g.data()[i], (lp - lm) / (2.0 * FD_STEP));
    }
    out
}

/// One small fixture per layer type: `(label, layers, batch input shape)`.
pub fn layer_fixtures() -> Vec<(&'static str, Vec<LayerSpec>, Vec<usize>)> {
    use splitsim::nn::Padding;
    vec![
        ("Dense", vec![LayerSpec::dense(5, 3)], vec![4, 5]),
        (
            "Conv2D valid",
            vec![LayerSpec::conv3x3(2, 3)],
            vec![2, 2, 5, 5],
        ),
        (
            "Conv2D same stride 2",
            vec![LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 2,
                kernel: [3, 3],
                stride: [2, 2],
                padding: Padding::Same,
            }],
            vec![2, 2, 5, 6],
        ),
        (
            "BatchNorm2D",
            vec![LayerSpec::batch_norm(3)],
            vec![3, 3, 3, 2],
        ),
        ("MaxPool2D", vec![LayerSpec::max_pool()], vec![2, 2, 4, 4]),
        ("ReLU", vec![LayerSpec::Relu], vec![3, 6]),
        (
            "Flatten",
            vec![LayerSpec::Flatten, LayerSpec::dense(8, 2)],
            vec![2, 2, 2, 2],
        ),
    ]
}

/// Brute-force metric definitions, written from the textbook formulas and
/// sharing no code with the library.
pub mod metric_oracle {
    use splitsim::rng::SeededRng;

    pub fn argmax(row: &[f64]) -> usize {
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter().position(|&v| v == best).unwrap()
    }

    pub fn accuracy(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = scores.iter().zip(labels).filter(|(s, &l)| argmax(s) == l).count();
        hits as f64 / labels.len() as f64
    }

    pub fn macro_f1(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> f64 {
        let pred: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
        let mut total = 0.0;
        for c in 0..classes {
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (&p, &l) in pred.iter().zip(labels) {
                match (p == c, l == c) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fneg += 1.0,
                    _ => {}
                }
            }
            // F1 = 2TP / (2TP + FP + FN), zero when the class never occurs
            let denom = 2.0 * tp + fp + fneg;
            if denom > 0.0 {
                total += 2.0 * tp / denom;
            }
        }
        total / classes as f64
    }

    /// `None` when chance agreement is 1.
    pub fn kappa(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Option<f64> {
        let n = labels.len() as f64;
        let pred: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
        let p_o = pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / n;
        let mut p_e = 0.0;
        for c in 0..classes {
            let truth = labels.iter().filter(|&&l| l == c).count() as f64;
            let guessed = pred.iter().filter(|&&p| p == c).count() as f64;
            p_e += (truth / n) * (guessed / n);
        }
        if (1.0 - p_e).abs() < 1e-15 {
            None
        } else {
            Some((p_o - p_e) / (1.0 - p_e))
        }
    }

    /// Kappa straight from a confusion matrix (rows = truth).
    pub fn kappa_from_counts(m: &[Vec<u64>]) -> f64 {
        let n: f64 = m.iter().flatten().sum::<u64>() as f64;
        let k = m.len();
        let p_o = (0..k).map(|i| m[i][i] as f64).sum::<f64>() / n;
        let p_e = (0..k)
            .map(|i| {
                let row: u64 = m[i].iter().sum();
                let col: u64 = m.iter().map(|r| r[i]).sum();
                row as f64 * col as f64
            })
            .sum::<f64>()
            / (n * n);
        (p_o - p_e) / (1.0 - p_e)
    }

    /// Probability that a random positive outscores a random negative,
    /// ties counting one half, by enumerating every pair.
    fn pairwise_auc(s: &[f64], pos: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    /// Average precision: for each distinct threshold `t`, high to low,
    /// classify `s >= t` as positive and add `ΔRecall · Precision`.
    fn threshold_ap(s: &[f64], pos: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = s.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let total_pos = pos.iter().filter(|&&p| p).count() as f64;
        let (mut ap, mut prev_recall) = (0.0, 0.0);
        for t in thresholds {
            let flagged: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
            let tp = flagged.iter().filter(|&&i| pos[i]).count() as f64;
            let recall = tp / total_pos;
            ap += (recall - prev_recall) * tp / flagged.len() as f64;
            prev_recall = recall;
        }
        ap
    }

    /// One-vs-rest mean over classes with both positives and negatives;
    /// two-class problems score class 1 only.
    fn ovr(scores: &[Vec<f64>], labels: &[usize], classes: usize, f: fn(&[f64], &[bool]) -> f64) -> Option<f64> {
        let which: Vec<usize> = if classes == 2 { vec![1] } else { (0..classes).collect() };
        let mut vals = Vec::new();
        for c in which {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            if pos.iter().any(|&p| p) && pos.iter().any(|&p| !p) {
                vals.push(f(&s, &pos));
            }
        }
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn auroc(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Option<f64> {
        ovr(scores, labels, classes, pairwise_auc)
    }

    pub fn auprc(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Option<f64> {
        ovr(scores, labels, classes, threshold_ap)
    }

    /// A random instance of 1..=20 samples over 2..=4 classes. Scores are
    /// drawn from a coarse grid so ties are common.
    pub fn random_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
        let mut rng = SeededRng::new(seed).derive("metric-oracle");
        let classes = 2 + rng.below(3) as usize;
        let n = 1 + rng.below(20) as usize;
        let levels = 2 + rng.below(8);
        let scores = (0..n)
            .map(|_| (0..classes).map(|_| rng.below(levels) as f64 / levels as f64).collect())
            .collect();
        let labels = (0..n).map(|_| rng.below(classes as u64) as usize).collect();
        (scores, labels, classes)
    }

    /// Worst absolute gap between the library and the oracles over
    /// `seeds` instances, and how many comparisons were made. Undefined
    /// values must be undefined on both sides.
    pub fn compare_over_seeds(seeds: u64) -> Result<(f64, usize), String> {
        use splitsim::metrics::{evaluate, F1Mode, ScoredPredictions};
        let (mut worst, mut compared) = (0.0f64, 0usize);
        for seed in 0..seeds {
            let (scores, labels, classes) = random_instance(seed);
            let pred = ScoredPredictions::new(scores.clone(), labels.clone()).map_err(|e| e.to_string())?;
            let got = evaluate(&pred, F1Mode::Macro).map_err(|e| e.to_string())?;
            let want = [
                ("accuracy", Some(accuracy(&scores, &labels))),
                ("auroc", auroc(&scores, &labels, classes)),
                ("auprc", auprc(&scores, &labels, classes)),
                ("f1", Some(macro_f1(&scores, &labels, classes))),
                ("kappa", kappa(&scores, &labels, classes)),
            ];
            for (name, w) in want {
                match (got.get(name), w) {
                    (Some(g), Some(w)) => {
                        worst = worst.max((g - w).abs());
                        compared += 1;
                    }
                    (None, None) => {}
                    (g, w) => return Err(format!("seed {seed} {name}: library {g:?}, oracle {w:?}")),
                }
            }
        }
        Ok((worst, compared))
    }
}
