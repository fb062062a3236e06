use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    SigmoidBinaryCrossEntropy,
}

fn check_logits(kind: LossKind, logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if logits.rank() != 2 {
        return Err(Error::dim(format!(
            "logits must be [batch, width], got {:?}",
            logits.shape()
        )));
    }
    let (batch, width) = (logits.shape()[0], logits.shape()[1]);
    if batch == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::dim(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let classes = match kind {
        LossKind::SoftmaxCrossEntropy => width,
        LossKind::SigmoidBinaryCrossEntropy => {
            if width != 1 {
                return Err(Error::dim(format!(
                    "binary loss needs width 1, got {width}"
                )));
            }
            2
        }
    };
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok((batch, width))
}

/// Batch-mean loss and its gradient with respect to the logits.
pub fn loss_and_grad(kind: LossKind, logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, width) = check_logits(kind, logits, labels)?;
    let inv_b = 1.0 / batch as f64;
    let mut grad = vec![0.0; batch * width];
    let mut total = 0.0;
    match kind {
        LossKind::SoftmaxCrossEntropy => {
            for (i, &label) in labels.iter().enumerate() {
                let row = logits.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
                let log_z = max + sum_exp.ln();
                total += log_z - row[label];
                let g = &mut grad[i * width..(i + 1) * width];
                for (c, (&z, gc)) in row.iter().zip(g.iter_mut()).enumerate() {
                    let p = (z - log_z).exp();
                    *gc = (p - if c == label { 1.0 } else { 0.0 }) * inv_b;
                }
            }
        }
        LossKind::SigmoidBinaryCrossEntropy => {
            for (i, &label) in labels.iter().enumerate() {
                let z = logits.data()[i];
                let y = label as f64;
                // log(1 + e^z) - y z, written to avoid overflow
                total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                grad[i] = (sigmoid(z) - y) * inv_b;
            }
        }
    }
    Ok((total * inv_b, Tensor::new(logits.shape().to_vec(), grad)?))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-sample class probabilities: softmax rows, or `[1 - p, p]` for the
/// binary loss.
pub fn class_scores(kind: LossKind, logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            match kind {
                LossKind::SoftmaxCrossEntropy => {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
                    let s: f64 = exps.iter().sum();
                    exps.into_iter().map(|e| e / s).collect()
                }
                LossKind::SigmoidBinaryCrossEntropy => {
                    let p = sigmoid(row[0]);
                    vec![1.0 - p, p]
                }
            }
        })
        .collect()
}
