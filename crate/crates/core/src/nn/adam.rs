use serde::{Deserialize, Serialize};

use super::params::{Gradients, Parameters};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam hyperparameters. Weight decay is the classic L2 form: `λ·w` is
/// added to the gradient before the moment updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig {
            learning_rate,
            weight_decay,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates mirroring a [`Parameters`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<Tensor>>,
    v: Vec<Vec<Tensor>>,
}

impl OptimizerState {
    pub fn new(params: &Parameters, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<Tensor>> = params
            .layers()
            .iter()
            .map(|l| {
                l.trainable
                    .iter()
                    .map(|t| Tensor::zeros(t.value.shape()))
                    .collect()
            })
            .collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Number of steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Scalars held in the moment buffers.
    pub fn element_count(&self) -> usize {
        self.m
            .iter()
            .chain(&self.v)
            .flatten()
            .map(Tensor::len)
            .sum()
    }

    /// Split into the states of layers `[0, cut)` and `[cut, end)`; both
    /// halves keep the step counter.
    pub fn split_at(&self, cut: usize) -> (OptimizerState, OptimizerState) {
        let part = |r: std::ops::Range<usize>| OptimizerState {
            config: self.config,
            step: self.step,
            m: self.m[r.clone()].to_vec(),
            v: self.v[r].to_vec(),
        };
        (part(0..cut), part(cut..self.m.len()))
    }

    /// One bias-corrected Adam update of every trainable tensor.
    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) -> Result<()> {
        if grads.layers().len() != self.m.len() || params.layer_count() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} layers, got {} parameter and {} gradient layers",
                self.m.len(),
                params.layer_count(),
                grads.layers().len()
            )));
        }
        for (i, (gs, layer)) in grads.layers().iter().zip(params.layers()).enumerate() {
            if gs.len() != layer.trainable.len() || gs.len() != self.m[i].len() {
                return Err(Error::dim(format!("layer {i}: tensor count mismatch")));
            }
            for ((g, w), m) in gs.iter().zip(&layer.trainable).zip(&self.m[i]) {
                if g.shape() != w.value.shape() || m.shape() != g.shape() {
                    return Err(Error::dim(format!(
                        "layer {i} {}: gradient {:?} vs parameter {:?}",
                        w.name,
                        g.shape(),
                        w.value.shape()
                    )));
                }
            }
        }
        let AdamConfig {
            learning_rate,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, ((ms, vs), gs)) in self
            .m
            .iter_mut()
            .zip(&mut self.v)
            .zip(grads.layers())
            .enumerate()
        {
            let layer = params.layer_mut(i);
            for (((m, v), g), w) in ms
                .iter_mut()
                .zip(vs.iter_mut())
                .zip(gs)
                .zip(&mut layer.trainable)
            {
                let wd = w.value.data_mut();
                for (((mk, vk), &gk), wk) in m
                    .data_mut()
                    .iter_mut()
                    .zip(v.data_mut().iter_mut())
                    .zip(g.data())
                    .zip(wd.iter_mut())
                {
                    let gk = gk + weight_decay * *wk;
                    *mk = beta1 * *mk + (1.0 - beta1) * gk;
                    *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                    let m_hat = *mk / c1;
                    let v_hat = *vk / c2;
                    *wk -= learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{LayerParams, NamedTensor};

    fn scalar_params(w: f64) -> Parameters {
        Parameters::from_layers(vec![LayerParams {
            trainable: vec![NamedTensor {
                name: "w".into(),
                value: Tensor::new(vec![1], vec![w]).unwrap(),
            }],
            buffers: vec![],
        }])
    }

    fn grad(g: f64) -> Gradients {
        Gradients::from_layers(vec![vec![Tensor::new(vec![1], vec![g]).unwrap()]])
    }

    fn value(p: &Parameters) -> f64 {
        p.layer(0).trainable[0].value.data()[0]
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = scalar_params(1.5);
        let mut opt = OptimizerState::new(&p, AdamConfig::new(0.1, 0.0));
        opt.step(&mut p, &grad(0.0)).unwrap();
        assert_eq!(value(&p), 1.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_params(0.0);
        let mut opt = OptimizerState::new(&p, AdamConfig::new(0.1, 0.0));
        opt.step(&mut p, &grad(1.0)).unwrap();
        assert!((value(&p) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    /// Straight-line scalar Adam used as the reference.
    fn reference(
        w0: f64,
        lr: f64,
        wd: f64,
        steps: usize,
        grad_of: impl Fn(f64) -> f64,
    ) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = grad_of(w) + wd * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_reference() {
        // f(w) = (w - 3)^2, f'(w) = 2 (w - 3)
        let d = |w: f64| 2.0 * (w - 3.0);
        let want = reference(0.5, 0.05, 1e-3, 3, d);
        let mut p = scalar_params(0.5);
        let mut opt = OptimizerState::new(&p, AdamConfig::new(0.05, 1e-3));
        for w in want {
            let g = d(value(&p));
            opt.step(&mut p, &grad(g)).unwrap();
            assert!((value(&p) - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar_params(0.0);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        let bad = Gradients::from_layers(vec![vec![Tensor::zeros(&[2])]]);
        assert!(matches!(opt.step(&mut p, &bad), Err(Error::Dimension(_))));
    }
}
