//! Sequential networks with hand-written forward and backward passes.

mod adam;
mod forward;
mod kernels;
mod layer;
mod loss;
mod model;
mod params;

pub use adam::{AdamConfig, OptimizerState};
pub use forward::{
    backward, backward_params, forward, forward_eval, forward_train, ForwardCache, Mode,
};
pub use layer::{LayerSpec, Padding};
pub use loss::{class_scores, loss_and_grad, sigmoid, LossKind};
pub use model::ModelSpec;
pub use params::{Gradients, LayerParams, NamedTensor, Parameters};

use serde::Serialize;

use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{rng_uniform, Tensor};

/// Fresh parameters: Dense/Conv weights uniform in `±sqrt(6 / fan_in)`
/// (variance `2 / fan_in`), zero biases, BatchNorm `gamma = 1`, `beta = 0`,
/// running mean 0 and variance 1. Layers draw from `rng` in order.
pub fn init_params(layers: &[LayerSpec], rng: &mut SeededRng) -> Result<Parameters> {
    let mut params = Parameters::zeros(layers);
    for (i, layer) in layers.iter().enumerate() {
        let fan_in = match *layer {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel[0] * kernel[1],
            LayerSpec::BatchNorm2d { .. } => {
                let p = params.layer_mut(i);
                p.trainable[0].value = Tensor::full(p.trainable[0].value.shape(), 1.0);
                continue;
            }
            _ => continue,
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        let p = params.layer_mut(i);
        let shape = p.trainable[0].value.shape().to_vec();
        p.trainable[0].value = rng_uniform(rng, &shape, -bound, bound)?;
    }
    Ok(params)
}

/// Trainable scalar count of a layer list.
pub fn count_params(layers: &[LayerSpec]) -> usize {
    layers.iter().map(LayerSpec::param_count).sum()
}

/// Estimated operations for one forward pass of a single sample; see
/// [`LayerSpec::flops`] for the counting convention.
pub fn estimate_flops(layers: &[LayerSpec], input_shape: &[usize]) -> Result<u64> {
    Ok(profile(layers, input_shape)?.iter().map(|r| r.flops).sum())
}

/// Per-layer cost breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub index: usize,
    pub layer: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub flops: u64,
}

pub fn profile(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<LayerCost>> {
    let shapes = model::layer_shapes(layers, input_shape)?;
    layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(LayerCost {
                index: i,
                layer: l.name(),
                output_shape: shapes[i + 1].clone(),
                params: l.param_count(),
                flops: l.flops(&shapes[i])?,
            })
        })
        .collect()
}

/// Per-sample shape after each layer (entry 0 is the input).
pub fn infer_shapes(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    model::layer_shapes(layers, input_shape)
}
