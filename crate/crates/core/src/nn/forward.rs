use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::layer::LayerSpec;
use super::params::{Gradients, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

static NEXT_BATCH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum LayerCache {
    /// Layer input, needed for weight gradients.
    Input(Tensor),
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaxPool {
        argmax: Vec<u32>,
    },
    /// `true` where the ReLU passed its input through.
    ReluMask(Vec<bool>),
    Flatten,
}

/// Everything [`backward`] needs from one training-mode forward call.
///
/// `backward` consumes the cache, so a cache can be used at most once.
#[derive(Debug)]
pub struct ForwardCache {
    batch_id: u64,
    layer_count: usize,
    input_shapes: Vec<Vec<usize>>,
    output_shape: Vec<usize>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Unique id of the forward call that produced this cache.
    pub fn batch_id(&self) -> u64 {
        self.batch_id
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

fn check_input(layers: &[LayerSpec], params: &Parameters, x: &Tensor) -> Result<()> {
    if params.layer_count() != layers.len() {
        return Err(Error::dim(format!(
            "{} layers but parameters for {}",
            layers.len(),
            params.layer_count()
        )));
    }
    if x.rank() < 2 {
        return Err(Error::dim(format!(
            "input needs a leading batch axis, got {:?}",
            x.shape()
        )));
    }
    if !x.all_finite() {
        return Err(Error::Numeric("non-finite value in layer input".into()));
    }
    Ok(())
}

fn with_batch(batch: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample.len() + 1);
    s.push(batch);
    s.extend_from_slice(sample);
    s
}

/// Forward pass in training mode: BatchNorm uses batch statistics and
/// updates its running statistics in `params`.
pub fn forward_train(
    layers: &[LayerSpec],
    params: &mut Parameters,
    x: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    check_input(layers, params, x)?;
    let batch = x.rows();
    let mut caches = Vec::with_capacity(layers.len());
    let mut input_shapes = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        let sample = &h.shape()[1..];
        let out_sample = layer
            .output_shape(sample)
            .map_err(|e| Error::dim(format!("layer {i} ({}): {e}", layer.name())))?;
        input_shapes.push(h.shape().to_vec());
        let (y, cache) = layer_forward_train(layer, params, i, h, batch, &out_sample)?;
        caches.push(cache);
        h = y;
    }
    let cache = ForwardCache {
        batch_id: NEXT_BATCH_ID.fetch_add(1, Ordering::Relaxed),
        layer_count: layers.len(),
        input_shapes,
        output_shape: h.shape().to_vec(),
        layers: caches,
    };
    Ok((h, cache))
}

/// Mode-dispatching forward. Eval mode returns no cache and leaves
/// `params` untouched.
pub fn forward(
    layers: &[LayerSpec],
    params: &mut Parameters,
    x: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Option<ForwardCache>)> {
    match mode {
        Mode::Train => forward_train(layers, params, x).map(|(y, c)| (y, Some(c))),
        Mode::Eval => forward_eval(layers, params, x).map(|y| (y, None)),
    }
}

/// Forward pass in evaluation mode. Pure: BatchNorm uses running statistics
/// and nothing is cached or mutated.
pub fn forward_eval(layers: &[LayerSpec], params: &Parameters, x: &Tensor) -> Result<Tensor> {
    check_input(layers, params, x)?;
    let batch = x.rows();
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        let sample = &h.shape()[1..];
        let out_sample = layer
            .output_shape(sample)
            .map_err(|e| Error::dim(format!("layer {i} ({}): {e}", layer.name())))?;
        h = layer_forward_eval(layer, params, i, h, batch, &out_sample)?;
    }
    Ok(h)
}

fn dense_forward(params: &Parameters, i: usize, h: &Tensor) -> Result<Tensor> {
    let p = params.layer(i);
    matmul(h, p.get("weight"))?.add_row_vector(p.get("bias"))
}

fn layer_forward_eval(
    layer: &LayerSpec,
    params: &Parameters,
    i: usize,
    h: Tensor,
    batch: usize,
    out_sample: &[usize],
) -> Result<Tensor> {
    let out_shape = with_batch(batch, out_sample);
    match *layer {
        LayerSpec::BatchNorm2d { channels, eps, .. } => {
            let p = params.layer(i);
            let plane = h.row_len() / channels;
            let mean = p.get("running_mean").data();
            let inv_std: Vec<f64> = p
                .get("running_var")
                .data()
                .iter()
                .map(|v| 1.0 / (v + eps).sqrt())
                .collect();
            let mut y = h.into_data();
            kernels::bn_apply(
                &mut y,
                batch,
                channels,
                plane,
                mean,
                &inv_std,
                p.get("gamma").data(),
                p.get("beta").data(),
                false,
            );
            Tensor::new(out_shape, y)
        }
        _ => {
            // every other layer behaves identically in both modes
            let mut discard = None;
            stateless_forward(layer, params, i, h, batch, &out_shape, &mut discard)
        }
    }
}

/// Forward for layers without mode-dependent behaviour. Fills `cache` with
/// what backward needs.
fn stateless_forward(
    layer: &LayerSpec,
    params: &Parameters,
    i: usize,
    h: Tensor,
    batch: usize,
    out_shape: &[usize],
    cache: &mut Option<LayerCache>,
) -> Result<Tensor> {
    match *layer {
        LayerSpec::Dense { .. } => {
            let y = dense_forward(params, i, &h)?;
            *cache = Some(LayerCache::Input(h));
            Ok(y)
        }
        LayerSpec::Conv2d { out_channels, .. } => {
            let win = layer.window(&h.shape()[1..])?;
            let p = params.layer(i);
            let y = kernels::conv_forward(
                h.data(),
                batch,
                &win,
                p.get("weight").data(),
                p.get("bias").data(),
                out_channels,
            );
            *cache = Some(LayerCache::Input(h));
            Tensor::new(out_shape.to_vec(), y)
        }
        LayerSpec::MaxPool2d { .. } => {
            let win = layer.window(&h.shape()[1..])?;
            let (y, argmax) = kernels::maxpool_forward(h.data(), batch, &win);
            *cache = Some(LayerCache::MaxPool { argmax });
            Tensor::new(out_shape.to_vec(), y)
        }
        LayerSpec::Relu => {
            let mut y = h;
            let mut mask = Vec::with_capacity(y.len());
            for v in y.data_mut() {
                mask.push(*v > 0.0);
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
            *cache = Some(LayerCache::ReluMask(mask));
            Ok(y)
        }
        LayerSpec::Flatten => {
            *cache = Some(LayerCache::Flatten);
            h.into_reshaped(out_shape)
        }
        LayerSpec::BatchNorm2d { .. } => unreachable!("batch norm is mode dependent"),
    }
}

fn layer_forward_train(
    layer: &LayerSpec,
    params: &mut Parameters,
    i: usize,
    h: Tensor,
    batch: usize,
    out_sample: &[usize],
) -> Result<(Tensor, LayerCache)> {
    let out_shape = with_batch(batch, out_sample);
    match *layer {
        LayerSpec::BatchNorm2d {
            channels,
            eps,
            momentum,
        } => {
            let plane = h.row_len() / channels;
            let (mean, var) = kernels::channel_stats(h.data(), batch, channels, plane);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let p = params.layer(i);
            let mut y = h.into_data();
            let xhat = kernels::bn_apply(
                &mut y,
                batch,
                channels,
                plane,
                &mean,
                &inv_std,
                p.get("gamma").data(),
                p.get("beta").data(),
                true,
            );
            // running variance tracks the unbiased estimate
            let n = (batch * plane) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let p = params.layer_mut(i);
            for (r, m) in p
                .buffer_mut("running_mean")
                .data_mut()
                .iter_mut()
                .zip(&mean)
            {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in p.buffer_mut("running_var").data_mut().iter_mut().zip(&var) {
                *r = (1.0 - momentum) * *r + momentum * v * unbias;
            }
            Ok((
                Tensor::new(out_shape, y)?,
                LayerCache::BatchNorm { xhat, inv_std },
            ))
        }
        _ => {
            let mut cache = None;
            let y = stateless_forward(layer, params, i, h, batch, &out_shape, &mut cache)?;
            Ok((y, cache.expect("stateless layers always cache")))
        }
    }
}

/// Backward pass for the forward call that produced `cache`.
///
/// Returns the gradient with respect to the layer-list input and the
/// gradients of every trainable tensor.
pub fn backward(
    layers: &[LayerSpec],
    params: &Parameters,
    cache: ForwardCache,
    dy: &Tensor,
) -> Result<(Tensor, Gradients)> {
    let (dx, grads) = backward_impl(layers, params, cache, dy, true)?;
    Ok((dx.expect("input gradient requested"), grads))
}

/// Like [`backward`] but skips the input gradient, for layer lists whose
/// input is raw data.
pub fn backward_params(
    layers: &[LayerSpec],
    params: &Parameters,
    cache: ForwardCache,
    dy: &Tensor,
) -> Result<Gradients> {
    Ok(backward_impl(layers, params, cache, dy, false)?.1)
}

fn backward_impl(
    layers: &[LayerSpec],
    params: &Parameters,
    cache: ForwardCache,
    dy: &Tensor,
    need_input_grad: bool,
) -> Result<(Option<Tensor>, Gradients)> {
    if cache.layer_count != layers.len() || params.layer_count() != layers.len() {
        return Err(Error::Protocol(format!(
            "cache from a {}-layer forward used with a {}-layer model",
            cache.layer_count,
            layers.len()
        )));
    }
    if dy.shape() != cache.output_shape.as_slice() {
        return Err(Error::Protocol(format!(
            "upstream gradient {:?} does not match forward output {:?} (batch {})",
            dy.shape(),
            cache.output_shape,
            cache.batch_id
        )));
    }
    let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); layers.len()];
    let mut g = dy.clone();
    let ForwardCache {
        input_shapes,
        layers: caches,
        ..
    } = cache;
    for (i, (layer, lc)) in layers.iter().zip(caches).enumerate().rev() {
        let in_shape = &input_shapes[i];
        let batch = in_shape[0];
        let p = params.layer(i);
        let need_dx = need_input_grad || i > 0;
        let (dx, layer_grads) = match (layer, lc) {
            (LayerSpec::Dense { .. }, LayerCache::Input(x)) => {
                let w = p.get("weight");
                let dw = matmul(&x.transpose()?, &g)?;
                let db = g.sum_axis(0)?;
                let dx = if need_dx {
                    matmul(&g, &w.transpose()?)?
                } else {
                    Tensor::zeros(&[0])
                };
                (dx, vec![dw, db])
            }
            (LayerSpec::Conv2d { out_channels, .. }, LayerCache::Input(x)) => {
                let win = layer.window(&in_shape[1..])?;
                let w = p.get("weight");
                let (dx, dw, db) = kernels::conv_backward(
                    x.data(),
                    g.data(),
                    batch,
                    &win,
                    w.data(),
                    *out_channels,
                    need_dx,
                );
                let dx = if need_dx {
                    Tensor::new(in_shape.clone(), dx)?
                } else {
                    Tensor::zeros(&[0])
                };
                (
                    dx,
                    vec![
                        Tensor::new(w.shape().to_vec(), dw)?,
                        Tensor::new(vec![*out_channels], db)?,
                    ],
                )
            }
            (LayerSpec::BatchNorm2d { channels, .. }, LayerCache::BatchNorm { xhat, inv_std }) => {
                let plane = g.row_len() / channels;
                let mut dx = g;
                let (dgamma, dbeta) = kernels::bn_backward(
                    dx.data_mut(),
                    &xhat,
                    &inv_std,
                    p.get("gamma").data(),
                    batch,
                    *channels,
                    plane,
                );
                (
                    dx,
                    vec![
                        Tensor::new(vec![*channels], dgamma)?,
                        Tensor::new(vec![*channels], dbeta)?,
                    ],
                )
            }
            (LayerSpec::MaxPool2d { .. }, LayerCache::MaxPool { argmax }) => {
                let len = in_shape.iter().product();
                let dx = kernels::maxpool_backward(g.data(), &argmax, len);
                (Tensor::new(in_shape.clone(), dx)?, vec![])
            }
            (LayerSpec::Relu, LayerCache::ReluMask(mask)) => {
                let mut dx = g;
                for (v, &m) in dx.data_mut().iter_mut().zip(&mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                (dx, vec![])
            }
            (LayerSpec::Flatten, LayerCache::Flatten) => (g.into_reshaped(in_shape)?, vec![]),
            (layer, _) => {
                return Err(Error::Protocol(format!(
                    "cache entry for layer {i} does not belong to a {}",
                    layer.name()
                )))
            }
        };
        grads[i] = layer_grads;
        g = dx;
    }
    let dx = if need_input_grad { Some(g) } else { None };
    Ok((dx, Gradients::from_layers(grads)))
}
