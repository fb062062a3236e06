use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::loss::LossKind;
use crate::error::{Error, Result};

/// A sequential network: per-sample input shape, ordered layers and the
/// training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, loss: LossKind) -> Result<Self> {
        let spec = ModelSpec {
            input_shape,
            layers,
            loss,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks that layer shapes chain and the loss fits the output width.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        let out = self.output_shape()?;
        let width = match out.as_slice() {
            [w] => *w,
            other => {
                return Err(Error::Config(format!(
                    "model output must be a flat vector per sample, got {other:?}"
                )))
            }
        };
        match self.loss {
            LossKind::SigmoidBinaryCrossEntropy if width != 1 => Err(Error::Config(format!(
                "binary loss needs final width 1, got {width}"
            ))),
            LossKind::SoftmaxCrossEntropy if width < 2 => Err(Error::Config(format!(
                "softmax loss needs at least 2 outputs, got {width}"
            ))),
            _ => Ok(()),
        }
    }

    /// Per-sample shapes: entry 0 is the input, entry `i + 1` the output of
    /// layer `i`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        layer_shapes(&self.layers, &self.input_shape)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("at least the input shape"))
    }

    /// Number of classes scored by the model (2 for a single sigmoid unit).
    pub fn num_classes(&self) -> usize {
        match self.loss {
            LossKind::SigmoidBinaryCrossEntropy => 2,
            LossKind::SoftmaxCrossEntropy => self
                .output_shape()
                .ok()
                .and_then(|s| s.first().copied())
                .unwrap_or(0),
        }
    }

    pub fn param_count(&self) -> usize {
        super::count_params(&self.layers)
    }

    /// The convolutional image classifier: five 3x3 convolutions each
    /// followed by batch norm and ReLU, two 2x2 max-pools, then three
    /// fully-connected layers (128, 128, classes). Valid padding throughout,
    /// so a 28x28 input leaves 16x12x12 after the first pool.
    ///
    /// [`ModelSpec::IMAGE_CUT`] is the cut right after the first pool.
    pub fn image_conv(channels: usize, side: usize, classes: usize) -> Result<Self> {
        use LayerSpec as L;
        let block = |i: usize, o: usize| [L::conv3x3(i, o), L::batch_norm(o), L::Relu];
        let mut layers = Vec::new();
        layers.extend(block(channels, 16));
        layers.extend(block(16, 16));
        layers.push(L::max_pool());
        layers.extend(block(16, 64));
        layers.extend(block(64, 64));
        layers.extend(block(64, 64));
        layers.push(L::max_pool());
        layers.push(L::Flatten);
        // the flattened width depends on the input side
        let flat: usize = layer_shapes(&layers, &[channels, side, side])?
            .last()
            .map(|s| s.iter().product())
            .unwrap_or(0);
        layers.extend([
            L::dense(flat, 128),
            L::Relu,
            L::dense(128, 128),
            L::Relu,
            L::dense(128, classes),
        ]);
        ModelSpec::new(
            vec![channels, side, side],
            layers,
            LossKind::SoftmaxCrossEntropy,
        )
    }

    /// A lighter variant of [`ModelSpec::image_conv`] with the same client
    /// prefix and cut ([`ModelSpec::IMAGE_CUT`]) but a server side of one
    /// 32-channel conv block, a pool and two dense layers (64, classes).
    /// Roughly a third of the compute, for runs that must finish quickly.
    pub fn image_conv_compact(channels: usize, side: usize, classes: usize) -> Result<Self> {
        use LayerSpec as L;
        let block = |i: usize, o: usize| [L::conv3x3(i, o), L::batch_norm(o), L::Relu];
        let mut layers = Vec::new();
        layers.extend(block(channels, 16));
        layers.extend(block(16, 16));
        layers.push(L::max_pool());
        layers.extend(block(16, 32));
        layers.push(L::max_pool());
        layers.push(L::Flatten);
        let flat: usize = layer_shapes(&layers, &[channels, side, side])?
            .last()
            .map(|s| s.iter().product())
            .unwrap_or(0);
        layers.extend([L::dense(flat, 64), L::Relu, L::dense(64, classes)]);
        ModelSpec::new(vec![channels, side, side], layers, LossKind::SoftmaxCrossEntropy)
    }

    /// Index of the first server layer in [`ModelSpec::image_conv`].
    pub const IMAGE_CUT: usize = 7;

    /// The image client prefix exactly as tabulated: Conv2D, BatchNorm2D,
    /// Conv2D, BatchNorm2D, MaxPool2D, with no activation layers.
    pub fn image_client_prefix(channels: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv3x3(channels, 16),
            LayerSpec::batch_norm(16),
            LayerSpec::conv3x3(16, 16),
            LayerSpec::batch_norm(16),
            LayerSpec::max_pool(),
        ]
    }

    /// Fully-connected binary classifier with ReLU between hidden layers;
    /// `widths` lists the input width followed by hidden widths, the final
    /// single-logit layer is appended.
    pub fn mlp_binary(widths: &[usize]) -> Result<Self> {
        Self::mlp(widths, 1, LossKind::SigmoidBinaryCrossEntropy)
    }

    /// Fully-connected classifier: `widths[0]` inputs, hidden layers of the
    /// remaining widths, `outputs` logits.
    pub fn mlp(widths: &[usize], outputs: usize, loss: LossKind) -> Result<Self> {
        let Some((&input, hidden)) = widths.split_first() else {
            return Err(Error::Config("mlp needs an input width".into()));
        };
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec::dense(prev, h));
            layers.push(LayerSpec::Relu);
            prev = h;
        }
        layers.push(LayerSpec::dense(prev, outputs));
        ModelSpec::new(vec![input], layers, loss)
    }

    /// The 2808-64-32-32-1 discharge-prediction network. Cut at 1 to give
    /// the client only the first Dense layer.
    pub fn mlp_2808() -> Result<Self> {
        Self::mlp_binary(&[2808, 64, 32, 32])
    }
}

pub(crate) fn layer_shapes(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for (i, layer) in layers.iter().enumerate() {
        let next = layer
            .output_shape(shapes.last().expect("non-empty"))
            .map_err(|e| Error::dim(format!("layer {i} ({}): {e}", layer.name())))?;
        shapes.push(next);
    }
    Ok(shapes)
}
