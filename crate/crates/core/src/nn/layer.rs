use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; the kernel must fit inside the input.
    #[default]
    Valid,
    /// `kernel - 1` zeros in total per spatial axis, the odd one on the
    /// bottom/right. Output extent is `ceil(input / stride)`.
    Same,
}

fn default_kernel() -> [usize; 2] {
    [3, 3]
}
fn default_unit_stride() -> [usize; 2] {
    [1, 1]
}
fn default_pool() -> [usize; 2] {
    [2, 2]
}
fn default_bn_eps() -> f64 {
    1e-5
}
fn default_bn_momentum() -> f64 {
    0.1
}

/// One layer of a sequential network. Shapes are per sample; the batch axis
/// is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "default_kernel")]
        kernel: [usize; 2],
        #[serde(default = "default_unit_stride")]
        stride: [usize; 2],
        #[serde(default)]
        padding: Padding,
    },
    BatchNorm2d {
        channels: usize,
        #[serde(default = "default_bn_eps")]
        eps: f64,
        #[serde(default = "default_bn_momentum")]
        momentum: f64,
    },
    MaxPool2d {
        #[serde(default = "default_pool")]
        kernel: [usize; 2],
        #[serde(default = "default_pool")]
        stride: [usize; 2],
    },
    Relu,
    Flatten,
}

/// Resolved spatial geometry of a convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    /// Zeros added before the first row / column.
    pub pad_before: [usize; 2],
    pub out_height: usize,
    pub out_width: usize,
}

impl Window {
    fn resolve(
        what: &str,
        input: &[usize],
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    ) -> Result<Window> {
        let &[channels, height, width] = input else {
            return Err(Error::dim(format!(
                "{what} expects a [channels, height, width] input, got {input:?}"
            )));
        };
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(Error::dim(format!("{what}: zero kernel or stride")));
        }
        let mut out = [0; 2];
        let mut pad_before = [0; 2];
        for (axis, extent) in [height, width].into_iter().enumerate() {
            let (k, s) = (kernel[axis], stride[axis]);
            let padded = match padding {
                Padding::Valid => extent,
                Padding::Same => {
                    pad_before[axis] = (k - 1) / 2;
                    extent + k - 1
                }
            };
            if padded < k {
                return Err(Error::dim(format!(
                    "{what}: kernel {kernel:?} does not fit input {input:?}"
                )));
            }
            out[axis] = (padded - k) / s + 1;
        }
        Ok(Window {
            channels,
            height,
            width,
            kernel,
            stride,
            pad_before,
            out_height: out[0],
            out_width: out[1],
        })
    }

    pub fn in_plane(&self) -> usize {
        self.height * self.width
    }

    pub fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn patch(&self) -> usize {
        self.channels * self.kernel[0] * self.kernel[1]
    }
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    /// 3x3, stride 1, valid padding.
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: default_kernel(),
            stride: default_unit_stride(),
            padding: Padding::Valid,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm2d {
            channels,
            eps: default_bn_eps(),
            momentum: default_bn_momentum(),
        }
    }

    /// 2x2 window, stride 2.
    pub fn max_pool() -> Self {
        LayerSpec::MaxPool2d {
            kernel: default_pool(),
            stride: default_pool(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Conv2d { .. } => "Conv2D",
            LayerSpec::BatchNorm2d { .. } => "BatchNorm2D",
            LayerSpec::MaxPool2d { .. } => "MaxPool2D",
            LayerSpec::Relu => "ReLU",
            LayerSpec::Flatten => "Flatten",
        }
    }

    pub(crate) fn window(&self, input: &[usize]) -> Result<Window> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let w = Window::resolve("Conv2D", input, kernel, stride, padding)?;
                if w.channels != in_channels {
                    return Err(Error::dim(format!(
                        "Conv2D expects {in_channels} input channels, got {input:?}"
                    )));
                }
                Ok(w)
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                Window::resolve("MaxPool2D", input, kernel, stride, Padding::Valid)
            }
            _ => Err(Error::dim(format!("{} has no spatial window", self.name()))),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::dim(format!(
                        "Dense expects input [{inputs}], got {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let w = self.window(input)?;
                Ok(vec![out_channels, w.out_height, w.out_width])
            }
            LayerSpec::BatchNorm2d { channels, .. } => {
                if input.len() != 3 || input[0] != channels {
                    return Err(Error::dim(format!(
                        "BatchNorm2D expects [{channels}, h, w], got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2d { .. } => {
                let w = self.window(input)?;
                Ok(vec![w.channels, w.out_height, w.out_width])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Names and shapes of trainable tensors, in storage order.
    pub fn trainable_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])]
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (
                    "weight",
                    vec![out_channels, in_channels, kernel[0], kernel[1]],
                ),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::BatchNorm2d { channels, .. } => {
                vec![("gamma", vec![channels]), ("beta", vec![channels])]
            }
            _ => vec![],
        }
    }

    /// Non-trainable state (BatchNorm running statistics).
    pub fn buffer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::BatchNorm2d { channels, .. } => vec![
                ("running_mean", vec![channels]),
                ("running_var", vec![channels]),
            ],
            _ => vec![],
        }
    }

    /// Closed-form trainable scalar count.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => kernel[0] * kernel[1] * in_channels * out_channels + out_channels,
            LayerSpec::BatchNorm2d { channels, .. } => 2 * channels,
            _ => 0,
        }
    }

    /// Forward-pass operation count for one sample.
    ///
    /// Convention: one op per multiply-accumulate plus one per bias add for
    /// Dense/Conv2D, four per element for BatchNorm2D, `k*k - 1`
    /// comparisons per pooled output, one per element for ReLU, none for
    /// Flatten.
    pub fn flops(&self, input: &[usize]) -> Result<u64> {
        let out = self.output_shape(input)?;
        let out_elems: usize = out.iter().product();
        let ops = match *self {
            LayerSpec::Dense { inputs, .. } => out_elems * (inputs + 1),
            LayerSpec::Conv2d { .. } => {
                let w = self.window(input)?;
                out_elems * (w.patch() + 1)
            }
            LayerSpec::BatchNorm2d { .. } => 4 * out_elems,
            LayerSpec::MaxPool2d { kernel, .. } => out_elems * (kernel[0] * kernel[1] - 1),
            LayerSpec::Relu => out_elems,
            LayerSpec::Flatten => 0,
        };
        Ok(ops as u64)
    }
}
