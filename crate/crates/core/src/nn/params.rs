use sha2::{Digest, Sha256};

use super::layer::LayerSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Tensors owned by one layer. Layers without parameters hold empty lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub trainable: Vec<NamedTensor>,
    /// Non-trainable state such as BatchNorm running statistics. Never
    /// touched by the optimizer.
    pub buffers: Vec<NamedTensor>,
}

impl LayerParams {
    pub(crate) fn get(&self, name: &str) -> &Tensor {
        self.trainable
            .iter()
            .chain(&self.buffers)
            .find(|t| t.name == name)
            .map(|t| &t.value)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub(crate) fn buffer_mut(&mut self, name: &str) -> &mut Tensor {
        self.buffers
            .iter_mut()
            .find(|t| t.name == name)
            .map(|t| &mut t.value)
            .unwrap_or_else(|| panic!("missing buffer {name}"))
    }
}

/// Parameters of a sequential (sub-)model, indexed by layer position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    layers: Vec<LayerParams>,
}

impl Parameters {
    pub fn from_layers(layers: Vec<LayerParams>) -> Self {
        Parameters { layers }
    }

    /// All-zero tensors shaped for `spec`; BatchNorm running variance is 1.
    pub fn zeros(spec: &[LayerSpec]) -> Self {
        let layers = spec
            .iter()
            .map(|l| LayerParams {
                trainable: l
                    .trainable_shapes()
                    .into_iter()
                    .map(|(name, shape)| NamedTensor {
                        name: name.into(),
                        value: Tensor::zeros(&shape),
                    })
                    .collect(),
                buffers: l
                    .buffer_shapes()
                    .into_iter()
                    .map(|(name, shape)| NamedTensor {
                        name: name.into(),
                        value: Tensor::full(&shape, if name == "running_var" { 1.0 } else { 0.0 }),
                    })
                    .collect(),
            })
            .collect();
        Parameters { layers }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &LayerParams {
        &self.layers[i]
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> &mut LayerParams {
        &mut self.layers[i]
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Checks that every tensor has the shape `spec` requires.
    pub fn check_against(&self, spec: &[LayerSpec]) -> Result<()> {
        if spec.len() != self.layers.len() {
            return Err(Error::dim(format!(
                "parameters cover {} layers, spec has {}",
                self.layers.len(),
                spec.len()
            )));
        }
        for (i, (l, p)) in spec.iter().zip(&self.layers).enumerate() {
            let want_t = l.trainable_shapes();
            let want_b = l.buffer_shapes();
            let ok = want_t.len() == p.trainable.len()
                && want_b.len() == p.buffers.len()
                && want_t
                    .iter()
                    .chain(&want_b)
                    .zip(p.trainable.iter().chain(&p.buffers))
                    .all(|((n, s), t)| *n == t.name && s.as_slice() == t.value.shape());
            if !ok {
                return Err(Error::dim(format!(
                    "layer {i} ({}) parameters do not match its spec",
                    l.name()
                )));
            }
        }
        Ok(())
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().map(|t| t.value.len()).sum()
    }

    /// Total scalars including buffers.
    pub fn element_count(&self) -> usize {
        self.trainable_count() + self.buffers().map(|t| t.value.len()).sum::<usize>()
    }

    pub fn trainable(&self) -> impl Iterator<Item = &NamedTensor> {
        self.layers.iter().flat_map(|l| l.trainable.iter())
    }

    pub fn buffers(&self) -> impl Iterator<Item = &NamedTensor> {
        self.layers.iter().flat_map(|l| l.buffers.iter())
    }

    pub(crate) fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers.iter_mut().map(|t| &mut t.value))
    }

    /// `(layers [0, cut), layers [cut, end))`.
    pub fn split_at(&self, cut: usize) -> (Parameters, Parameters) {
        let (a, b) = self.layers.split_at(cut);
        (
            Parameters { layers: a.to_vec() },
            Parameters { layers: b.to_vec() },
        )
    }

    pub fn concat(front: &Parameters, back: &Parameters) -> Parameters {
        Parameters {
            layers: front.layers.iter().chain(&back.layers).cloned().collect(),
        }
    }

    /// Every tensor, layer by layer, trainable before buffers.
    pub(crate) fn all_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.trainable.iter().chain(&l.buffers).map(|t| &t.value))
    }

    fn all_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| {
            l.trainable
                .iter_mut()
                .chain(l.buffers.iter_mut())
                .map(|t| &mut t.value)
        })
    }

    /// `Σ weight_i · params_i` over trainable tensors *and* buffers, summed
    /// in the order given.
    pub fn weighted_sum(items: &[(&Parameters, f64)]) -> Result<Parameters> {
        let Some((first, _)) = items.first() else {
            return Err(Error::Argument(
                "weighted sum of zero parameter sets".into(),
            ));
        };
        let mut out = (*first).clone();
        for t in out.all_tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let count = out.all_tensors().count();
        for (p, w) in items {
            if p.layers.len() != out.layers.len() || p.all_tensors().count() != count {
                return Err(Error::dim("parameter sets have different layouts"));
            }
            for (d, s) in out.all_tensors_mut().zip(p.all_tensors()) {
                d.axpy(*w, s)?;
            }
        }
        Ok(out)
    }

    /// Replace every buffer with the normalized weighted mean of the given
    /// buffer sets.
    pub(crate) fn set_buffers_weighted(&mut self, items: &[(&Parameters, f64)]) -> Result<()> {
        let total: f64 = items.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::Argument(
                "buffer weights must sum to a positive value".into(),
            ));
        }
        let mut acc: Vec<Tensor> = self
            .buffers()
            .map(|t| Tensor::zeros(t.value.shape()))
            .collect();
        for (p, w) in items {
            for (a, b) in acc.iter_mut().zip(p.buffers()) {
                a.axpy(w / total, &b.value)?;
            }
        }
        for (dst, src) in self.buffers_mut().zip(acc) {
            *dst = src;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Parameters) -> f64 {
        self.all_tensors()
            .zip(other.all_tensors())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// SHA-256 over the little-endian bytes of every tensor, trainable
    /// first then buffers, layer order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in self.trainable().chain(self.buffers()) {
            for v in t.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Gradients of the trainable tensors, laid out like
/// [`Parameters::trainable`] per layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(params: &Parameters) -> Self {
        Gradients {
            layers: params
                .layers()
                .iter()
                .map(|l| {
                    l.trainable
                        .iter()
                        .map(|t| Tensor::zeros(t.value.shape()))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<Vec<Tensor>>) -> Self {
        Gradients { layers }
    }

    pub fn layers(&self) -> &[Vec<Tensor>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &[Tensor] {
        &self.layers[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flatten()
    }

    pub fn element_count(&self) -> usize {
        self.iter().map(Tensor::len).sum()
    }

    pub fn split_at(&self, cut: usize) -> (Gradients, Gradients) {
        let (a, b) = self.layers.split_at(cut);
        (
            Gradients { layers: a.to_vec() },
            Gradients { layers: b.to_vec() },
        )
    }

    pub fn concat(front: &Gradients, back: &Gradients) -> Gradients {
        Gradients {
            layers: front.layers.iter().chain(&back.layers).cloned().collect(),
        }
    }

    /// `Σ weight_i · grads_i`, accumulated in slice order.
    pub fn weighted_sum(items: &[(&Gradients, f64)]) -> Result<Gradients> {
        let Some((first, _)) = items.first() else {
            return Err(Error::Argument("weighted sum of zero gradient sets".into()));
        };
        let mut out = Gradients {
            layers: first
                .layers
                .iter()
                .map(|l| l.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect(),
        };
        for (g, w) in items {
            if g.layers.len() != out.layers.len() {
                return Err(Error::dim("gradient sets have different layer counts"));
            }
            for (dl, sl) in out.layers.iter_mut().zip(&g.layers) {
                if dl.len() != sl.len() {
                    return Err(Error::dim("gradient sets have different tensor counts"));
                }
                for (d, s) in dl.iter_mut().zip(sl) {
                    d.axpy(*w, s)?;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.iter()
            .zip(other.iter())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}
