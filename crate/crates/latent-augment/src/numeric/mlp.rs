//! Dense feed-forward network with hand-derived backprop.
//!
//! The architecture set is fixed (stacks of `x W + b` followed by an
//! elementwise activation), so gradients are written out per layer instead
//! of going through a general autodiff graph. Layout: weights are
//! `(d_in, d_out)` row-major, batches are `(batch, dim)` row-major, and a
//! layer computes `act(x W + b)`.

use crate::error::{Error, Result};
use crate::numeric::matrix::Matrix;
use crate::numeric::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Silu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Silu),
            2 => Ok(Activation::Identity),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the pre-activation value.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Multi-layer perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer parameter gradients, shapes mirroring [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            d_weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            d_biases: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }
}

/// Intermediate state of a cached forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// Input to each layer (index 0 is the batch itself).
    inputs: Vec<Matrix>,
    /// Pre-activation values per layer.
    pre_act: Vec<Matrix>,
    /// Inverted-dropout masks per layer output; empty when dropout is off.
    masks: Vec<Option<Matrix>>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl Mlp {
    /// Build a network from layer dimensions and one activation per layer.
    /// He-uniform init (fan-in) for relu/silu layers, Glorot-uniform for
    /// identity layers.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "mlp with {} layers needs {} activations, got {}",
                dims.len() - 1,
                dims.len() - 1,
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, &act) in activations.iter().enumerate() {
            let (d_in, d_out) = (dims[i], dims[i + 1]);
            let limit = match act {
                Activation::Relu | Activation::Silu => (6.0 / d_in as f64).sqrt(),
                Activation::Identity => (6.0 / (d_in + d_out) as f64).sqrt(),
            };
            let mut weight = Matrix::zeros(d_in, d_out);
            for v in weight.data_mut() {
                *v = (rng.next_f64() * 2.0 - 1.0) * limit;
            }
            layers.push(Layer {
                weight,
                bias: vec![0.0; d_out],
                activation: act,
            });
        }
        Ok(Mlp { layers })
    }

    /// Assemble from explicit layers; consecutive dims must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Total parameter count: sum over layers of (d_in + 1) * d_out.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| (l.in_dim() + 1) * l.out_dim())
            .sum()
    }

    /// Flat views over all parameter buffers, layer-major, weight then bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            let (w, b) = (&mut layer.weight, &mut layer.bias);
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.in_dim() * layer.out_dim());
            out.push(layer.out_dim());
        }
        out
    }

    /// Plain forward pass.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, mlp expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut pre = x.matmul(&layer.weight)?;
            pre.add_row_broadcast(&layer.bias);
            for v in pre.data_mut() {
                *v = layer.activation.apply(*v);
            }
            x = pre;
        }
        Ok(x)
    }

    /// Forward pass that records what `backward` needs. `dropout` applies an
    /// inverted-dropout mask to every layer output except the last; pass
    /// `None` for inference-equivalent behavior (no rng draws).
    pub fn forward_cached(
        &self,
        batch: &Matrix,
        dropout: Option<(f64, &mut Rng)>,
    ) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, mlp expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let (rate, mut rng) = match dropout {
            Some((r, rng)) if r > 0.0 => (r, Some(rng)),
            _ => (0.0, None),
        };
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_act = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut pre = x.matmul(&layer.weight)?;
            pre.add_row_broadcast(&layer.bias);
            inputs.push(x);
            let mut act = pre.clone();
            for v in act.data_mut() {
                *v = layer.activation.apply(*v);
            }
            pre_act.push(pre);
            let mask = if rate > 0.0 && li != last {
                let rng = rng.as_deref_mut().unwrap();
                let keep = 1.0 - rate;
                let mut m = Matrix::zeros(act.rows(), act.cols());
                for v in m.data_mut() {
                    *v = if rng.next_f64() < keep { 1.0 / keep } else { 0.0 };
                }
                for (a, &mv) in act.data_mut().iter_mut().zip(m.data()) {
                    *a *= mv;
                }
                Some(m)
            } else {
                None
            };
            masks.push(mask);
            x = act;
        }
        Ok(ForwardCache {
            inputs,
            pre_act,
            masks,
            output: x,
        })
    }

    /// Backprop through the cached pass. Returns parameter gradients and the
    /// gradient with respect to the batch input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols() {
            return Err(Error::Shape(format!(
                "upstream gradient {}x{} does not match output {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.output.rows(),
                cache.output.cols()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.masks[li] {
                for (d, &m) in delta.data_mut().iter_mut().zip(mask.data()) {
                    *d *= m;
                }
            }
            let pre = &cache.pre_act[li];
            for (d, &p) in delta.data_mut().iter_mut().zip(pre.data()) {
                *d *= layer.activation.derivative(p);
            }
            grads.d_weights[li] = cache.inputs[li].matmul_tn(&delta)?;
            grads.d_biases[li] = delta.column_sums();
            delta = delta.matmul_nt(&layer.weight)?;
        }
        Ok((grads, delta))
    }
}
