//! Dense feed-forward network with hand-written backpropagation and RMSProp.
//!
//! Layers are affine maps `z = x Wᵀ + b` followed by ReLU (hidden layers) or the
//! identity (output layer). Weights are stored `(out, in)`. Batches are row-major
//! `(batch, features)` matrices, one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Shape `(out, in)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Q-network: ReLU hidden layers and a linear output head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    /// Builds a network with layer sizes `arch = [input, hidden.., output]`.
    ///
    /// Every weight and bias of a layer with fan-in `m` is drawn uniformly from
    /// `[-1/sqrt(m), 1/sqrt(m)]`, layer by layer, weights row-major then biases.
    pub fn init<R: Rng + ?Sized>(arch: &[usize], rng: &mut R) -> Result<Self> {
        if arch.len() < 3 {
            return Err(Error::Config(format!(
                "architecture needs input, at least one hidden layer and output, got {arch:?}"
            )));
        }
        if arch.contains(&0) {
            return Err(Error::Config(format!("zero-sized layer in {arch:?}")));
        }
        let last = arch.len() - 2;
        let layers = arch
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
                let activation = if i == last { Activation::Identity } else { Activation::Relu };
                DenseLayer { weights, bias, activation }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Assembles a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != output dim {}",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if layer.input_dim() == 0 || layer.output_dim() == 0 {
                return Err(Error::Shape(format!("layer {i} has a zero dimension")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer sizes `[input, hidden.., output]`.
    pub fn arch(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::output_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(layer: &DenseLayer, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&layer.weights.t());
        z += &layer.bias;
        z
    }

    /// Network output for every row of `batch`, shape `(rows, output_dim)`.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        let mut layers = self.layers.iter();
        let first = layers.next().expect("non-empty");
        let mut a = Self::affine(first, &batch);
        first.activation.apply(&mut a);
        for layer in layers {
            let mut z = Self::affine(layer, &a.view());
            layer.activation.apply(&mut z);
            a = z;
        }
        Ok(a)
    }

    /// Mean squared error between `Q(s_i, a_i)` and constant targets, with exact
    /// gradients. Only the selected head of each row carries error signal.
    pub fn loss_and_grads(
        &self,
        states: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, GradientSet)> {
        self.check_batch(&states)?;
        let rows = states.nrows();
        if rows == 0 || actions.len() != rows || targets.len() != rows {
            return Err(Error::Shape(format!(
                "batch of {rows} rows with {} actions and {} targets",
                actions.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite target {t}")));
        }
        let out_dim = self.output_dim();
        if let Some(a) = actions.iter().find(|&&a| a >= out_dim) {
            return Err(Error::Shape(format!("action {a} outside {out_dim} output heads")));
        }

        // acts[l] is the input of layer l; acts[L] is the network output.
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(states.to_owned());
        for layer in &self.layers {
            let mut z = Self::affine(layer, &acts[acts.len() - 1].view());
            layer.activation.apply(&mut z);
            acts.push(z);
        }

        let output = &acts[self.layers.len()];
        let scale = 2.0 / rows as f64;
        let mut delta = Array2::<f64>::zeros((rows, out_dim));
        let mut loss = 0.0;
        for (i, (&a, &target)) in actions.iter().zip(targets).enumerate() {
            let err = output[[i, a]] - target;
            loss += err * err;
            delta[[i, a]] = scale * err;
        }
        loss /= rows as f64;

        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                // Post-activation is positive exactly where the pre-activation is,
                // so the ReLU mask can be read off the stored output.
                Zip::from(&mut delta).and(&acts[l + 1]).for_each(|d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let weights = delta.t().dot(&acts[l]);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weights);
            }
            grads.push(LayerGrad { weights, bias });
        }
        grads.reverse();
        Ok((loss, GradientSet { layers: grads }))
    }

    /// Frozen copy used as the target network.
    pub fn sync_target(&self) -> DenseNet {
        self.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-parameter partial derivatives, shaped like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGrad {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Self { layers }
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.dim() == l.bias.dim())
    }

    /// All entries, layer by layer, weights row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { lr: 1e-3, rho: 0.99, eps: 1e-8 }
    }
}

/// RMSProp without momentum or centering:
/// `v <- rho v + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    pub accum: GradientSet,
}

impl RmsProp {
    pub fn new(net: &DenseNet, config: RmsPropConfig) -> Self {
        Self { config, accum: GradientSet::zeros_like(net) }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &GradientSet) -> Result<()> {
        if !grads.matches(net) || !self.accum.matches(net) {
            return Err(Error::Shape("gradient/optimizer state does not match network".into()));
        }
        let RmsPropConfig { lr, rho, eps } = self.config;
        let update = |p: &mut f64, v: &mut f64, &g: &f64| {
            *v = rho * *v + (1.0 - rho) * g * g;
            *p -= lr * g / (v.sqrt() + eps);
        };
        for ((layer, acc), g) in net.layers.iter_mut().zip(&mut self.accum.layers).zip(&grads.layers) {
            Zip::from(&mut layer.weights).and(&mut acc.weights).and(&g.weights).for_each(update);
            Zip::from(&mut layer.bias).and(&mut acc.bias).and(&g.bias).for_each(update);
        }
        if !net.is_finite() {
            return Err(Error::Data("non-finite parameter after optimizer step".into()));
        }
        Ok(())
    }
}
