use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Linear => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

/// Architecture of a fully-connected network.
///
/// `layer_sizes` lists every width including input and output, so a network
/// with `n` weight layers has `n + 1` sizes and `n` activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Inverted dropout applied to hidden layer outputs in train mode.
    pub dropout: f64,
}

impl MlpSpec {
    /// ReLU hidden layers followed by `output` on the last layer.
    pub fn relu_net(input: usize, hidden: &[usize], out: usize, output: Activation, dropout: f64) -> Self {
        let mut layer_sizes = vec![input];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(out);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(output);
        MlpSpec { layer_sizes, activations, dropout }
    }

    pub fn n_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.activations.is_empty() {
            return bad("at least one layer is required".into());
        }
        if self.layer_sizes.len() != self.activations.len() + 1 {
            return bad(format!(
                "{} sizes do not match {} activations",
                self.layer_sizes.len(),
                self.activations.len()
            ));
        }
        if self.layer_sizes.contains(&0) {
            return bad("zero-width layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let last = self.activations.len() - 1;
        if self.activations[..last].contains(&Activation::Sigmoid) {
            return bad("sigmoid is only allowed on the output layer".into());
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Weights stored `n_in x n_out` row-major so a batch forward is `X * W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer { n_in, n_out, weights: vec![0.0; n_in * n_out], bias: vec![0.0; n_out] }
    }

    pub(crate) fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Per-layer parameter (or gradient) tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn zeros_like(spec: &MlpSpec) -> Self {
        Params { layers: spec.layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Layer::values_mut)
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.values_mut() {
            *a *= k;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A network: architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Params,
}

/// Intermediate values from a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Cache {
    /// Input to each layer (after dropout of the previous layer).
    inputs: Vec<Matrix>,
    /// Activated output of each layer, before dropout.
    outputs: Vec<Matrix>,
    /// Dropout multipliers for hidden layers in train mode.
    masks: Vec<Option<Vec<f64>>>,
}

impl Mlp {
    /// Uniform fan-in scaled initialization (He for ReLU layers), zero biases.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros_like(&spec);
        for (layer, act) in params.layers.iter_mut().zip(&spec.activations) {
            let gain = if *act == Activation::Relu { 6.0 } else { 3.0 };
            let bound = (gain / layer.n_in as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Params) -> Result<Self> {
        spec.validate()?;
        let expected = Params::zeros_like(&spec);
        let consistent = expected.layers.len() == params.layers.len()
            && expected.layers.iter().zip(&params.layers).all(|(e, p)| {
                e.n_in == p.n_in
                    && e.n_out == p.n_out
                    && p.weights.len() == p.n_in * p.n_out
                    && p.bias.len() == p.n_out
            });
        if !consistent {
            return Err(Error::InvalidSpec("parameter shapes do not match the spec".into()));
        }
        Ok(Mlp { spec, params })
    }

    /// Sets the last layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.params.layers.last_mut().expect("validated spec");
        last.weights.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: x.cols });
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows, layer.n_out);
        for r in 0..x.rows {
            z.row_mut(r).copy_from_slice(&layer.bias);
        }
        gemm(
            x.rows,
            layer.n_in,
            layer.n_out,
            &x.data,
            (layer.n_in as isize, 1),
            &layer.weights,
            (layer.n_out as isize, 1),
            1.0,
            &mut z.data,
        );
        z
    }

    /// Batched forward pass. In train mode hidden outputs go through inverted
    /// dropout with masks drawn from `rng`; otherwise the pass is deterministic.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix, train: bool, rng: &mut R) -> Result<(Matrix, Cache)> {
        self.check_input(x)?;
        let n = self.spec.n_layers();
        let mut cache = Cache {
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut h = x.clone();
        let keep = 1.0 - self.spec.dropout;
        for (i, (layer, act)) in self.params.layers.iter().zip(&self.spec.activations).enumerate() {
            let mut z = Self::affine(layer, &h);
            for v in &mut z.data {
                *v = act.apply(*v);
            }
            let hidden = i + 1 < n;
            let mask = if train && hidden && self.spec.dropout > 0.0 {
                Some(
                    (0..z.data.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect::<Vec<f64>>(),
                )
            } else {
                None
            };
            let next = match &mask {
                Some(m) => {
                    let data = z.data.iter().zip(m).map(|(v, k)| v * k).collect();
                    Matrix::from_vec(z.rows, z.cols, data)
                }
                None => z.clone(),
            };
            cache.inputs.push(std::mem::replace(&mut h, next));
            cache.outputs.push(z);
            cache.masks.push(mask);
        }
        Ok((h, cache))
    }

    /// Deterministic inference without a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (layer, act) in self.params.layers.iter().zip(&self.spec.activations) {
            let mut z = Self::affine(layer, &h);
            for v in &mut z.data {
                *v = act.apply(*v);
            }
            h = z;
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::from_vec(1, x.len(), x.to_vec()))?.data)
    }

    /// Gradients of `sum(output_grad .* output)` with respect to all
    /// parameters, given the cache of the matching forward pass.
    pub fn backward(&self, cache: &Cache, output_grad: &Matrix) -> Params {
        let n = self.spec.n_layers();
        let mut grads = Params::zeros_like(&self.spec);
        let mut upstream = output_grad.clone();
        for i in (0..n).rev() {
            let layer = &self.params.layers[i];
            let act = self.spec.activations[i];
            let out = &cache.outputs[i];
            // d(layer input to dropout) -> d(pre-activation)
            let mut dz = upstream;
            if let Some(mask) = &cache.masks[i] {
                for (g, k) in dz.data.iter_mut().zip(mask) {
                    *g *= k;
                }
            }
            for (g, y) in dz.data.iter_mut().zip(&out.data) {
                *g *= act.grad_from_output(*y);
            }
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            gemm(
                layer.n_in,
                x.rows,
                layer.n_out,
                &x.data,
                (1, layer.n_in as isize),
                &dz.data,
                (layer.n_out as isize, 1),
                0.0,
                &mut g.weights,
            );
            for r in 0..dz.rows {
                for (b, d) in g.bias.iter_mut().zip(dz.row(r)) {
                    *b += d;
                }
            }
            if i > 0 {
                let mut dx = Matrix::zeros(dz.rows, layer.n_in);
                gemm(
                    dz.rows,
                    layer.n_out,
                    layer.n_in,
                    &dz.data,
                    (layer.n_out as isize, 1),
                    &layer.weights,
                    (1, layer.n_out as isize),
                    0.0,
                    &mut dx.data,
                );
                upstream = dx;
            } else {
                upstream = Matrix::zeros(0, 0);
            }
        }
        grads
    }
}
