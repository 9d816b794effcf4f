use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::simplex::{softmax_in_place, SimplexVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Silu,
    Softmax,
    Sigmoid,
    Identity,
}

impl Activation {
    /// Byte code used by the checkpoint format.
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Silu => 1,
            Activation::Softmax => 2,
            Activation::Sigmoid => 3,
            Activation::Identity => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Silu,
            2 => Activation::Softmax,
            3 => Activation::Sigmoid,
            4 => Activation::Identity,
            _ => return None,
        })
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "relu" => Activation::Relu,
            "silu" => Activation::Silu,
            "softmax" => Activation::Softmax,
            "sigmoid" => Activation::Sigmoid,
            "identity" | "linear" | "none" => Activation::Identity,
            _ => return None,
        })
    }
}

/// One dense layer followed by its activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Encoder and decoder layer stacks. The encoder must end in a softmax, which
/// puts the latent code on the simplex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(encoder: Vec<LayerSpec>, decoder: Vec<LayerSpec>) -> Result<Self> {
        let spec = NetworkSpec { encoder, decoder };
        spec.validate()?;
        Ok(spec)
    }

    /// Dense stack used for the synthetic tabular experiments:
    /// `in -> 10 -> 5 -> latent (softmax)` and `latent -> 5 -> 10 -> in`,
    /// ReLU in between.
    pub fn synthetic(input_dim: usize, latent_dim: usize) -> Result<Self> {
        use Activation::*;
        Self::new(
            vec![
                LayerSpec::new(input_dim, 10, Relu),
                LayerSpec::new(10, 5, Relu),
                LayerSpec::new(5, latent_dim, Softmax),
            ],
            vec![
                LayerSpec::new(latent_dim, 5, Relu),
                LayerSpec::new(5, 10, Relu),
                LayerSpec::new(10, input_dim, Identity),
            ],
        )
    }

    /// Symmetric MLP: `hidden` widths on the way down, reversed on the way up.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(latent_dim);
        let encoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == widths.len() {
                    Activation::Softmax
                } else {
                    hidden_activation
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        widths.reverse();
        let decoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == widths.len() {
                    output_activation
                } else {
                    hidden_activation
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        Self::new(encoder, decoder)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::invalid("encoder and decoder need at least one layer each"));
        }
        for (name, stack) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, l) in stack.iter().enumerate() {
                if l.in_dim == 0 || l.out_dim == 0 {
                    return Err(Error::invalid(format!("{name} layer {i} has a zero dimension")));
                }
                if i > 0 && stack[i - 1].out_dim != l.in_dim {
                    return Err(Error::invalid(format!(
                        "{name} layer {i} expects {} inputs but the previous layer emits {}",
                        l.in_dim,
                        stack[i - 1].out_dim
                    )));
                }
                let is_head = name == "encoder" && i + 1 == stack.len();
                if (l.activation == Activation::Softmax) != is_head {
                    return Err(Error::invalid(
                        "softmax must be exactly the final encoder activation",
                    ));
                }
            }
        }
        if self.latent_dim() < 2 {
            return Err(Error::invalid("latent simplex needs at least two coordinates"));
        }
        if self.decoder[0].in_dim != self.latent_dim() {
            return Err(Error::invalid(format!(
                "decoder expects {} latent coordinates, encoder emits {}",
                self.decoder[0].in_dim,
                self.latent_dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.out_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.decoder.last().map_or(0, |l| l.out_dim)
    }

    /// Encoder layers followed by decoder layers.
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn layer_count(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }
}

/// Weight (`out x in`) and bias of one layer. Also used for gradients and
/// optimizer moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Dense {
            weight: DMatrix::zeros(spec.out_dim, spec.in_dim),
            bias: DVector::zeros(spec.out_dim),
        }
    }
}

/// Trainable parameters plus Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub layers: Vec<Dense>,
    pub first_moment: Vec<Dense>,
    pub second_moment: Vec<Dense>,
    pub step: u64,
}

impl ParamStore {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers: Vec<Dense> = spec.layers().map(Dense::zeros).collect();
        ParamStore::from_layers(layers)
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (in + out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let layers = spec
            .layers()
            .map(|l| {
                let limit = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
                let mut d = Dense::zeros(l);
                // fill row-major so the draw order matches the checkpoint layout
                for r in 0..l.out_dim {
                    for c in 0..l.in_dim {
                        d.weight[(r, c)] = rng.random_range(-limit..limit);
                    }
                }
                d
            })
            .collect();
        ParamStore::from_layers(layers)
    }

    /// Wraps parameters with fresh optimizer state.
    pub fn from_layers(layers: Vec<Dense>) -> Self {
        let zeros: Vec<Dense> = layers
            .iter()
            .map(|d| Dense {
                weight: DMatrix::zeros(d.weight.nrows(), d.weight.ncols()),
                bias: DVector::zeros(d.bias.len()),
            })
            .collect();
        ParamStore {
            first_moment: zeros.clone(),
            second_moment: zeros,
            layers,
            step: 0,
        }
    }

    pub fn check_shapes(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layer_count() {
            return Err(Error::invalid("parameter layer count does not match the network"));
        }
        for (d, l) in self.layers.iter().zip(spec.layers()) {
            if d.weight.shape() != (l.out_dim, l.in_dim) || d.bias.len() != l.out_dim {
                return Err(Error::invalid("parameter shapes do not match the network"));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|d| d.weight.len() + d.bias.len()).sum()
    }
}

/// Per-parameter gradients, same layout as [`ParamStore::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Gradients {
            layers: spec.layers().map(Dense::zeros).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|d| d.weight.iter().chain(d.bias.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Activations cached by a batched forward pass (one row per sample).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to each layer, encoder then decoder.
    pub inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<DMatrix<f64>>,
    /// Post-activation of each layer.
    pub post: Vec<DMatrix<f64>>,
    encoder_len: usize,
}

impl ForwardPass {
    /// Encoder logits `t`.
    pub fn logits(&self) -> &DMatrix<f64> {
        &self.pre[self.encoder_len - 1]
    }

    /// Latent codes `z = softmax(t)`.
    pub fn latent(&self) -> &DMatrix<f64> {
        &self.post[self.encoder_len - 1]
    }

    /// Reconstructions `x_hat`.
    pub fn reconstruction(&self) -> &DMatrix<f64> {
        self.post.last().expect("decoder has layers")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn activate(act: Activation, pre: &DMatrix<f64>) -> DMatrix<f64> {
    match act {
        Activation::Relu => pre.map(|v| v.max(0.0)),
        Activation::Silu => pre.map(|v| v * sigmoid(v)),
        Activation::Sigmoid => pre.map(sigmoid),
        Activation::Identity => pre.clone(),
        Activation::Softmax => {
            let mut out = pre.clone();
            let mut row = vec![0.0; pre.ncols()];
            for r in 0..pre.nrows() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = pre[(r, c)];
                }
                softmax_in_place(&mut row);
                for (c, v) in row.iter().enumerate() {
                    out[(r, c)] = *v;
                }
            }
            out
        }
    }
}

/// Maps the gradient w.r.t. a layer's output to the gradient w.r.t. its
/// pre-activation.
fn activation_backward(act: Activation, pre: &DMatrix<f64>, post: &DMatrix<f64>, upstream: &DMatrix<f64>) -> DMatrix<f64> {
    match act {
        Activation::Relu => upstream.zip_map(pre, |g, p| if p > 0.0 { g } else { 0.0 }),
        Activation::Silu => upstream.zip_map(pre, |g, p| {
            let s = sigmoid(p);
            g * s * (1.0 + p * (1.0 - s))
        }),
        Activation::Sigmoid => upstream.zip_map(post, |g, y| g * y * (1.0 - y)),
        Activation::Identity => upstream.clone(),
        Activation::Softmax => {
            // J = diag(z) - z z^T, applied row by row
            let mut out = upstream.clone();
            for r in 0..post.nrows() {
                let inner: f64 = (0..post.ncols()).map(|c| upstream[(r, c)] * post[(r, c)]).sum();
                for c in 0..post.ncols() {
                    out[(r, c)] = post[(r, c)] * (upstream[(r, c)] - inner);
                }
            }
            out
        }
    }
}

/// `input * W^T + b` with a fixed per-row summation order, so a sample's
/// output does not depend on the batch it is part of.
fn affine(input: &DMatrix<f64>, layer: &Dense) -> DMatrix<f64> {
    let xt = input.transpose();
    let wt = layer.weight.transpose();
    DMatrix::from_fn(input.nrows(), layer.weight.nrows(), |r, o| {
        let x = xt.column(r);
        let w = wt.column(o);
        let mut acc = layer.bias[o];
        for i in 0..x.len() {
            acc += x[i] * w[i];
        }
        acc
    })
}

/// Batched forward pass; `x` holds one sample per row.
pub fn forward(spec: &NetworkSpec, params: &ParamStore, x: &DMatrix<f64>) -> Result<ForwardPass> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} features, network expects {}",
            x.ncols(),
            spec.input_dim()
        )));
    }
    params.check_shapes(spec)?;
    let n = spec.layer_count();
    let mut pass = ForwardPass {
        inputs: Vec::with_capacity(n),
        pre: Vec::with_capacity(n),
        post: Vec::with_capacity(n),
        encoder_len: spec.encoder.len(),
    };
    let mut current = x.clone();
    for (layer, dense) in spec.layers().zip(&params.layers) {
        let pre = affine(&current, dense);
        let post = activate(layer.activation, &pre);
        pass.inputs.push(current);
        pass.pre.push(pre);
        current = post.clone();
        pass.post.push(post);
    }
    Ok(pass)
}

/// Single-sample forward pass returning `(t, z, x_hat)`.
pub fn forward_one(
    spec: &NetworkSpec,
    params: &ParamStore,
    x: &[f64],
) -> Result<(Vec<f64>, SimplexVector, Vec<f64>)> {
    let batch = DMatrix::from_row_slice(1, x.len(), x);
    let pass = forward(spec, params, &batch)?;
    let z = SimplexVector::new(pass.latent().iter().copied().collect())?;
    Ok((
        pass.logits().iter().copied().collect(),
        z,
        pass.reconstruction().iter().copied().collect(),
    ))
}

/// Runs only the encoder; rows of the result are latent codes.
pub fn encode(spec: &NetworkSpec, params: &ParamStore, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} features, network expects {}",
            x.ncols(),
            spec.input_dim()
        )));
    }
    params.check_shapes(spec)?;
    let mut current = x.clone();
    for (layer, dense) in spec.encoder.iter().zip(&params.layers) {
        current = activate(layer.activation, &affine(&current, dense));
    }
    Ok(current)
}

/// Runs only the decoder on latent codes (one per row).
pub fn decode(spec: &NetworkSpec, params: &ParamStore, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != spec.latent_dim() {
        return Err(Error::invalid(format!(
            "latent has {} coordinates, decoder expects {}",
            z.ncols(),
            spec.latent_dim()
        )));
    }
    params.check_shapes(spec)?;
    let mut current = z.clone();
    for (layer, dense) in spec.decoder.iter().zip(&params.layers[spec.encoder.len()..]) {
        current = activate(layer.activation, &affine(&current, dense));
    }
    Ok(current)
}

/// Backpropagates `d_recon` (gradient w.r.t. the reconstructions) and the
/// optional extra latent gradient `d_latent` (from a penalty on `z`) through
/// the cached pass.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamStore,
    pass: &ForwardPass,
    d_recon: &DMatrix<f64>,
    d_latent: Option<&DMatrix<f64>>,
) -> Result<Gradients> {
    if d_recon.shape() != pass.reconstruction().shape() {
        return Err(Error::invalid("reconstruction gradient shape mismatch"));
    }
    if let Some(dl) = d_latent {
        if dl.shape() != pass.latent().shape() {
            return Err(Error::invalid("latent gradient shape mismatch"));
        }
    }
    let layers: Vec<&LayerSpec> = spec.layers().collect();
    let mut grads = Gradients::zeros(spec);
    let mut upstream = d_recon.clone();
    for idx in (0..layers.len()).rev() {
        if idx + 1 == spec.encoder.len() {
            if let Some(dl) = d_latent {
                upstream += dl;
            }
        }
        let d_pre = activation_backward(layers[idx].activation, &pass.pre[idx], &pass.post[idx], &upstream);
        grads.layers[idx].weight = d_pre.transpose() * &pass.inputs[idx];
        grads.layers[idx].bias = d_pre.row_sum().transpose();
        if idx > 0 {
            upstream = &d_pre * &params.layers[idx].weight;
        }
    }
    Ok(grads)
}
