//! Sinusoidal coordinate MLPs with exact reverse-mode gradients and Adam.
//!
//! Hidden layers compute `sin(ω0·(W x + c))`; the last layer is affine with
//! no activation. Batches are split into fixed-size row chunks that are
//! evaluated in parallel; per-chunk gradients are combined with a pairwise
//! tree sum in chunk order, so results do not depend on the thread count.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per evaluation chunk. Fixed so reductions are reproducible.
pub const CHUNK_ROWS: usize = 256;

/// Frequencies `2^k π`, `k = 0..PE_FREQUENCIES`, of the positional encoding
/// used by [`Activation::ReluPe`].
pub const PE_FREQUENCIES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sine,
    Relu,
    /// ReLU MLP on `[sin(2^k π x), cos(2^k π x)]` features.
    ReluPe,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Sine => 0,
            Activation::Relu => 1,
            Activation::ReluPe => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Sine),
            1 => Some(Activation::Relu),
            2 => Some(Activation::ReluPe),
            _ => None,
        }
    }

    /// Width of the first layer's input for a raw coordinate dimension.
    pub fn encoded_dim(self, in_dim: usize) -> usize {
        match self {
            Activation::ReluPe => in_dim * 2 * PE_FREQUENCIES,
            _ => in_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirenConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub omega0: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl SirenConfig {
    pub fn new(in_dim: usize, out_dim: usize, hidden_sizes: Vec<usize>) -> Self {
        Self {
            in_dim,
            out_dim,
            hidden_sizes,
            omega0: 30.0,
            activation: Activation::Sine,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.omega0 = omega0;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.in_dim) {
            return Err(Error::invalid(format!(
                "coordinate networks take 1 or 2 inputs, got {}",
                self.in_dim
            )));
        }
        if self.out_dim == 0 {
            return Err(Error::invalid("output dimension must be at least 1"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be at least 1"));
        }
        if self.omega0 <= 0.0 || !self.omega0.is_finite() {
            return Err(Error::invalid(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }
}

/// One affine layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirenNet {
    config: SirenConfig,
    layers: Vec<Layer>,
}

/// Parameter gradients, one `(weight, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &SirenNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    /// Flat views in parameter order: layer 0 weight, layer 0 bias, layer 1
    /// weight, ...
    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }
}

/// Activations recorded by [`SirenNet::forward_with_tape`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    chunks: Vec<ChunkTape>,
    rows: usize,
}

#[derive(Debug, Clone)]
struct ChunkTape {
    // input to each layer (encoded coordinates for layer 0)
    layer_inputs: Vec<Array2<f64>>,
    // pre-activations of the hidden layers
    pre: Vec<Array2<f64>>,
}

impl SirenNet {
    /// SIREN initialization: first layer `U(±1/in)`, deeper layers
    /// `U(±√(6/fan_in)/ω0)`, zero biases. ReLU variants use `U(±√(6/fan_in))`
    /// throughout.
    pub fn init(config: SirenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut widths = vec![config.activation.encoded_dim(config.in_dim)];
        widths.extend(&config.hidden_sizes);
        widths.push(config.out_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = match config.activation {
                    Activation::Sine if i == 0 => 1.0 / fan_in as f64,
                    Activation::Sine => (6.0 / fan_in as f64).sqrt() / config.omega0,
                    Activation::Relu | Activation::ReluPe => (6.0 / fan_in as f64).sqrt(),
                };
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.random_range(-bound..=bound)
                });
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Assembles a network from explicit layers, checking the shape chain.
    pub fn from_layers(config: SirenConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.hidden_sizes.len() + 1 {
            return Err(Error::invalid(format!(
                "config declares {} layers, got {}",
                config.hidden_sizes.len() + 1,
                layers.len()
            )));
        }
        let mut expected_in = config.activation.encoded_dim(config.in_dim);
        for (i, layer) in layers.iter().enumerate() {
            let (rows, cols) = layer.weight.dim();
            let expected_out = config
                .hidden_sizes
                .get(i)
                .copied()
                .unwrap_or(config.out_dim);
            if cols != expected_in || rows != expected_out || layer.bias.len() != rows {
                return Err(Error::invalid(format!(
                    "layer {i} is {rows}x{cols} with {} biases, expected {expected_out}x{expected_in}",
                    layer.bias.len()
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
            expected_in = rows;
        }
        let layers = layers
            .into_iter()
            .map(|l| Layer {
                weight: l.weight.as_standard_layout().into_owned(),
                bias: l.bias,
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &SirenConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of weight matrices.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable flat views in the same order as [`Gradients::as_slices`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    /// Sets every bias to zero (the bias-free mode used by the Lipschitz
    /// certificate).
    pub fn zero_biases(&mut self) {
        for l in &mut self.layers {
            l.bias.fill(0.0);
        }
    }

    pub fn has_zero_biases(&self) -> bool {
        self.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0))
    }

    fn check_inputs(&self, inputs: &ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.config.in_dim {
            return Err(Error::invalid(format!(
                "network expects {}-dimensional inputs, got {}",
                self.config.in_dim,
                inputs.ncols()
            )));
        }
        Ok(())
    }

    fn encode(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self.config.activation {
            Activation::ReluPe => {
                let d = x.ncols();
                Array2::from_shape_fn((x.nrows(), d * 2 * PE_FREQUENCIES), |(r, f)| {
                    let dim = f / (2 * PE_FREQUENCIES);
                    let k = (f % (2 * PE_FREQUENCIES)) / 2;
                    let arg = (1u32 << k) as f64 * std::f64::consts::PI * x[[r, dim]];
                    if f % 2 == 0 {
                        arg.sin()
                    } else {
                        arg.cos()
                    }
                })
            }
            _ => x.to_owned(),
        }
    }

    fn activate(&self, z: &Array2<f64>) -> Array2<f64> {
        let w0 = self.config.omega0;
        match self.config.activation {
            Activation::Sine => z.mapv(|v| (w0 * v).sin()),
            Activation::Relu | Activation::ReluPe => z.mapv(|v| v.max(0.0)),
        }
    }

    fn affine(layer: &Layer, h: &Array2<f64>) -> Array2<f64> {
        let mut z = h.dot(&layer.weight.t());
        z += &layer.bias;
        z
    }

    fn forward_chunk(&self, x: ArrayView2<'_, f64>, record: bool) -> (Array2<f64>, Option<ChunkTape>) {
        let mut h = self.encode(x);
        let mut tape = record.then(|| ChunkTape {
            layer_inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        });
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &h);
            if i == last {
                if let Some(t) = tape.as_mut() {
                    t.layer_inputs.push(h);
                }
                return (z, tape);
            }
            let next = self.activate(&z);
            if let Some(t) = tape.as_mut() {
                t.layer_inputs.push(std::mem::replace(&mut h, next));
                t.pre.push(z);
            } else {
                h = next;
            }
        }
        unreachable!("networks have at least one layer")
    }

    fn chunk_ranges(rows: usize) -> Vec<(usize, usize)> {
        (0..rows)
            .step_by(CHUNK_ROWS)
            .map(|start| (start, (start + CHUNK_ROWS).min(rows)))
            .collect()
    }

    /// Evaluates the network on a `batch × in_dim` matrix of coordinates.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        let outs: Vec<Array2<f64>> = Self::chunk_ranges(inputs.nrows())
            .into_par_iter()
            .map(|(a, b)| self.forward_chunk(inputs.slice(s![a..b, ..]), false).0)
            .collect();
        Ok(concat_rows(outs, inputs.nrows(), self.config.out_dim))
    }

    /// Forward pass that keeps the activations needed by
    /// [`SirenNet::backward_with_tape`].
    pub fn forward_with_tape(&self, inputs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardTape)> {
        self.check_inputs(&inputs)?;
        let parts: Vec<(Array2<f64>, ChunkTape)> = Self::chunk_ranges(inputs.nrows())
            .into_par_iter()
            .map(|(a, b)| {
                let (out, tape) = self.forward_chunk(inputs.slice(s![a..b, ..]), true);
                (out, tape.expect("tape requested"))
            })
            .collect();
        let (outs, chunks): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let out = concat_rows(outs, inputs.nrows(), self.config.out_dim);
        Ok((
            out,
            ForwardTape {
                chunks,
                rows: inputs.nrows(),
            },
        ))
    }

    fn backward_chunk(&self, tape: &ChunkTape, upstream: ArrayView2<'_, f64>) -> Gradients {
        let w0 = self.config.omega0;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &tape.layer_inputs[i];
            grads.push(Layer {
                weight: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            });
            if i == 0 {
                break;
            }
            let mut dh = delta.dot(&layer.weight);
            let z = &tape.pre[i - 1];
            match self.config.activation {
                Activation::Sine => Zip::from(&mut dh).and(z).for_each(|d, &zv| *d *= w0 * (w0 * zv).cos()),
                Activation::Relu | Activation::ReluPe => {
                    Zip::from(&mut dh).and(z).for_each(|d, &zv| {
                        if zv <= 0.0 {
                            *d = 0.0
                        }
                    })
                }
            }
            delta = dh;
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Gradient of `⟨upstream, forward(inputs)⟩` using recorded activations.
    pub fn backward_with_tape(&self, tape: &ForwardTape, upstream: ArrayView2<'_, f64>) -> Result<Gradients> {
        if upstream.dim() != (tape.rows, self.config.out_dim) {
            return Err(Error::invalid(format!(
                "upstream is {:?}, expected ({}, {})",
                upstream.dim(),
                tape.rows,
                self.config.out_dim
            )));
        }
        let ranges = Self::chunk_ranges(tape.rows);
        if ranges.is_empty() {
            return Ok(Gradients::zeros_like(self));
        }
        let partial: Vec<Gradients> = ranges
            .into_par_iter()
            .zip(tape.chunks.par_iter())
            .map(|((a, b), chunk)| self.backward_chunk(chunk, upstream.slice(s![a..b, ..])))
            .collect();
        let mut total = tree_sum(partial);
        for l in &mut total.layers {
            if !l.weight.is_standard_layout() {
                l.weight = l.weight.as_standard_layout().into_owned();
            }
        }
        Ok(total)
    }

    /// Gradient of `⟨upstream, forward(inputs)⟩` with respect to every
    /// parameter, summed over the batch.
    pub fn backward(&self, inputs: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>) -> Result<Gradients> {
        if upstream.nrows() != inputs.nrows() {
            return Err(Error::invalid(format!(
                "{} inputs but {} upstream rows",
                inputs.nrows(),
                upstream.nrows()
            )));
        }
        let (_, tape) = self.forward_with_tape(inputs)?;
        self.backward_with_tape(&tape, upstream)
    }
}

fn concat_rows(parts: Vec<Array2<f64>>, rows: usize, cols: usize) -> Array2<f64> {
    if parts.len() == 1 {
        return parts.into_iter().next().expect("one part");
    }
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for p in parts {
        let n = p.nrows();
        out.slice_mut(s![at..at + n, ..]).assign(&p);
        at += n;
    }
    out
}

/// Pairwise sum in chunk order: `((g0+g1)+(g2+g3))+...`.
fn tree_sum(mut parts: Vec<Gradients>) -> Gradients {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add_assign(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().expect("at least one part")
}

/// Adam with bias correction (`β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// One accumulator pair per parameter tensor of the given lengths.
    pub fn new(lr: f64, tensor_lens: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. Non-finite gradients abort before any parameter
    /// changes; the error names the tensor (layer = tensor / 2 for networks)
    /// and element.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "Adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::invalid(format!("tensor {i} shape does not match the optimizer state")));
            }
            if let Some(idx) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    iteration: self.t,
                    tensor: i,
                    layer: i / 2,
                    index: idx,
                    detail: format!("gradient value {}", g[idx]),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
