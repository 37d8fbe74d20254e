//! Fully-connected networks with manual reverse-mode gradients.
//!
//! A [`Network`] is a chain of dense layers `z_l = W_l a_{l-1} + b_l`,
//! `a_l = act(z_l) * mask_l`. Masks implement inverted dropout on hidden
//! layers only; the output layer is always an identity layer producing
//! logits.
//!
//! Besides the usual backward pass the module provides a forward-mode
//! tangent (`J(x) v`) and its parameter adjoint, which the local-linearity
//! regularizer needs.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::math::RandomStream;

pub const MODEL_MAGIC: &[u8; 8] = b"SEPLABNN";
pub const MODEL_VERSION: u32 = 1;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative, with the ReLU subgradient at 0 taken as 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            t => Err(Error::format("activation", format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn relu(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Relu,
        }
    }

    pub fn identity(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Identity,
        }
    }
}

/// Dense layer. `weights` is row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<f64>, biases: Vec<f64>, activation: Activation) -> Self {
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.biases.len()
    }

    pub fn in_dim(&self) -> usize {
        if self.biases.is_empty() {
            0
        } else {
            self.weights.len() / self.biases.len()
        }
    }

    #[inline]
    fn affine(&self, a: &[f64], out: &mut Vec<f64>) {
        let n = a.len();
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(n)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + b),
        );
    }

    #[inline]
    fn linear(&self, a: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(a.len())
            .map(|row| row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// `W^T g`.
    #[inline]
    fn transpose_mul(&self, g: &[f64]) -> Vec<f64> {
        let n = self.in_dim();
        let mut out = vec![0.0; n];
        for (row, &gi) in self.weights.chunks_exact(n).zip(g) {
            if gi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += w * gi;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout scale factors (0 or `1/(1-p)`) for every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks(pub Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    generation: u64,
    pub mode: Mode,
    pub input: Vec<f64>,
    /// Pre-activations `z_l` per layer.
    pub pre: Vec<Vec<f64>>,
    /// Masked activations `a_l` per layer; the last entry equals the logits.
    pub post: Vec<Vec<f64>>,
    pub masks: Option<Masks>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.post.last().expect("network has at least one layer")
    }
}

/// Forward-mode tangent of one traced pass.
#[derive(Debug, Clone)]
pub struct Tangent {
    generation: u64,
    /// `inputs[0]` is the input direction, `inputs[l]` the tangent of `a_{l-1}`.
    pub inputs: Vec<Vec<f64>>,
    /// Tangent of each layer's pre-activation; the last entry is `J(x) v`.
    pub pre: Vec<Vec<f64>>,
}

impl Tangent {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, other: &Gradients, a: f64) {
        for (s, o) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in s.weights.iter_mut().zip(&o.weights) {
                *x += a * y;
            }
            for (x, y) in s.biases.iter_mut().zip(&o.biases) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= a);
            l.biases.iter_mut().for_each(|x| *x *= a);
        }
    }

    /// Parameters in the order of [`Network::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    dropout: f64,
    generation: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.input_dim == other.input_dim
            && self.dropout.to_bits() == other.dropout.to_bits()
    }
}

fn validate_layers(layers: &[Layer], input_dim: usize) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::invalid("a network needs at least one layer"));
    }
    if input_dim == 0 {
        return Err(Error::invalid("input dimension must be positive"));
    }
    let mut fan_in = input_dim;
    for (i, l) in layers.iter().enumerate() {
        if l.biases.is_empty() {
            return Err(Error::invalid(format!("layer {i} has zero width")));
        }
        if l.weights.len() != fan_in * l.biases.len() {
            return Err(Error::invalid(format!(
                "layer {i}: {} weights do not match {}x{}",
                l.weights.len(),
                l.biases.len(),
                fan_in
            )));
        }
        if !l.weights.iter().chain(&l.biases).all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
        }
        fan_in = l.biases.len();
    }
    if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
        return Err(Error::invalid("the output layer must use the identity activation"));
    }
    Ok(())
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_network(specs: &[LayerSpec], input_dim: usize, seed: u64) -> Result<Network> {
    if specs.is_empty() {
        return Err(Error::invalid("a network needs at least one layer"));
    }
    let mut rng = RandomStream::new(seed);
    let mut fan_in = input_dim;
    let mut layers = Vec::with_capacity(specs.len());
    for s in specs {
        let limit = (6.0 / (fan_in + s.width) as f64).sqrt();
        let weights = (0..fan_in * s.width).map(|_| rng.uniform(-limit, limit)).collect();
        layers.push(Layer::new(weights, vec![0.0; s.width], s.activation));
        fan_in = s.width;
    }
    Network::from_layers(layers, input_dim)
}

/// Hidden ReLU layers of the given widths followed by a linear output layer.
pub fn mlp_specs(hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    hidden
        .iter()
        .map(|&w| LayerSpec::relu(w))
        .chain(std::iter::once(LayerSpec::identity(classes)))
        .collect()
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>, input_dim: usize) -> Result<Self> {
        validate_layers(&layers, input_dim)?;
        Ok(Self {
            layers,
            input_dim,
            dropout: 0.0,
            generation: next_generation(),
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        check_dropout(rate)?;
        self.dropout = rate;
        Ok(self)
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        check_dropout(rate)?;
        self.dropout = rate;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Weights then biases of each layer, in layer order.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    /// Applies `f` to a copy of the layers and commits it if the result is
    /// still a valid, finite network. Outstanding traces become stale.
    pub fn modify(&mut self, f: impl FnOnce(&mut [Layer])) -> Result<()> {
        let mut layers = self.layers.clone();
        f(&mut layers);
        validate_layers(&layers, self.input_dim)?;
        self.layers = layers;
        self.generation = next_generation();
        Ok(())
    }

    /// Sets one flat parameter, returning its old value.
    pub(crate) fn set_param(&mut self, mut idx: usize, value: f64) -> f64 {
        self.generation = next_generation();
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return std::mem::replace(&mut l.weights[idx], value);
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return std::mem::replace(&mut l.biases[idx], value);
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range")
    }

    pub fn sample_masks(&self, rng: &mut RandomStream) -> Masks {
        let keep = 1.0 - self.dropout;
        let scale = 1.0 / keep;
        Masks(
            self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| {
                    (0..l.out_dim())
                        .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }

    /// Train mode draws fresh masks when the dropout rate is positive.
    pub fn forward(
        &self,
        x: &[f64],
        mode: Mode,
        rng: &mut RandomStream,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let masks = (mode == Mode::Train && self.dropout > 0.0).then(|| self.sample_masks(rng));
        let (logits, mut trace) = self.forward_with(x, masks.as_ref())?;
        trace.mode = mode;
        Ok((logits, trace))
    }

    /// Forward pass with explicit masks (`None` = evaluation).
    pub fn forward_with(&self, x: &[f64], masks: Option<&Masks>) -> Result<(Vec<f64>, ForwardTrace)> {
        check_dims(self.input_dim, x.len())?;
        if let Some(m) = masks {
            if m.0.len() != self.layers.len() - 1
                || m.0.iter().zip(&self.layers).any(|(v, l)| v.len() != l.out_dim())
            {
                return Err(Error::invalid("dropout masks do not match the network"));
            }
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let a_prev = if l == 0 { x } else { &post[l - 1] };
            let mut z = Vec::with_capacity(layer.out_dim());
            layer.affine(a_prev, &mut z);
            let mut a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            if let Some(m) = masks.and_then(|m| m.0.get(l)) {
                for (v, s) in a.iter_mut().zip(m) {
                    *v *= s;
                }
            }
            pre.push(z);
            post.push(a);
        }
        let logits = post.last().expect("at least one layer").clone();
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok((
            logits,
            ForwardTrace {
                generation: self.generation,
                mode: if masks.is_some() { Mode::Train } else { Mode::Eval },
                input: x.to_vec(),
                pre,
                post,
                masks: masks.cloned(),
            },
        ))
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.input_dim, x.len())?;
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.affine(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(a)
    }

    /// 1-based label of the largest logit (lowest index on ties).
    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        Ok(argmax(&self.logits(x)?) as u32 + 1)
    }

    fn check_trace(&self, generation: u64) -> Result<()> {
        if generation != self.generation {
            return Err(Error::invalid(
                "trace was recorded before the network parameters changed",
            ));
        }
        Ok(())
    }

    /// Parameter and input gradients of a scalar whose gradient with respect
    /// to the logits is `upstream`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros(self);
        let input = self.backprop(trace, upstream, Some(&mut grads))?;
        Ok((grads, input))
    }

    /// Gradient with respect to the input only.
    pub fn input_gradient(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backprop(trace, upstream, None)
    }

    fn backprop(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        self.check_trace(trace.generation)?;
        check_dims(self.class_count(), upstream.len())?;
        let mut g = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            if let Some(gr) = grads.as_deref_mut() {
                let lg = &mut gr.layers[l];
                let n = a_prev.len();
                for (i, &gi) in g.iter().enumerate() {
                    lg.biases[i] += gi;
                    if gi != 0.0 {
                        for (w, a) in lg.weights[i * n..(i + 1) * n].iter_mut().zip(a_prev) {
                            *w += gi * a;
                        }
                    }
                }
            }
            let mut ga = layer.transpose_mul(&g);
            if l > 0 {
                self.apply_local_derivative(trace, l - 1, &mut ga);
            }
            g = ga;
        }
        Ok(g)
    }

    /// Multiplies `v` by `act'(z_l) * mask_l`.
    fn apply_local_derivative(&self, trace: &ForwardTrace, l: usize, v: &mut [f64]) {
        let act = self.layers[l].activation;
        for (i, x) in v.iter_mut().enumerate() {
            *x *= act.derivative(trace.pre[l][i]);
        }
        if let Some(m) = trace.masks.as_ref().and_then(|m| m.0.get(l)) {
            for (x, s) in v.iter_mut().zip(m) {
                *x *= s;
            }
        }
    }

    /// Forward-mode derivative of the traced pass along `direction`.
    pub fn tangent(&self, trace: &ForwardTrace, direction: &[f64]) -> Result<Tangent> {
        self.check_trace(trace.generation)?;
        check_dims(self.input_dim, direction.len())?;
        let mut inputs = vec![direction.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let zdot = layer.linear(&inputs[l]);
            if l + 1 < self.layers.len() {
                let mut adot = zdot.clone();
                self.apply_local_derivative(trace, l, &mut adot);
                inputs.push(adot);
            }
            pre.push(zdot);
        }
        Ok(Tangent {
            generation: trace.generation,
            inputs,
            pre,
        })
    }

    /// Parameter gradient of `upstream . J(x) v` with the activation pattern
    /// of `trace` held fixed (the dependence through the pre-activations is
    /// handled separately by [`Network::backward`]).
    pub fn tangent_backward(
        &self,
        trace: &ForwardTrace,
        tangent: &Tangent,
        upstream: &[f64],
    ) -> Result<Gradients> {
        self.check_trace(trace.generation)?;
        self.check_trace(tangent.generation)?;
        check_dims(self.class_count(), upstream.len())?;
        let mut grads = Gradients::zeros(self);
        let mut g = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let a_prev = &tangent.inputs[l];
            let n = a_prev.len();
            let lg = &mut grads.layers[l];
            for (i, &gi) in g.iter().enumerate() {
                if gi != 0.0 {
                    for (w, a) in lg.weights[i * n..(i + 1) * n].iter_mut().zip(a_prev) {
                        *w += gi * a;
                    }
                }
            }
            if l > 0 {
                let mut ga = self.layers[l].transpose_mul(&g);
                self.apply_local_derivative(trace, l - 1, &mut ga);
                g = ga;
            }
        }
        Ok(grads)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.param_count() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.class_count() as u64).to_le_bytes());
        out.extend_from_slice(&self.dropout.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.in_dim() as u64).to_le_bytes());
            out.extend_from_slice(&(l.out_dim() as u64).to_le_bytes());
            out.push(l.activation.tag());
            for v in l.weights.iter().chain(&l.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8, "magic")? != MODEL_MAGIC {
            return Err(Error::format("magic", "not a SEPLABNN model file"));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::format("version", format!("unsupported model version {version}")));
        }
        let input_dim = r.u64("input dimension")? as usize;
        let classes = r.u64("class count")? as usize;
        let dropout = r.f64("dropout")?;
        let count = r.u64("layer count")? as usize;
        if count == 0 || count > 1 << 16 {
            return Err(Error::format("layer count", format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            let n_in = r.u64("layer input size")? as usize;
            let n_out = r.u64("layer output size")? as usize;
            let activation = Activation::from_tag(r.take(1, "activation")?[0])?;
            let nw = n_in
                .checked_mul(n_out)
                .filter(|&nw| nw <= bytes.len() / 8)
                .ok_or_else(|| Error::format("layer size", format!("layer {i} dimensions overflow")))?;
            let weights = (0..nw).map(|_| r.f64("weights")).collect::<Result<Vec<_>>>()?;
            let biases = (0..n_out).map(|_| r.f64("biases")).collect::<Result<Vec<_>>>()?;
            layers.push(Layer::new(weights, biases, activation));
        }
        if r.at != bytes.len() {
            return Err(Error::format("length", "trailing bytes after the last layer"));
        }
        let net = Network::from_layers(layers, input_dim)
            .map_err(|e| Error::format("layers", e.to_string()))?;
        if net.class_count() != classes {
            return Err(Error::format("class count", "header disagrees with the output layer"));
        }
        net.with_dropout(dropout)
            .map_err(|e| Error::format("dropout", e.to_string()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(field, "file is truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&net.to_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Network> {
    Network::from_bytes(&std::fs::read(path)?)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Cross-entropy of logits `z` against 1-based label `y`, with its gradient
/// `softmax(z) - e_y`.
pub fn cross_entropy(z: &[f64], y: u32) -> (f64, Vec<f64>) {
    let k = (y - 1) as usize;
    let lp = log_softmax(z);
    let mut g: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    g[k] -= 1.0;
    (-lp[k], g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the loss has a kink within one step.
    pub skipped_kinks: usize,
    pub passed: bool,
}

const FULL_CHECK_LIMIT: usize = 4096;
const SAMPLED_COORDS: usize = 512;

/// Mean evaluation-mode cross-entropy over a batch.
pub fn mean_cross_entropy(net: &Network, xs: &[Vec<f64>], ys: &[u32]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        total += cross_entropy(&net.logits(x)?, y).0;
    }
    Ok(total / xs.len() as f64)
}

/// Compares [`Network::backward`] on the mean cross-entropy with central
/// differences over every parameter and input coordinate (a random subset
/// of 512 for large problems).
pub fn grad_check(
    net: &Network,
    xs: &[Vec<f64>],
    ys: &[u32],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("grad_check needs a non-empty batch with one label per input"));
    }
    let mut params = Gradients::zeros(net);
    let mut inputs = Vec::with_capacity(xs.len());
    let scale = 1.0 / xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let (z, trace) = net.forward_with(x, None)?;
        let (_, up) = cross_entropy(&z, y);
        let (g, gi) = net.backward(&trace, &up)?;
        params.add_scaled(&g, scale);
        inputs.push(gi.into_iter().map(|v| v * scale).collect());
    }
    compare_gradients(
        net,
        xs,
        |n, xs| mean_cross_entropy(n, xs, ys),
        &params,
        &inputs,
        step,
        tol,
    )
}

/// Checks analytic gradients of an arbitrary deterministic scalar `loss`
/// against central differences. `inputs` may be empty to skip input
/// coordinates.
pub fn compare_gradients(
    net: &Network,
    xs: &[Vec<f64>],
    loss: impl Fn(&Network, &[Vec<f64>]) -> Result<f64>,
    params: &Gradients,
    inputs: &[Vec<f64>],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) || !(tol > 0.0) {
        return Err(Error::invalid("step and tol must be positive"));
    }
    let flat = params.flatten();
    check_dims(net.param_count(), flat.len())?;
    let n_params = flat.len();
    let n_inputs: usize = inputs.iter().map(Vec::len).sum();
    let total = n_params + n_inputs;
    let coords: Vec<usize> = if total <= FULL_CHECK_LIMIT {
        (0..total).collect()
    } else {
        let mut rng = RandomStream::new(0x9c);
        let mut all: Vec<usize> = (0..total).collect();
        rng.shuffle(&mut all);
        all.truncate(SAMPLED_COORDS);
        all.sort_unstable();
        all
    };

    let mut work = net.clone();
    let mut xs_work: Vec<Vec<f64>> = xs.to_vec();
    let f0 = loss(net, xs)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        passed: true,
    };
    for c in coords {
        let mut eval_at = |delta: f64| -> Result<f64> {
            if c < n_params {
                let old = work.set_param(c, 0.0);
                work.set_param(c, old + delta);
                let v = loss(&work, &xs_work);
                work.set_param(c, old);
                v
            } else {
                let (e, k) = locate(inputs, c - n_params);
                let old = xs_work[e][k];
                xs_work[e][k] = old + delta;
                let v = loss(&work, &xs_work);
                xs_work[e][k] = old;
                v
            }
        };
        let (fp, fm) = (eval_at(step)?, eval_at(-step)?);
        let (fph, fmh) = (eval_at(step / 2.0)?, eval_at(-step / 2.0)?);
        let curv = (fp - 2.0 * f0 + fm) / (step * step);
        let curv_half = (fph - 2.0 * f0 + fmh) / (step * step / 4.0);
        if (curv - curv_half).abs() > 0.25 * curv.abs().max(curv_half.abs()) + 1.0 {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        let analytic = if c < n_params {
            flat[c]
        } else {
            let (e, k) = locate(inputs, c - n_params);
            inputs[e][k]
        };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

fn locate(inputs: &[Vec<f64>], mut idx: usize) -> (usize, usize) {
    for (e, v) in inputs.iter().enumerate() {
        if idx < v.len() {
            return (e, idx);
        }
        idx -= v.len();
    }
    panic!("input coordinate out of range")
}
