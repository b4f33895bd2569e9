//! Small feed-forward feature maps with exact reverse-mode gradients.
//!
//! A [`FeatureNet`] applies its activation to hidden layers only; the
//! output layer is linear. Gradients are taken of the scalar
//! L = sum_{i,k} out_grad[i,k] * output[i,k], so callers supply the
//! cotangent of whatever loss they are differentiating.

use crate::numkit::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatNetError {
    #[error("input width mismatch: net expects {expected}, batch has {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("cotangent shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    CotangentMismatch { expected_rows: usize, expected_cols: usize, rows: usize, cols: usize },
    #[error("non-finite gradient entry in {param}")]
    NonFiniteGradient { param: String },
    #[error("malformed net record: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FeatNetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(FeatNetError::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

/// Feed-forward net: widths give input dim, hidden dims, output dim.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    layer_widths: Vec<usize>,
    /// weights[l] has shape widths[l] x widths[l+1]
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Per-layer activations kept from a forward pass; consumed by [`backward`](FeatureNet::backward).
pub struct ForwardCache {
    /// layers[0] is the input batch, layers[L] the final output.
    layers: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.layers.last().unwrap()
    }
}

/// Gradients with respect to every net parameter.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &FeatureNet) -> Self {
        NetGrads {
            weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl FeatureNet {
    /// Glorot-uniform weights, zero biases, deterministic in the rng stream.
    pub fn new(layer_widths: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(layer_widths.len() >= 2, "need at least input and output widths");
        assert!(layer_widths.iter().all(|&w| w > 0));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_widths.len() - 1 {
            let (fan_in, fan_out) = (layer_widths[l], layer_widths[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound)));
            biases.push(vec![0.0; fan_out]);
        }
        FeatureNet { layer_widths: layer_widths.to_vec(), weights, biases, activation }
    }

    /// Single linear layer; used for one-hot inputs where the target
    /// features are exactly representable.
    pub fn linear(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        FeatureNet::new(&[input, output], Activation::Identity, rng)
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Flat copy of all parameters, weights row-major then biases per layer.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].data());
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut idx = 0;
        for l in 0..self.weights.len() {
            let wlen = self.weights[l].data().len();
            self.weights[l].data_mut().copy_from_slice(&params[idx..idx + wlen]);
            idx += wlen;
            let blen = self.biases[l].len();
            self.biases[l].copy_from_slice(&params[idx..idx + blen]);
            idx += blen;
        }
        assert_eq!(idx, params.len(), "parameter vector length mismatch");
    }

    /// Forward pass over a batch (rows are samples); the cache retains the
    /// per-layer activations for one matching backward call.
    pub fn forward(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.cols() != self.input_width() {
            return Err(FeatNetError::WidthMismatch {
                expected: self.input_width(),
                got: batch.cols(),
            });
        }
        let mut layers = Vec::with_capacity(self.weights.len() + 1);
        layers.push(batch.clone());
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let mut z = layers[l].matmul(&self.weights[l]);
            for i in 0..z.rows() {
                let row = z.row_mut(i);
                for (j, b) in self.biases[l].iter().enumerate() {
                    row[j] += b;
                }
            }
            if l < last {
                for v in z.data_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            layers.push(z);
        }
        Ok(ForwardCache { layers })
    }

    /// Output only, for callers that will not backpropagate.
    pub fn apply(&self, batch: &Matrix) -> Result<Matrix> {
        let mut cache = self.forward(batch)?;
        Ok(cache.layers.pop().unwrap())
    }

    /// Gradients of L = sum(out_grad .* output) with respect to all
    /// parameters, using the cache of the matching forward pass.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &Matrix) -> Result<NetGrads> {
        let out = cache.output();
        if out_grad.rows() != out.rows() || out_grad.cols() != out.cols() {
            return Err(FeatNetError::CotangentMismatch {
                expected_rows: out.rows(),
                expected_cols: out.cols(),
                rows: out_grad.rows(),
                cols: out_grad.cols(),
            });
        }
        let nl = self.weights.len();
        let mut g_weights = vec![Matrix::zeros(1, 1); nl];
        let mut g_biases = vec![Vec::new(); nl];
        let mut delta = out_grad.clone();
        for l in (0..nl).rev() {
            let input = &cache.layers[l];
            g_weights[l] = input.t_matmul(&delta);
            let mut gb = vec![0.0; delta.cols()];
            for i in 0..delta.rows() {
                for (j, g) in gb.iter_mut().enumerate() {
                    *g += delta[(i, j)];
                }
            }
            g_biases[l] = gb;
            if l > 0 {
                let mut prev = delta.matmul(&self.weights[l].transpose());
                let h = &cache.layers[l];
                for i in 0..prev.rows() {
                    for j in 0..prev.cols() {
                        prev[(i, j)] *= self.activation.derivative_from_output(h[(i, j)]);
                    }
                }
                delta = prev;
            }
        }
        Ok(NetGrads { weights: g_weights, biases: g_biases })
    }

    /// Serializes to a flat text record: header, widths, activation tag,
    /// then per layer the row-major weights and biases. Floats print in
    /// Rust's shortest round-trip form, so load is bit-exact.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("featnet v1\n");
        s.push_str("widths");
        for w in &self.layer_widths {
            s.push_str(&format!(" {w}"));
        }
        s.push('\n');
        s.push_str(&format!("activation {}\n", self.activation.tag()));
        for l in 0..self.weights.len() {
            s.push_str(&format!("layer {l}\n"));
            for i in 0..self.weights[l].rows() {
                let row: Vec<String> =
                    self.weights[l].row(i).iter().map(|v| format!("{v}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
            let b: Vec<String> = self.biases[l].iter().map(|v| format!("{v}")).collect();
            s.push_str(&b.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| FeatNetError::Parse("empty record".into()))?;
        if header.trim() != "featnet v1" {
            return Err(FeatNetError::Parse(format!("bad header '{header}'")));
        }
        let widths_line =
            lines.next().ok_or_else(|| FeatNetError::Parse("missing widths".into()))?;
        let mut parts = widths_line.split_whitespace();
        if parts.next() != Some("widths") {
            return Err(FeatNetError::Parse("expected widths line".into()));
        }
        let layer_widths: Vec<usize> = parts
            .map(|t| t.parse().map_err(|_| FeatNetError::Parse(format!("bad width '{t}'"))))
            .collect::<Result<_>>()?;
        if layer_widths.len() < 2 {
            return Err(FeatNetError::Parse("need at least two widths".into()));
        }
        let act_line =
            lines.next().ok_or_else(|| FeatNetError::Parse("missing activation".into()))?;
        let tag = act_line
            .strip_prefix("activation ")
            .ok_or_else(|| FeatNetError::Parse("expected activation line".into()))?;
        let activation = Activation::from_tag(tag.trim())?;

        let parse_floats = |line: &str, n: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| FeatNetError::Parse(format!("bad float '{t}'"))))
                .collect::<Result<_>>()?;
            if vals.len() != n {
                return Err(FeatNetError::Parse(format!(
                    "expected {n} values, got {}",
                    vals.len()
                )));
            }
            Ok(vals)
        };

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_widths.len() - 1 {
            let marker =
                lines.next().ok_or_else(|| FeatNetError::Parse(format!("missing layer {l}")))?;
            if marker.trim() != format!("layer {l}") {
                return Err(FeatNetError::Parse(format!("expected 'layer {l}', got '{marker}'")));
            }
            let (rows, cols) = (layer_widths[l], layer_widths[l + 1]);
            let mut w = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| FeatNetError::Parse(format!("missing weight row {i}")))?;
                let vals = parse_floats(line, cols)?;
                w.row_mut(i).copy_from_slice(&vals);
            }
            let bline =
                lines.next().ok_or_else(|| FeatNetError::Parse("missing bias line".into()))?;
            biases.push(parse_floats(bline, cols)?);
            weights.push(w);
        }
        Ok(FeatureNet { layer_widths, weights, biases, activation })
    }
}

/// Adam hyperparameters; defaults are the conventional ones.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, ..Default::default() }
    }
}

/// First/second-moment accumulators for one flat parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamSlot {
    pub fn new(len: usize) -> Self {
        AdamSlot { m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One bias-corrected update; `t` is the 1-based step counter.
    pub fn update(
        &mut self,
        hyper: &AdamHyper,
        t: u64,
        params: &mut [f64],
        grads: &[f64],
        param_name: &str,
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(FeatNetError::NonFiniteGradient { param: param_name.to_string() });
        }
        let bc1 = 1.0 - hyper.beta1.powi(t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(t as i32);
        for i in 0..params.len() {
            self.m[i] = hyper.beta1 * self.m[i] + (1.0 - hyper.beta1) * grads[i];
            self.v[i] = hyper.beta2 * self.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.epsilon);
        }
        Ok(())
    }
}

/// Adam state for a whole [`FeatureNet`]: one slot per weight matrix and
/// bias vector, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub hyper: AdamHyper,
    step: u64,
    w_slots: Vec<AdamSlot>,
    b_slots: Vec<AdamSlot>,
}

impl OptimizerState {
    pub fn new(net: &FeatureNet, hyper: AdamHyper) -> Self {
        OptimizerState {
            hyper,
            step: 0,
            w_slots: net.weights.iter().map(|w| AdamSlot::new(w.data().len())).collect(),
            b_slots: net.biases.iter().map(|b| AdamSlot::new(b.len())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam step on every parameter of `net`.
pub fn opt_step(state: &mut OptimizerState, net: &mut FeatureNet, grads: &NetGrads) -> Result<()> {
    state.step += 1;
    let t = state.step;
    for l in 0..net.weights.len() {
        state.w_slots[l].update(
            &state.hyper,
            t,
            net.weights[l].data_mut(),
            grads.weights[l].data(),
            &format!("layer {l} weights"),
        )?;
        state.b_slots[l].update(
            &state.hyper,
            t,
            &mut net.biases[l],
            &grads.biases[l],
            &format!("layer {l} biases"),
        )?;
    }
    Ok(())
}
