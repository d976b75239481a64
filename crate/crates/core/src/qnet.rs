//! Multilayer perceptron Q-function with hand-written backpropagation.
//!
//! Hidden layers use rectified-linear activations; the output layer is linear
//! and has one unit per action. Weights are stored input-major so the forward
//! pass can skip zero inputs (most of the action-history block is zero).

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::mdp::Transition;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TRLQ";
pub const CHECKPOINT_VERSION: u8 = 1;
/// Upper bound on layer count accepted by the checkpoint decoder.
const MAX_LAYERS: usize = 64;

#[derive(Debug, Error)]
pub enum QNetError {
    #[error("input has length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid layer dimensions {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("invalid update config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient encountered during update")]
    NonFiniteGradient,
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: unsupported version {0}")]
    BadVersion(u8),
    #[error("checkpoint: truncated ({0})")]
    Truncated(&'static str),
    #[error("checkpoint: header declares {expected} payload bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("checkpoint: non-finite parameter")]
    NonFiniteParameter,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// `weights[i * outputs + o]` connects input `i` to output `o`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.biases);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Parameter-shaped buffer, used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(&mut l.biases).for_each(|v| *v *= factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Parameters in checkpoint order (per layer: weights output-major, then biases).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        for o in 0..l.outputs {
            for i in 0..l.inputs {
                out.push(l.weights[i * l.outputs + o]);
            }
        }
        out.extend_from_slice(&l.biases);
    }
    out
}

/// Learning-rule settings for [`QNetwork::update_batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig {
    pub learning_rate: f64,
    pub discount: f64,
    /// Per-sample TD errors are clipped to `[-td_clip, td_clip]`.
    pub td_clip: f64,
}

// With one batch per episode, smaller step sizes leave the network close to
// its initialisation after 25 epochs on a few hundred scenes.
impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            discount: 0.9,
            td_clip: 5.0,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<(), QNetError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(QNetError::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(QNetError::InvalidConfig(format!("discount {} must lie in [0, 1)", self.discount)));
        }
        if self.td_clip.is_nan() || self.td_clip <= 0.0 {
            return Err(QNetError::InvalidConfig(format!("td_clip {} must be positive", self.td_clip)));
        }
        Ok(())
    }
}

/// Bootstrap target: `r` for terminal transitions, else `r + γ·max next_q`.
pub fn td_target(reward: f64, next_q: &[f64], terminal: bool, discount: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + discount * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

impl QNetwork {
    /// Random network: weights uniform in ±1/√fan_in, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self, QNetError> {
        let mut net = Self::zeros(dims)?;
        for l in &mut net.layers {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, QNetError> {
        if dims.len() < 2 || dims.len() > MAX_LAYERS + 1 || dims.contains(&0) {
            return Err(QNetError::InvalidDims(dims.to_vec()));
        }
        Ok(Self {
            layers: dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect(),
        })
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut k = index;
        for l in &mut self.layers {
            let nw = l.weights.len();
            if k < nw {
                let (o, i) = (k / l.inputs, k % l.inputs);
                return &mut l.weights[i * l.outputs + o];
            }
            k -= nw;
            if k < l.biases.len() {
                return &mut l.biases[k];
            }
            k -= l.biases.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn check_input(&self, input: &[f64]) -> Result<(), QNetError> {
        if input.len() != self.input_dim() {
            return Err(QNetError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, QNetError> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            l.forward_into(&cur, &mut next);
            if k < last {
                relu(&mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Post-activation outputs of every layer.
    fn trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let x = if k == 0 { input } else { &acts[k - 1] };
            let mut out = Vec::with_capacity(l.outputs);
            l.forward_into(x, &mut out);
            if k < last {
                relu(&mut out);
            }
            acts.push(out);
        }
        acts
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    /// Accumulates `d_out`-weighted parameter gradients of the output into `grads`.
    fn backprop_into(&self, input: &[f64], acts: &[Vec<f64>], d_out: &[f64], grads: &mut Gradients) {
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let g = &mut grads.layers[k];
            let x: &[f64] = if k == 0 { input } else { &acts[k - 1] };
            for (gb, d) in g.biases.iter_mut().zip(&delta) {
                *gb += d;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut g.weights[i * l.outputs..(i + 1) * l.outputs];
                for (gw, d) in row.iter_mut().zip(&delta) {
                    *gw += xi * d;
                }
            }
            if k == 0 {
                break;
            }
            // Previous layer is rectified: its output is zero exactly where the
            // derivative is zero.
            let prev: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, &xi)| {
                    if xi > 0.0 {
                        let row = &l.weights[i * l.outputs..(i + 1) * l.outputs];
                        row.iter().zip(&delta).map(|(w, d)| w * d).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
            delta = prev;
        }
    }

    /// Gradient of `Q(input, action)` with respect to every parameter.
    pub fn action_gradient(&self, input: &[f64], action: usize) -> Result<Gradients, QNetError> {
        self.check_input(input)?;
        let acts = self.trace(input);
        let mut d_out = vec![0.0; self.output_dim()];
        d_out[action] = 1.0;
        let mut grads = self.zero_gradients();
        self.backprop_into(input, &acts, &d_out, &mut grads);
        Ok(grads)
    }

    /// `θ += scale · grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, scale: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w += scale * d;
            }
            for (b, d) in l.biases.iter_mut().zip(&g.biases) {
                *b += scale * d;
            }
        }
    }

    /// Mean over the batch of `δ·∇Q(s, a)`, where δ is the clipped TD error,
    /// together with the mean squared clipped TD error. This is the descent
    /// direction of the squared TD loss with the bootstrap target held
    /// constant; the target is evaluated with `target` when given, else with
    /// this network.
    pub fn td_gradients(
        &self,
        batch: &[&Transition],
        cfg: &UpdateConfig,
        target: Option<&QNetwork>,
    ) -> Result<(Gradients, f64), QNetError> {
        cfg.validate()?;
        if batch.is_empty() {
            return Err(QNetError::EmptyBatch);
        }
        let mut grads = self.zero_gradients();
        let mut loss = 0.0;
        let mut d_out = vec![0.0; self.output_dim()];
        for t in batch {
            let input = t.state.network_input();
            self.check_input(&input)?;
            let next_q = if t.terminal {
                Vec::new()
            } else {
                target.unwrap_or(self).forward(&t.next_state.network_input())?
            };
            let y = td_target(t.reward.value(), &next_q, t.terminal, cfg.discount);
            let acts = self.trace(&input);
            let q = acts.last().expect("output layer")[t.action.id()];
            let td = (y - q).clamp(-cfg.td_clip, cfg.td_clip);
            loss += td * td;
            if td != 0.0 {
                d_out.fill(0.0);
                d_out[t.action.id()] = td;
                self.backprop_into(&input, &acts, &d_out, &mut grads);
            }
        }
        if !grads.all_finite() {
            return Err(QNetError::NonFiniteGradient);
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((grads, loss / n))
    }

    /// One plain gradient step on the mean squared TD error with per-sample
    /// clipping (see [`QNetwork::td_gradients`]). Returns the pre-update mean
    /// of the squared clipped TD errors.
    pub fn update_batch(
        &mut self,
        batch: &[&Transition],
        cfg: &UpdateConfig,
        target: Option<&QNetwork>,
    ) -> Result<f64, QNetError> {
        let (grads, loss) = self.td_gradients(batch, cfg, target)?;
        self.apply_gradients(&grads, cfg.learning_rate);
        Ok(loss)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.dims();
        let mut out = Vec::with_capacity(9 + 4 * dims.len() + 8 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a checkpoint. The header is validated against the payload length
    /// before anything proportional to the declared dimensions is allocated.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QNetError> {
        let mut cur = bytes;
        let magic = take(&mut cur, 4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(QNetError::BadMagic);
        }
        let version = take(&mut cur, 1, "version")?[0];
        if version != CHECKPOINT_VERSION {
            return Err(QNetError::BadVersion(version));
        }
        let layer_count = read_u32(&mut cur, "layer count")? as usize;
        if layer_count == 0 || layer_count > MAX_LAYERS {
            return Err(QNetError::InvalidDims(vec![layer_count]));
        }
        let dims: Vec<usize> = (0..=layer_count)
            .map(|_| read_u32(&mut cur, "dimensions").map(|d| d as usize))
            .collect::<Result<_, _>>()?;
        if dims.contains(&0) {
            return Err(QNetError::InvalidDims(dims));
        }
        let params = dims
            .windows(2)
            .try_fold(0usize, |acc, d| d[0].checked_mul(d[1])?.checked_add(d[1])?.checked_add(acc))
            .ok_or_else(|| QNetError::InvalidDims(dims.clone()))?;
        let expected = params.checked_mul(8).ok_or_else(|| QNetError::InvalidDims(dims.clone()))?;
        if cur.len() != expected {
            return Err(QNetError::PayloadLength {
                expected,
                found: cur.len(),
            });
        }
        let mut net = Self::zeros(&dims)?;
        for (k, chunk) in cur.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !v.is_finite() {
                return Err(QNetError::NonFiniteParameter);
            }
            *net.param_mut(k) = v;
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), QNetError> {
        crate::io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, QNetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn take<'a>(cur: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], QNetError> {
    if cur.len() < n {
        return Err(QNetError::Truncated(what));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

fn read_u32(cur: &mut &[u8], what: &'static str) -> Result<u32, QNetError> {
    Ok(u32::from_le_bytes(take(cur, 4, what)?.try_into().expect("4 bytes")))
}

/// Adam moment estimates for one network. Steps follow the ascent direction
/// returned by [`QNetwork::td_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    first: Gradients,
    second: Gradients,
    steps: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(net: &QNetwork) -> Self {
        Self {
            first: net.zero_gradients(),
            second: net.zero_gradients(),
            steps: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients, learning_rate: f64) {
        self.steps = self.steps.saturating_add(1);
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        let layers = net.layers.iter_mut().zip(&grads.layers).zip(self.first.layers.iter_mut().zip(&mut self.second.layers));
        for ((l, g), (m, v)) in layers {
            let params = l.weights.iter_mut().chain(&mut l.biases);
            let grad = g.weights.iter().chain(&g.biases);
            let moments = m.weights.iter_mut().chain(&mut m.biases).zip(v.weights.iter_mut().chain(&mut v.biases));
            for ((p, &d), (mi, vi)) in params.zip(grad).zip(moments) {
                *mi = b1 * *mi + (1.0 - b1) * d;
                *vi = b2 * *vi + (1.0 - b2) * d * d;
                *p += learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Step used by [`grad_check`]'s central differences.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Largest relative error between the analytic gradient of `Q(input, action)`
/// and central finite differences over all parameters. The denominator is
/// floored at 1e-6, so vanishing entries are compared on an absolute scale.
pub fn grad_check(net: &QNetwork, input: &[f64], action: usize) -> Result<f64, QNetError> {
    let analytic = net.action_gradient(input, action)?.flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + GRAD_CHECK_STEP;
        let plus = probe.forward(input)?[action];
        *probe.param_mut(k) = orig - GRAD_CHECK_STEP;
        let minus = probe.forward(input)?[action];
        *probe.param_mut(k) = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
