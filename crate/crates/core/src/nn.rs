//! Small networks whose forward passes record on the autodiff tape.
//!
//! Three architectures share one [`Network`] interface: a multilayer
//! perceptron, an LSTM unrolled over a lag window, and a Pareto head that
//! maps a window to the (scale, shape) of a tail distribution. Parameters
//! flatten row-major per layer (weights, then bias), which is also the
//! serialization order. Plain prediction replays the recorded forward pass
//! on a scratch tape, so training and inference share every operation and
//! agree bit for bit.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Tape, Var};

/// Additive floor keeping the Pareto scale strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input length {got} does not match expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("parameter vector length {got} does not match expected {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("operation needs a single-output network, found {n_out} outputs")]
    NotScalar { n_out: usize },
    #[error("dropout probability must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error("layer shapes must be at least 1, got {0}")]
    BadShape(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn record(&self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Relu => tape.relu(v),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Tanh => tape.tanh(v),
        }
    }
}

/// Recorded network output for one sample.
pub enum Recorded {
    Point(Var),
    Gpd { sigma: Var, xi: Var },
}

/// Evaluated network output for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Point(f64),
    Gpd { sigma: f64, xi: f64 },
}

/// Common interface the trainer and serializer use. `params` and
/// `set_params` expose the flat parameter vector; `weight_mask` marks the
/// multiplicative weights (true) versus biases (false) so the L2 penalty
/// can skip biases; `forward_rec` records one sample's forward pass over
/// leaves supplied in the same flat order.
pub trait Network {
    fn input_len(&self) -> usize;
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError>;
    fn weight_mask(&self) -> Vec<bool>;
    fn forward_rec(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &[f64],
    ) -> Result<Recorded, NnError>;

    /// Evaluates the recorded forward pass on a scratch tape.
    fn predict(&self, input: &[f64]) -> Result<Prediction, NnError> {
        let mut tape = Tape::new();
        let leaves = tape.leaf_slice(&self.params());
        let out = self.forward_rec(&mut tape, &leaves, input)?;
        Ok(match out {
            Recorded::Point(v) => Prediction::Point(tape.value(v)),
            Recorded::Gpd { sigma, xi } => Prediction::Gpd {
                sigma: tape.value(sigma),
                xi: tape.value(xi),
            },
        })
    }
}

/// Draws one weight from the uniform Glorot range for a layer with the
/// given fan-in and fan-out.
fn glorot<R: Rng + ?Sized>(rng: &mut R, n_in: usize, n_out: usize) -> f64 {
    let limit = (6.0 / (n_in + n_out) as f64).sqrt();
    rng.random_range(-limit..=limit)
}

/// Fully connected layer: `n_out` rows of `n_in` weights plus a bias each.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Uniform Glorot weights, zero biases, drawn row-major from `rng`.
    pub fn seeded<R: Rng + ?Sized>(
        n_in: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weights = (0..n_out)
            .map(|_| (0..n_in).map(|_| glorot(rng, n_in, n_out)).collect())
            .collect();
        DenseLayer {
            weights,
            bias: vec![0.0; n_out],
            activation,
        }
    }

    pub fn n_in(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn n_out(&self) -> usize {
        self.weights.len()
    }

    fn param_count(&self) -> usize {
        self.n_out() * (self.n_in() + 1)
    }
}

/// Records `activation(W x + b)` for one dense layer. `params` must hold
/// the layer's weights row-major followed by its biases.
fn dense_rec(tape: &mut Tape, layer: &DenseLayer, params: &[Var], x: &[Var]) -> Vec<Var> {
    let (n_in, n_out) = (layer.n_in(), layer.n_out());
    debug_assert_eq!(params.len(), layer.param_count());
    debug_assert_eq!(x.len(), n_in);
    let mut out = Vec::with_capacity(n_out);
    for row in 0..n_out {
        let w = &params[row * n_in..(row + 1) * n_in];
        let mut acc = tape.mul(w[0], x[0]);
        for i in 1..n_in {
            let term = tape.mul(w[i], x[i]);
            acc = tape.add(acc, term);
        }
        let b = params[n_out * n_in + row];
        acc = tape.add(acc, b);
        out.push(layer.activation.record(tape, acc));
    }
    out
}

fn layer_params(layer: &DenseLayer) -> impl Iterator<Item = f64> + '_ {
    layer
        .weights
        .iter()
        .flatten()
        .copied()
        .chain(layer.bias.iter().copied())
}

fn load_layer(layer: &mut DenseLayer, flat: &[f64]) {
    let n_in = layer.n_in();
    for (row, w) in layer.weights.iter_mut().enumerate() {
        w.copy_from_slice(&flat[row * n_in..(row + 1) * n_in]);
    }
    let off = layer.weights.len() * n_in;
    let n_bias = layer.bias.len();
    layer.bias.copy_from_slice(&flat[off..off + n_bias]);
}

fn layer_mask(layer: &DenseLayer, mask: &mut Vec<bool>) {
    mask.extend(std::iter::repeat(true).take(layer.n_out() * layer.n_in()));
    mask.extend(std::iter::repeat(false).take(layer.n_out()));
}

/// Feed-forward stack. The final layer is the affine readout; with a
/// single layer the model is plain affine regression.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `sizes` lists input, hidden..., output widths. Hidden layers use
    /// `hidden_activation`; the readout stays affine.
    pub fn seeded<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::BadShape(sizes.len()));
        }
        if let Some(&z) = sizes.iter().find(|&&s| s == 0) {
            return Err(NnError::BadShape(z));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    hidden_activation
                };
                DenseLayer::seeded(pair[0], pair[1], act, rng)
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn n_in(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::n_in)
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::n_out)
    }

    /// Records the full stack and returns all outputs.
    fn stack_rec(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &[f64],
    ) -> Result<Vec<Var>, NnError> {
        if input.len() != self.n_in() {
            return Err(NnError::ShapeMismatch {
                expected: self.n_in(),
                got: input.len(),
            });
        }
        if params.len() != self.param_count() {
            return Err(NnError::ParamCount {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut x = tape.leaf_slice(input);
        let mut offset = 0;
        for layer in &self.layers {
            let take = layer.param_count();
            x = dense_rec(tape, layer, &params[offset..offset + take], &x);
            offset += take;
        }
        Ok(x)
    }

    /// Plain multi-output forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut tape = Tape::new();
        let leaves = tape.leaf_slice(&self.params());
        let out = self.stack_rec(&mut tape, &leaves, input)?;
        Ok(out.iter().map(|&v| tape.value(v)).collect())
    }
}

impl Network for Mlp {
    fn input_len(&self) -> usize {
        self.n_in()
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(layer_params).collect()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ParamCount {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let take = layer.param_count();
            load_layer(layer, &flat[offset..offset + take]);
            offset += take;
        }
        Ok(())
    }

    fn weight_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            layer_mask(layer, &mut mask);
        }
        mask
    }

    fn forward_rec(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &[f64],
    ) -> Result<Recorded, NnError> {
        if self.n_out() != 1 {
            return Err(NnError::NotScalar { n_out: self.n_out() });
        }
        let out = self.stack_rec(tape, params, input)?;
        Ok(Recorded::Point(out[0]))
    }
}

/// One LSTM cell. Gate weights stack forget, input, output blocks over the
/// concatenation `[h_prev, x]`; the candidate transform has its own block.
#[derive(Debug, Clone)]
pub struct LstmCell {
    /// 3 * hidden rows (forget, input, output) of hidden + input columns.
    pub w_gates: Vec<Vec<f64>>,
    pub b_gates: Vec<f64>,
    /// hidden rows of hidden + input columns.
    pub w_cand: Vec<Vec<f64>>,
    pub b_cand: Vec<f64>,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCell {
    /// Glorot init per gate block with fan-in hidden + input and fan-out
    /// hidden; zero biases.
    pub fn seeded<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let cols = hidden_size + input_size;
        let mut rows = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..cols).map(|_| glorot(rng, cols, hidden_size)).collect())
                .collect()
        };
        let w_gates = rows(3 * hidden_size);
        let w_cand = rows(hidden_size);
        LstmCell {
            w_gates,
            b_gates: vec![0.0; 3 * hidden_size],
            w_cand,
            b_cand: vec![0.0; hidden_size],
            input_size,
            hidden_size,
        }
    }

    fn param_count(&self) -> usize {
        let cols = self.hidden_size + self.input_size;
        3 * self.hidden_size * cols + 3 * self.hidden_size + self.hidden_size * cols
            + self.hidden_size
    }

    /// Records one step. `params` holds w_gates rows, b_gates, w_cand rows,
    /// b_cand, in that order. Returns the new (h, c).
    fn step_rec(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: &[Var],
        h: &[Var],
        c: &[Var],
    ) -> (Vec<Var>, Vec<Var>) {
        let hs = self.hidden_size;
        let cols = hs + self.input_size;
        debug_assert_eq!(x.len(), self.input_size);
        let concat: Vec<Var> = h.iter().chain(x.iter()).copied().collect();

        let w_gates_len = 3 * hs * cols;
        let (w_gates, rest) = params.split_at(w_gates_len);
        let (b_gates, rest) = rest.split_at(3 * hs);
        let (w_cand, b_cand) = rest.split_at(hs * cols);

        let mut gate = |row: usize| -> Var {
            let w = &w_gates[row * cols..(row + 1) * cols];
            let mut acc = tape.mul(w[0], concat[0]);
            for i in 1..cols {
                let term = tape.mul(w[i], concat[i]);
                acc = tape.add(acc, term);
            }
            let biased = tape.add(acc, b_gates[row]);
            tape.sigmoid(biased)
        };
        let f: Vec<Var> = (0..hs).map(&mut gate).collect();
        let i: Vec<Var> = (hs..2 * hs).map(&mut gate).collect();
        let o: Vec<Var> = (2 * hs..3 * hs).map(&mut gate).collect();

        let mut h_next = Vec::with_capacity(hs);
        let mut c_next = Vec::with_capacity(hs);
        for j in 0..hs {
            let w = &w_cand[j * cols..(j + 1) * cols];
            let mut acc = tape.mul(w[0], concat[0]);
            for idx in 1..cols {
                let term = tape.mul(w[idx], concat[idx]);
                acc = tape.add(acc, term);
            }
            let biased = tape.add(acc, b_cand[j]);
            let k = tape.tanh(biased);
            let keep = tape.mul(f[j], c[j]);
            let write = tape.mul(i[j], k);
            let c_new = tape.add(keep, write);
            let gated = tape.tanh(c_new);
            h_next.push(tape.mul(o[j], gated));
            c_next.push(c_new);
        }
        (h_next, c_next)
    }
}

/// LSTM unrolled over a lag window of scalars, read out from the final
/// hidden state by an affine layer.
#[derive(Debug, Clone)]
pub struct LstmModel {
    pub cell: LstmCell,
    pub readout: DenseLayer,
    pub window: usize,
}

impl LstmModel {
    pub fn seeded<R: Rng + ?Sized>(window: usize, hidden_size: usize, rng: &mut R) -> Self {
        let cell = LstmCell::seeded(1, hidden_size, rng);
        let readout = DenseLayer::seeded(hidden_size, 1, Activation::Identity, rng);
        LstmModel {
            cell,
            readout,
            window,
        }
    }

    /// Plain scalar forward pass over a window.
    pub fn forward(&self, window: &[f64]) -> Result<f64, NnError> {
        match self.predict(window)? {
            Prediction::Point(v) => Ok(v),
            Prediction::Gpd { .. } => unreachable!("LSTM readout is scalar"),
        }
    }
}

impl Network for LstmModel {
    fn input_len(&self) -> usize {
        self.window
    }

    fn param_count(&self) -> usize {
        self.cell.param_count() + self.readout.param_count()
    }

    fn params(&self) -> Vec<f64> {
        let c = &self.cell;
        c.w_gates
            .iter()
            .flatten()
            .copied()
            .chain(c.b_gates.iter().copied())
            .chain(c.w_cand.iter().flatten().copied())
            .chain(c.b_cand.iter().copied())
            .chain(layer_params(&self.readout))
            .collect()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ParamCount {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let cols = self.cell.hidden_size + self.cell.input_size;
        let mut offset = 0;
        for row in self.cell.w_gates.iter_mut() {
            row.copy_from_slice(&flat[offset..offset + cols]);
            offset += cols;
        }
        self.cell
            .b_gates
            .copy_from_slice(&flat[offset..offset + 3 * self.cell.hidden_size]);
        offset += 3 * self.cell.hidden_size;
        for row in self.cell.w_cand.iter_mut() {
            row.copy_from_slice(&flat[offset..offset + cols]);
            offset += cols;
        }
        self.cell
            .b_cand
            .copy_from_slice(&flat[offset..offset + self.cell.hidden_size]);
        offset += self.cell.hidden_size;
        load_layer(&mut self.readout, &flat[offset..]);
        Ok(())
    }

    fn weight_mask(&self) -> Vec<bool> {
        let cols = self.cell.hidden_size + self.cell.input_size;
        let mut mask = Vec::with_capacity(self.param_count());
        mask.extend(std::iter::repeat(true).take(3 * self.cell.hidden_size * cols));
        mask.extend(std::iter::repeat(false).take(3 * self.cell.hidden_size));
        mask.extend(std::iter::repeat(true).take(self.cell.hidden_size * cols));
        mask.extend(std::iter::repeat(false).take(self.cell.hidden_size));
        layer_mask(&self.readout, &mut mask);
        mask
    }

    fn forward_rec(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &[f64],
    ) -> Result<Recorded, NnError> {
        if input.len() != self.window {
            return Err(NnError::ShapeMismatch {
                expected: self.window,
                got: input.len(),
            });
        }
        if params.len() != self.param_count() {
            return Err(NnError::ParamCount {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let (cell_params, readout_params) = params.split_at(self.cell.param_count());
        let hs = self.cell.hidden_size;
        let mut h: Vec<Var> = (0..hs).map(|_| tape.leaf(0.0)).collect();
        let mut c: Vec<Var> = (0..hs).map(|_| tape.leaf(0.0)).collect();
        for &xt in input {
            let x = vec![tape.leaf(xt)];
            let (h2, c2) = self.cell.step_rec(tape, cell_params, &x, &h, &c);
            h = h2;
            c = c2;
        }
        let out = dense_rec(tape, &self.readout, readout_params, &h);
        Ok(Recorded::Point(out[0]))
    }
}

/// Pareto tail head: a backbone MLP emits two raw values, mapped to a
/// strictly positive scale via softplus plus [`SIGMA_FLOOR`] and a shape in
/// (-1, 1) via tanh.
#[derive(Debug, Clone)]
pub struct EvtHead {
    pub backbone: Mlp,
}

/// Raw shape output at initialization. A fresh head must start with a
/// nonnegative shape so its support is unbounded for every input (a
/// random negative shape can exclude observed targets and abort training
/// at the first step), but an exact zero would sit in the frozen
/// exponential branch of the likelihood and never receive a gradient.
pub const SHAPE_INIT_RAW: f64 = 0.1;

impl EvtHead {
    /// Backbone `input -> hidden (tanh) -> 2`. The scale row is
    /// Glorot-initialized; the shape row starts input-independent at
    /// `tanh(SHAPE_INIT_RAW)`.
    pub fn seeded<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut backbone = Mlp::seeded(&[input, hidden, 2], Activation::Tanh, rng)?;
        let out = backbone.layers.last_mut().expect("two layers");
        out.weights[1].iter_mut().for_each(|w| *w = 0.0);
        out.bias[1] = SHAPE_INIT_RAW;
        Ok(EvtHead { backbone })
    }

    /// Plain (scale, shape) forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(f64, f64), NnError> {
        match self.predict(input)? {
            Prediction::Gpd { sigma, xi } => Ok((sigma, xi)),
            Prediction::Point(_) => unreachable!("head emits scale and shape"),
        }
    }
}

impl Network for EvtHead {
    fn input_len(&self) -> usize {
        self.backbone.n_in()
    }

    fn param_count(&self) -> usize {
        self.backbone.param_count()
    }

    fn params(&self) -> Vec<f64> {
        self.backbone.params()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        self.backbone.set_params(flat)
    }

    fn weight_mask(&self) -> Vec<bool> {
        self.backbone.weight_mask()
    }

    fn forward_rec(
        &self,
        tape: &mut Tape,
        params: &[Var],
        input: &[f64],
    ) -> Result<Recorded, NnError> {
        let raw = self.backbone.stack_rec(tape, params, input)?;
        debug_assert_eq!(raw.len(), 2);
        let sp = tape.softplus(raw[0]);
        let floor = tape.leaf(SIGMA_FLOOR);
        let sigma = tape.add(sp, floor);
        let xi = tape.tanh(raw[1]);
        Ok(Recorded::Gpd { sigma, xi })
    }
}

/// Inverted dropout mask over input features: each entry is 0 with
/// probability `p_drop`, otherwise `1 / (1 - p_drop)`, so the expected
/// value of a masked feature is unchanged. Evaluation paths skip masking
/// entirely.
pub fn dropout_mask<R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    p_drop: f64,
) -> Result<Vec<f64>, NnError> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(NnError::BadDropout(p_drop));
    }
    let keep_scale = 1.0 / (1.0 - p_drop);
    Ok((0..len)
        .map(|_| {
            if rng.random::<f64>() < p_drop {
                0.0
            } else {
                keep_scale
            }
        })
        .collect())
}
