//! Reverse-mode automatic differentiation on a scalar operation tape.
//!
//! Every primitive appends one node recording its operand indices and the
//! local partial derivatives evaluated at the forward values. Insertion
//! order is already a topological order, so a single reverse sweep from the
//! output accumulates the adjoint of every node, giving gradients for all
//! leaves at the cost of one extra pass.
//!
//! All arithmetic is `f64`. Recording the same expression over the same
//! inputs reproduces every node value bit for bit; there is no hidden state
//! besides the tape itself.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    /// A recorded intermediate evaluated to NaN or infinity.
    #[error("non-finite value at tape node {index}")]
    NonFiniteValue { index: usize },
}

/// Handle to a value recorded on a [`Tape`]. Only meaningful together with
/// the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
}

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

/// Growable Wengert list. Leaves are nodes with zero partials; every
/// operation node points at previously recorded operands.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
}

/// Adjoints from one backward sweep, indexable by [`Var`].
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> f64 {
        self.adjoints[v.index]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes but keeps allocations for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index]
    }

    /// Records an input (or constant) node. Gradients flow to leaves and
    /// stop there.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push([0, 0], [0.0, 0.0], value)
    }

    pub fn leaf_slice(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    fn push(&mut self, parents: [usize; 2], partials: [f64; 2], value: f64) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { parents, partials });
        self.values.push(value);
        Var { index }
    }

    fn unary(&mut self, a: Var, partial: f64, value: f64) -> Var {
        self.push([a.index, a.index], [partial, 0.0], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index] + self.values[b.index];
        self.push([a.index, b.index], [1.0, 1.0], v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index] - self.values[b.index];
        self.push([a.index, b.index], [1.0, -1.0], v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.index], self.values[b.index]);
        self.push([a.index, b.index], [vb, va], va * vb)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.index], self.values[b.index]);
        self.push([a.index, b.index], [1.0 / vb, -va / (vb * vb)], va / vb)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.values[a.index];
        self.unary(a, -1.0, -v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.values[a.index].exp();
        self.unary(a, v, v)
    }

    /// Natural logarithm. Arguments outside (0, inf) record NaN, which
    /// [`Tape::check_finite`] reports.
    pub fn log(&mut self, a: Var) -> Var {
        let va = self.values[a.index];
        self.unary(a, 1.0 / va, va.ln())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.values[a.index].tanh();
        self.unary(a, 1.0 - t * t, t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let s = sigmoid(self.values[a.index]);
        self.unary(a, s * (1.0 - s), s)
    }

    /// Rectifier with the subgradient convention relu'(0) = 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.values[a.index];
        if va > 0.0 {
            self.unary(a, 1.0, va)
        } else {
            self.unary(a, 0.0, 0.0)
        }
    }

    /// Pointwise maximum. On ties the gradient routes to the first operand.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.index], self.values[b.index]);
        if va >= vb {
            self.push([a.index, b.index], [1.0, 0.0], va)
        } else {
            self.push([a.index, b.index], [0.0, 1.0], vb)
        }
    }

    /// log(1 + exp(x)) in its overflow-safe form; derivative sigmoid(x).
    pub fn softplus(&mut self, a: Var) -> Var {
        let va = self.values[a.index];
        self.unary(a, sigmoid(va), softplus(va))
    }

    /// Reports the first recorded NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(AutodiffError::NonFiniteValue { index }),
            None => Ok(()),
        }
    }

    /// Single reverse sweep seeding d(output)/d(output) = 1. Adjoints of
    /// nodes recorded after `output` stay zero.
    pub fn backward(&self, output: Var) -> Gradients {
        assert!(
            output.index < self.nodes.len(),
            "output var {} not on this tape (len {})",
            output.index,
            self.nodes.len()
        );
        let mut adjoints = vec![0.0; self.nodes.len()];
        adjoints[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            adjoints[node.parents[0]] += a * node.partials[0];
            adjoints[node.parents[1]] += a * node.partials[1];
        }
        Gradients { adjoints }
    }
}

/// Numerically stable logistic function, shared by the tape and by plain
/// evaluation paths so both produce identical bits.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Records `f` over fresh leaves holding `x` and returns the output value
/// together with the tape, the leaves, and the output handle.
pub fn forward_record<F>(x: &[f64], f: F) -> Result<(f64, Tape, Vec<Var>, Var), AutodiffError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let leaves = tape.leaf_slice(x);
    let out = f(&mut tape, &leaves);
    tape.check_finite()?;
    Ok((tape.value(out), tape, leaves, out))
}

/// Compares the reverse-mode gradient of `f` at `x` against central finite
/// differences with step `eps`, returning the worst relative error
/// `max_i |g_i - fd_i| / max(|g_i|, |fd_i|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let (_, tape, leaves, out) = forward_record(x, &f)?;
    let grads = tape.backward(out);

    let eval = |xs: &[f64]| -> Result<f64, AutodiffError> {
        let (v, ..) = forward_record(xs, &f)?;
        Ok(v)
    };

    let mut max_rel = 0.0_f64;
    let mut shifted = x.to_vec();
    for i in 0..x.len() {
        shifted[i] = x[i] + eps;
        let up = eval(&shifted)?;
        shifted[i] = x[i] - eps;
        let down = eval(&shifted)?;
        shifted[i] = x[i];
        let fd = (up - down) / (2.0 * eps);
        let g = grads.wrt(leaves[i]);
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
