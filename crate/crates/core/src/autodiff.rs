//! Scalar reverse-mode automatic differentiation.
//!
//! Every truth value, parameter and loss in the library is a node on a
//! [`Tape`]. Nodes are appended in evaluation order, so a node's parents
//! always have smaller indices and a single reverse sweep computes all
//! gradients.

use thiserror::Error;

/// Lower bound applied to learnable temperatures during training.
pub const TAU_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op:?} produced non-finite value {value}")]
    NonFinite { op: Op, value: f64 },
    #[error("node {0} is not on this tape")]
    MissingNode(usize),
    #[error("aggregation over an empty list")]
    EmptyAggregate,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(index: usize) -> Var {
        Var(index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Const,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sigmoid,
    Max0,
    SoftMinAgg,
    SoftMaxAgg,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: f64,
    edge_start: usize,
    edge_len: usize,
}

/// Append-only computation graph.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // (parent index, local partial) for every node, stored contiguously.
    edges: Vec<(usize, f64)>,
    params: Vec<Var>,
}

/// Gradients of one loss with respect to every node on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<f64>,
    params: Vec<Var>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> f64 {
        self.grads.get(var.0).copied().unwrap_or(0.0)
    }

    /// `(param, d loss / d param)` for every parameter, in creation order.
    pub fn params(&self) -> impl Iterator<Item = (Var, f64)> + '_ {
        self.params.iter().map(|&p| (p, self.wrt(p)))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted `-tau * ln sum exp(-x_i / tau)` together with its partials.
///
/// Returns `(value, d/dx_i, d/dtau)`.
pub(crate) fn softmin_parts(xs: &[f64], tau: f64) -> (f64, Vec<f64>, f64) {
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = xs.iter().map(|&x| (-(x - min) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let value = min - tau * total.ln();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mean: f64 = probs.iter().zip(xs).map(|(p, x)| p * x).sum();
    let dtau = (value - mean) / tau;
    (value, probs, dtau)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(nodes),
            edges: Vec::with_capacity(nodes * 2),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, var: Var) -> f64 {
        self.nodes[var.0].value
    }

    pub fn op(&self, var: Var) -> Op {
        self.nodes[var.0].op
    }

    pub fn parents(&self, var: Var) -> impl Iterator<Item = Var> + '_ {
        let node = &self.nodes[var.0];
        self.edges[node.edge_start..node.edge_start + node.edge_len]
            .iter()
            .map(|&(p, _)| Var(p))
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::MissingNode(var.0))
        }
    }

    fn push(&mut self, op: Op, value: f64, edges: &[(Var, f64)]) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op, value });
        }
        for (p, _) in edges {
            self.check(*p)?;
        }
        let edge_start = self.edges.len();
        self.edges.extend(edges.iter().map(|&(p, d)| (p.0, d)));
        self.nodes.push(Node {
            op,
            value,
            edge_start,
            edge_len: edges.len(),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, var: Var) -> Result<f64> {
        self.check(var)?;
        Ok(self.nodes[var.0].value)
    }

    pub fn constant(&mut self, value: f64) -> Result<Var> {
        self.push(Op::Const, value, &[])
    }

    pub fn param(&mut self, init: f64) -> Result<Var> {
        let var = self.push(Op::Param, init, &[])?;
        self.params.push(var);
        Ok(var)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)? + self.val(b)?;
        self.push(Op::Add, v, &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)? - self.val(b)?;
        self.push(Op::Sub, v, &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        self.push(Op::Mul, x * y, &[(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        self.push(Op::Div, x / y, &[(a, 1.0 / y), (b, -x / (y * y))])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = -self.val(a)?;
        self.push(Op::Neg, v, &[(a, -1.0)])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.val(a)?.exp();
        self.push(Op::Exp, v, &[(a, v)])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        self.push(Op::Log, x.ln(), &[(a, 1.0 / x)])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let s = sigmoid_f64(self.val(a)?);
        self.push(Op::Sigmoid, s, &[(a, s * (1.0 - s))])
    }

    /// `max(0, x)`; the subgradient at 0 is taken as 0.
    pub fn max0(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        let (v, d) = if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) };
        self.push(Op::Max0, v, &[(a, d)])
    }

    fn aggregate_inputs(&self, xs: &[Var], tau: Var) -> Result<(Vec<f64>, f64)> {
        if xs.is_empty() {
            return Err(AutodiffError::EmptyAggregate);
        }
        let t = self.val(tau)?;
        if t <= 0.0 {
            return Err(AutodiffError::NonPositiveTemperature(t));
        }
        let values = xs
            .iter()
            .map(|&x| self.val(x))
            .collect::<Result<Vec<_>>>()?;
        Ok((values, t))
    }

    /// Smooth minimum `-tau * ln sum_i exp(-x_i / tau)`.
    ///
    /// Always within `[min(x) - tau * ln n, min(x)]`.
    pub fn softmin_agg(&mut self, xs: &[Var], tau: Var) -> Result<Var> {
        let (values, t) = self.aggregate_inputs(xs, tau)?;
        let (value, probs, dtau) = softmin_parts(&values, t);
        let mut edges: Vec<(Var, f64)> = xs.iter().copied().zip(probs).collect();
        edges.push((tau, dtau));
        self.push(Op::SoftMinAgg, value, &edges)
    }

    /// Smooth maximum, defined as `-softmin(-x)`.
    pub fn softmax_agg(&mut self, xs: &[Var], tau: Var) -> Result<Var> {
        let (values, t) = self.aggregate_inputs(xs, tau)?;
        let negated: Vec<f64> = values.iter().map(|x| -x).collect();
        let (value, probs, dtau) = softmin_parts(&negated, t);
        let mut edges: Vec<(Var, f64)> = xs.iter().copied().zip(probs).collect();
        edges.push((tau, -dtau));
        self.push(Op::SoftMaxAgg, -value, &edges)
    }

    // Composites built from the primitive ops above.

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = self.constant(c)?;
        self.mul(a, c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = self.constant(c)?;
        self.add(a, c)
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let one = self.constant(1.0)?;
        self.sub(one, a)
    }

    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or(AutodiffError::EmptyAggregate)?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let total = self.sum(xs)?;
        self.scale(total, 1.0 / xs.len() as f64)
    }

    /// Clamp into `[0, 1]` using two `Max0` nodes.
    pub fn clamp01(&mut self, a: Var) -> Result<Var> {
        let lower = self.max0(a)?;
        let gap = self.one_minus(lower)?;
        let gap = self.max0(gap)?;
        self.one_minus(gap)
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let pos = self.max0(a)?;
        let neg_a = self.neg(a)?;
        let neg = self.max0(neg_a)?;
        let abs = self.add(pos, neg)?;
        let minus_abs = self.neg(abs)?;
        let e = self.exp(minus_abs)?;
        let one_plus = self.add_scalar(e, 1.0)?;
        let tail = self.log(one_plus)?;
        self.add(pos, tail)
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target`, computed
    /// from the logit so saturated predictions stay finite.
    pub fn bce_with_logit(&mut self, logit: Var, target: f64) -> Result<Var> {
        let sp = self.softplus(logit)?;
        let yz = self.scale(logit, target)?;
        self.sub(sp, yz)
    }

    /// Reverse sweep from `loss`. Nodes that are not ancestors of `loss`
    /// receive zero gradient.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads = vec![0.0; self.nodes.len()];
        if loss.0 < grads.len() {
            grads[loss.0] = 1.0;
            for i in (0..=loss.0).rev() {
                let g = grads[i];
                if g == 0.0 {
                    continue;
                }
                let node = &self.nodes[i];
                for &(p, d) in &self.edges[node.edge_start..node.edge_start + node.edge_len] {
                    grads[p] += g * d;
                }
            }
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }
}
