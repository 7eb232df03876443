//! Finite-difference verification of the tape on random computation graphs.
//!
//! A graph is generated once as a recipe of primitive ops, with operand
//! choices made so every value stays bounded and away from kinks and
//! domain edges. The recipe is then replayed with perturbed parameters to
//! get central differences, which only ever read forward values.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Result, Tape, Var};
use crate::kripke::{Accessibility, KripkeModel, World};
use crate::modal_ops;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub graphs: usize,
    pub max_depth: usize,
    pub step: f64,
    pub seed: u64,
    /// Random vectors for the softmin bound and duality checks.
    pub softmin_vectors: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            graphs: 500,
            max_depth: 30,
            step: 1e-5,
            seed: 42,
            softmin_vectors: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub graphs: usize,
    pub total_nodes: usize,
    pub max_depth_seen: usize,
    pub max_rel_err: f64,
    pub worst_graph: usize,
    pub ops_covered: Vec<String>,
    pub softmin_contract: SoftminContract,
}

/// Worst violations of `min(x) - tau ln n <= softmin(x) <= min(x)` and of
/// `possibility = 1 - necessity(not)`; all zero when the contract holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftminContract {
    pub vectors: usize,
    pub max_upper_excess: f64,
    pub max_lower_deficit: f64,
    pub max_duality_err: f64,
}

#[derive(Clone, Debug)]
enum Step {
    Const(f64),
    Unary(Op, usize),
    Binary(Op, usize, usize),
    Aggregate(Op, Vec<usize>, usize),
}

/// A replayable random graph over `n_params` parameters.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    params: Vec<f64>,
    steps: Vec<Step>,
    depth: usize,
}

const UNARY: [Op; 5] = [Op::Neg, Op::Exp, Op::Log, Op::Sigmoid, Op::Max0];
const BINARY: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Div];
const BOUND: f64 = 25.0;

impl RandomGraph {
    pub fn generate(rng: &mut ChaCha8Rng, max_depth: usize) -> Result<Self> {
        let n_params = rng.random_range(2..=6);
        let params: Vec<f64> = (0..n_params).map(|_| rng.random_range(-5.0..5.0)).collect();
        let depth = rng.random_range(1..=max_depth.max(1));

        let mut tape = Tape::new();
        let mut steps = Vec::new();
        for &p in &params {
            tape.param(p)?;
        }
        let mut layer_start = 0;
        for _ in 0..depth {
            let layer_end = tape.len();
            let width = rng.random_range(1..=3);
            for _ in 0..width {
                for step in Self::pick(rng, &tape, layer_start, layer_end) {
                    Self::apply(&mut tape, &step)?;
                    steps.push(step);
                }
            }
            layer_start = layer_end;
        }
        // Sum the final layer so every node of it reaches the loss.
        let last: Vec<usize> = (layer_start..tape.len()).collect();
        let mut acc = last[0];
        for &i in &last[1..] {
            let step = Step::Binary(Op::Add, acc, i);
            Self::apply(&mut tape, &step)?;
            steps.push(step);
            acc = tape.len() - 1;
        }
        Ok(RandomGraph {
            params,
            steps,
            depth,
        })
    }

    fn pick(rng: &mut ChaCha8Rng, tape: &Tape, layer_start: usize, layer_end: usize) -> Vec<Step> {
        let value = |i: usize| tape.value(var(i));
        // One operand from the previous layer keeps the graph deep; the
        // others can come from anywhere earlier.
        let recent = rng.random_range(layer_start..layer_end);
        let any = rng.random_range(0..layer_end);
        let fallback = Step::Unary(Op::Sigmoid, recent);

        let choice = rng.random_range(0..(UNARY.len() + BINARY.len() + 2));
        let step = if choice < UNARY.len() {
            let op = UNARY[choice];
            let x = value(recent);
            let ok = match op {
                Op::Exp => x.abs() < 3.0,
                Op::Log => x > 0.05,
                Op::Max0 => x.abs() > 1e-2,
                _ => true,
            };
            if ok {
                Step::Unary(op, recent)
            } else {
                fallback
            }
        } else if choice < UNARY.len() + BINARY.len() {
            let op = BINARY[choice - UNARY.len()];
            let (a, b) = if rng.random_bool(0.5) {
                (recent, any)
            } else {
                (any, recent)
            };
            let (x, y) = (value(a), value(b));
            let result = match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                _ if y.abs() > 0.25 => x / y,
                _ => f64::INFINITY,
            };
            if result.abs() < BOUND {
                Step::Binary(op, a, b)
            } else {
                fallback
            }
        } else {
            let op = if choice % 2 == 0 {
                Op::SoftMinAgg
            } else {
                Op::SoftMaxAgg
            };
            let k = rng.random_range(1..=4);
            let mut xs = vec![recent];
            xs.extend((1..k).map(|_| rng.random_range(0..layer_end)));
            let tau = (0..layer_end)
                .filter(|&i| (0.2..4.0).contains(&value(i)))
                .nth(rng.random_range(0..4));
            match tau {
                Some(t) => Step::Aggregate(op, xs, t),
                None => {
                    // No usable temperature yet: record a constant first; it
                    // lands at the current end of the tape.
                    let c = Step::Const(rng.random_range(0.2..2.0));
                    return vec![c, Step::Aggregate(op, xs, tape.len())];
                }
            }
        };
        vec![step]
    }

    fn apply(tape: &mut Tape, step: &Step) -> Result<Var> {
        match step {
            Step::Const(c) => tape.constant(*c),
            Step::Unary(op, a) => {
                let a = var(*a);
                match op {
                    Op::Neg => tape.neg(a),
                    Op::Exp => tape.exp(a),
                    Op::Log => tape.log(a),
                    Op::Sigmoid => tape.sigmoid(a),
                    Op::Max0 => tape.max0(a),
                    _ => unreachable!("not a unary op"),
                }
            }
            Step::Binary(op, a, b) => {
                let (a, b) = (var(*a), var(*b));
                match op {
                    Op::Add => tape.add(a, b),
                    Op::Sub => tape.sub(a, b),
                    Op::Mul => tape.mul(a, b),
                    Op::Div => tape.div(a, b),
                    _ => unreachable!("not a binary op"),
                }
            }
            Step::Aggregate(op, xs, tau) => {
                let xs: Vec<Var> = xs.iter().map(|&i| var(i)).collect();
                let tau = var(*tau);
                match op {
                    Op::SoftMinAgg => tape.softmin_agg(&xs, tau),
                    _ => tape.softmax_agg(&xs, tau),
                }
            }
        }
    }

    /// Build the graph on a fresh tape with the given parameter values.
    pub fn build(&self, params: &[f64]) -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|&p| tape.param(p))
            .collect::<Result<Vec<_>>>()?;
        let mut out = vars[0];
        for step in &self.steps {
            out = Self::apply(&mut tape, step)?;
        }
        Ok((tape, vars, out))
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn ops(&self) -> BTreeSet<String> {
        let mut ops: BTreeSet<String> = self
            .steps
            .iter()
            .map(|s| match s {
                Step::Const(_) => Op::Const,
                Step::Unary(op, _) | Step::Binary(op, _, _) | Step::Aggregate(op, _, _) => *op,
            })
            .map(|op| format!("{op:?}"))
            .collect();
        ops.insert(format!("{:?}", Op::Param));
        ops
    }

    /// Largest `|analytic - fd| / max(1, |fd|)` over the parameters.
    pub fn max_relative_error(&self, step: f64) -> Result<(f64, usize)> {
        let (tape, vars, loss) = self.build(&self.params)?;
        let grads = tape.backward(loss);
        let mut worst: f64 = 0.0;
        for (i, &v) in vars.iter().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = self.params.clone();
                p[i] += delta;
                let (t, _, out) = self.build(&p)?;
                Ok(t.value(out))
            };
            let fd = (eval(step)? - eval(-step)?) / (2.0 * step);
            let rel = (grads.wrt(v) - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
        Ok((worst, tape.len()))
    }
}

// Recipes address nodes by tape index; replay is deterministic so indices line up.
fn var(i: usize) -> Var {
    Var::from_index(i)
}

pub fn softmin_contract(vectors: usize, seed: u64) -> crate::error::Result<SoftminContract> {
    let mut rng = rng::stream(seed, "softmin-contract");
    let mut report = SoftminContract {
        vectors,
        max_upper_excess: 0.0,
        max_lower_deficit: 0.0,
        max_duality_err: 0.0,
    };
    for _ in 0..vectors {
        let n = rng.random_range(1..=8);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let tau_value = rng.random_range(0.01..1.0);
        let mut tape = Tape::new();
        let vars = xs.iter().map(|&x| tape.param(x)).collect::<Result<Vec<_>>>()?;
        let tau = tape.constant(tau_value)?;
        let soft = tape.softmin_agg(&vars, tau)?;
        let s = tape.value(soft);
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        report.max_upper_excess = report.max_upper_excess.max(s - min);
        report.max_lower_deficit = report
            .max_lower_deficit
            .max(min - tau_value * (n as f64).ln() - s);

        // Same vector reused as a valuation over a learnable model.
        let logits = (0..n * n)
            .map(|_| tape.param(rng.random_range(-4.0..4.0)))
            .collect::<Result<Vec<_>>>()?;
        let access = Accessibility::from_logits(&mut tape, n, &logits, false)?;
        let worlds = (0..n).map(|i| World::new(i, format!("w{i}"))).collect();
        let mut model = KripkeModel::new(worlds, access)?;
        for (i, &x) in xs.iter().enumerate() {
            model.set_const(&mut tape, "p", i, (x + 3.0) / 6.0)?;
        }
        for w in 0..n {
            let poss = modal_ops::possibility(&mut tape, &model, "p", w, tau)?;
            let dual = modal_ops::necessity_not(&mut tape, &model, "p", w, tau)?;
            let err = (tape.value(poss) - (1.0 - tape.value(dual))).abs();
            report.max_duality_err = report.max_duality_err.max(err);
        }
    }
    report.max_upper_excess = report.max_upper_excess.max(0.0);
    report.max_lower_deficit = report.max_lower_deficit.max(0.0);
    Ok(report)
}

pub fn run(config: &GradcheckConfig) -> crate::error::Result<GradcheckReport> {
    let mut rng = rng::stream(config.seed, "gradcheck");
    let mut report = GradcheckReport {
        graphs: config.graphs,
        total_nodes: 0,
        max_depth_seen: 0,
        max_rel_err: 0.0,
        worst_graph: 0,
        ops_covered: Vec::new(),
        softmin_contract: softmin_contract(config.softmin_vectors, config.seed)?,
    };
    let mut ops = BTreeSet::new();
    for g in 0..config.graphs {
        let graph = RandomGraph::generate(&mut rng, config.max_depth)?;
        let (err, nodes) = graph.max_relative_error(config.step)?;
        report.total_nodes += nodes;
        report.max_depth_seen = report.max_depth_seen.max(graph.depth());
        ops.extend(graph.ops());
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_graph = g;
        }
    }
    report.ops_covered = ops.into_iter().collect();
    Ok(report)
}
