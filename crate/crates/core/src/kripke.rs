//! Differentiable Kripke structures: worlds, accessibility and valuation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Proposition name under which risk worlds store their safety value.
pub const SAFE: &str = "Safe";

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub index: usize,
    pub label: String,
    /// Only meaningful for risk worlds.
    pub severity: Option<f64>,
    /// Only meaningful for stress worlds.
    pub probability: Option<f64>,
}

impl World {
    pub fn new(index: usize, label: impl Into<String>) -> Self {
        World {
            index,
            label: label.into(),
            severity: None,
            probability: None,
        }
    }
}

/// A realized accessibility entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weight {
    Fixed(bool),
    Node(Var),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Accessibility {
    /// Boolean relation, row-major `n * n`.
    Fixed { n: usize, edges: Vec<bool> },
    /// Weighted relation `A(i, j) = sigmoid(logit(i, j))`. Masked entries
    /// hold `None` and behave as inaccessible.
    Learnable {
        n: usize,
        logits: Vec<Option<Var>>,
        weights: Vec<Option<Var>>,
    },
}

impl Accessibility {
    pub fn fixed(n: usize, edges: Vec<bool>) -> Result<Self> {
        if edges.len() != n * n {
            return Err(Error::Model(format!(
                "fixed accessibility needs {} entries, got {}",
                n * n,
                edges.len()
            )));
        }
        Ok(Accessibility::Fixed { n, edges })
    }

    /// Every world sees every world, itself included.
    pub fn total(n: usize) -> Self {
        Accessibility::Fixed {
            n,
            edges: vec![true; n * n],
        }
    }

    /// Fresh `n * n` logit parameters, all set to `init_logit`.
    pub fn learnable(
        tape: &mut Tape,
        n: usize,
        init_logit: f64,
        mask_diagonal: bool,
    ) -> Result<Self> {
        let logits = (0..n * n)
            .map(|_| tape.param(init_logit))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_logits(tape, n, &logits, mask_diagonal)
    }

    /// Realize weights from existing logit nodes (row-major `n * n`).
    pub fn from_logits(
        tape: &mut Tape,
        n: usize,
        logits: &[Var],
        mask_diagonal: bool,
    ) -> Result<Self> {
        if logits.len() != n * n {
            return Err(Error::Model(format!(
                "learnable accessibility needs {} logits, got {}",
                n * n,
                logits.len()
            )));
        }
        let entries: Vec<Option<Var>> = logits
            .iter()
            .enumerate()
            .map(|(k, &l)| (!(mask_diagonal && k / n == k % n)).then_some(l))
            .collect();
        Self::from_entries(tape, n, entries)
    }

    /// Only row `source` is populated; every other entry is masked.
    pub fn learnable_row(tape: &mut Tape, n: usize, source: usize, logits: &[Var]) -> Result<Self> {
        if logits.len() != n || source >= n {
            return Err(Error::Model(format!(
                "row accessibility needs {n} logits and a source below {n}"
            )));
        }
        let mut entries = vec![None; n * n];
        for (j, &l) in logits.iter().enumerate() {
            entries[source * n + j] = Some(l);
        }
        Self::from_entries(tape, n, entries)
    }

    fn from_entries(tape: &mut Tape, n: usize, logits: Vec<Option<Var>>) -> Result<Self> {
        let weights = logits
            .iter()
            .map(|l| l.map(|l| tape.sigmoid(l)).transpose())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Accessibility::Learnable { n, logits, weights })
    }

    pub fn n(&self) -> usize {
        match self {
            Accessibility::Fixed { n, .. } | Accessibility::Learnable { n, .. } => *n,
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Accessibility::Learnable { .. })
    }

    pub fn weight(&self, from: usize, to: usize) -> Weight {
        match self {
            Accessibility::Fixed { n, edges } => Weight::Fixed(edges[from * n + to]),
            Accessibility::Learnable { n, weights, .. } => match weights[from * n + to] {
                Some(w) => Weight::Node(w),
                None => Weight::Fixed(false),
            },
        }
    }

    /// Unmasked weight nodes of a learnable relation.
    pub fn weight_nodes(&self) -> Vec<Var> {
        match self {
            Accessibility::Fixed { .. } => Vec::new(),
            Accessibility::Learnable { weights, .. } => weights.iter().flatten().copied().collect(),
        }
    }

    /// Realized weights as plain numbers, row-major.
    pub fn realized(&self, tape: &Tape) -> Vec<f64> {
        let n = self.n();
        (0..n * n)
            .map(|k| match self.weight(k / n, k % n) {
                Weight::Fixed(b) => f64::from(u8::from(b)),
                Weight::Node(v) => tape.value(v),
            })
            .collect()
    }

    /// Row-major CSV with six decimals, one row per source world.
    pub fn to_csv(&self, tape: &Tape) -> String {
        matrix_to_csv(self.n(), &self.realized(tape))
    }
}

pub fn matrix_to_csv(n: usize, values: &[f64]) -> String {
    let mut out = String::new();
    for row in values.chunks(n.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Truth values per `(proposition, world)`.
#[derive(Clone, Debug, Default)]
pub struct Valuation {
    map: HashMap<(String, usize), Var>,
}

impl Valuation {
    pub fn get(&self, prop: &str, world: usize) -> Option<Var> {
        self.map.get(&(prop.to_owned(), world)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// `M = <W, R, V>` bound to one tape. The tape itself is passed to every
/// operation rather than owned, so several models can share one graph.
#[derive(Clone, Debug)]
pub struct KripkeModel {
    pub worlds: Vec<World>,
    pub access: Accessibility,
    pub valuation: Valuation,
}

impl KripkeModel {
    pub fn new(worlds: Vec<World>, access: Accessibility) -> Result<Self> {
        if worlds.is_empty() {
            return Err(Error::Model("a model needs at least one world".into()));
        }
        if access.n() != worlds.len() {
            return Err(Error::Model(format!(
                "accessibility is {n}x{n} but there are {} worlds",
                worlds.len(),
                n = access.n()
            )));
        }
        let mut labels = HashSet::new();
        for (i, w) in worlds.iter().enumerate() {
            if w.index != i {
                return Err(Error::Model(format!("world {i} carries index {}", w.index)));
            }
            if !labels.insert(w.label.as_str()) {
                return Err(Error::Model(format!("duplicate world label `{}`", w.label)));
            }
            for (name, v) in [("severity", w.severity), ("probability", w.probability)] {
                if let Some(v) = v {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Model(format!(
                            "{name} {v} of `{}` outside [0, 1]",
                            w.label
                        )));
                    }
                }
            }
        }
        Ok(KripkeModel {
            worlds,
            access,
            valuation: Valuation::default(),
        })
    }

    /// Time steps `0..horizon` with `R(t, t') = 1` iff `t < t' <= t + window`.
    pub fn temporal_chain(horizon: usize, window: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::Model("horizon must be at least 1".into()));
        }
        if window < 1 {
            return Err(Error::Model("window must be at least 1".into()));
        }
        let edges = (0..horizon * horizon)
            .map(|k| {
                let (t, u) = (k / horizon, k % horizon);
                t < u && u <= t + window
            })
            .collect();
        let worlds = (0..horizon)
            .map(|t| World::new(t, format!("t{t}")))
            .collect();
        Self::new(worlds, Accessibility::fixed(horizon, edges)?)
    }

    /// Risk worlds with `V(Safe, w_i) = 1 - severity_i`.
    pub fn risk_worlds(tape: &mut Tape, severities: &[f64], access: Accessibility) -> Result<Self> {
        let worlds = severities
            .iter()
            .enumerate()
            .map(|(i, &s)| World {
                severity: Some(s),
                ..World::new(i, format!("w{i}"))
            })
            .collect();
        let mut model = Self::new(worlds, access)?;
        for (i, &s) in severities.iter().enumerate() {
            let v = tape.constant(1.0 - s)?;
            model.set(tape, SAFE, i, v)?;
        }
        Ok(model)
    }

    pub fn n_worlds(&self) -> usize {
        self.worlds.len()
    }

    pub fn set(&mut self, tape: &Tape, prop: &str, world: usize, var: Var) -> Result<()> {
        if world >= self.worlds.len() {
            return Err(Error::Model(format!("world {world} does not exist")));
        }
        let value = tape.value(var);
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::TruthOutOfRange {
                prop: prop.to_owned(),
                world,
                value,
            });
        }
        self.valuation.map.insert((prop.to_owned(), world), var);
        Ok(())
    }

    /// Store a constant truth value, clamped into `[0, 1]`.
    pub fn set_const(
        &mut self,
        tape: &mut Tape,
        prop: &str,
        world: usize,
        value: f64,
    ) -> Result<Var> {
        let v = tape.constant(value.clamp(0.0, 1.0))?;
        self.set(tape, prop, world, v)?;
        Ok(v)
    }

    pub fn truth(&self, prop: &str, world: usize) -> Result<Var> {
        self.valuation
            .get(prop, world)
            .ok_or_else(|| Error::UnknownProposition {
                prop: prop.to_owned(),
                world,
            })
    }
}
