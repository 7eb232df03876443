//! Gradient-based training with composite, β-weighted losses.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::error::{Error, Result};

/// Name of the task component of an [`Objective`].
pub const TASK: &str = "task";
/// Name of the contradiction component, weighted by β.
pub const CONTRA: &str = "contra";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// β stays at `beta_start`.
    Constant,
    /// β moves linearly from `beta_start` at the first epoch to `beta_end` at the last.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    PlainGd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_schedule: BetaSchedule,
    pub loss_weights: BTreeMap<String, f64>,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.001,
            epochs: 50,
            batch_size: 32,
            beta_start: 0.0,
            beta_end: 0.0,
            beta_schedule: BetaSchedule::Constant,
            loss_weights: BTreeMap::new(),
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn beta_at(&self, epoch: usize) -> f64 {
        match self.beta_schedule {
            BetaSchedule::Constant => self.beta_start,
            BetaSchedule::Linear if self.epochs <= 1 => self.beta_end,
            BetaSchedule::Linear => {
                let frac = epoch as f64 / (self.epochs - 1) as f64;
                self.beta_start + (self.beta_end - self.beta_start) * frac
            }
        }
    }

    pub fn weight_of(&self, component: &str) -> f64 {
        self.loss_weights.get(component).copied().unwrap_or(1.0)
    }
}

/// `task + beta * contra`.
pub fn total_loss(tape: &mut Tape, task: Var, contra: Var, beta: f64) -> Result<Var> {
    let weighted = tape.scale(contra, beta)?;
    Ok(tape.add(task, weighted)?)
}

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    /// Update a set of parameter slices that together form one flat vector.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if self.m.len() != total {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            offset += p.len();
        }
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    PlainGd { learning_rate: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::PlainGd => Optimizer::PlainGd { learning_rate },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(learning_rate)),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        match self {
            Optimizer::PlainGd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.iter_mut().zip(g.iter()) {
                        *x -= *learning_rate * d;
                    }
                }
            }
            Optimizer::Adam(adam) => adam.step(params, grads),
        }
    }
}

/// Named loss components produced by a model builder for one epoch.
#[derive(Clone, Debug, Default)]
pub struct Objective {
    pub components: Vec<(String, Var)>,
}

impl Objective {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, var: Var) -> Self {
        self.components.push((name.into(), var));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    pub total: f64,
    /// `(name, weight, unweighted value)`
    pub components: Vec<(String, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub final_params: Vec<f64>,
    pub loss_history: Vec<EpochRecord>,
    pub wall_time: Duration,
}

/// Builds the loss graph for one epoch from the current parameter nodes.
pub trait ModelBuilder {
    fn build(&mut self, tape: &mut Tape, params: &[Var], epoch: usize) -> Result<Objective>;
}

impl<F> ModelBuilder for F
where
    F: FnMut(&mut Tape, &[Var], usize) -> Result<Objective>,
{
    fn build(&mut self, tape: &mut Tape, params: &[Var], epoch: usize) -> Result<Objective> {
        self(tape, params, epoch)
    }
}

/// Assemble the weighted total: `task + β·contra + Σ w_c · c` over the
/// remaining components.
fn assemble(
    tape: &mut Tape,
    objective: &Objective,
    config: &TrainingConfig,
    beta: f64,
) -> Result<(Var, Vec<(String, f64, f64)>)> {
    let mut task = None;
    let mut contra = None;
    let mut extras = Vec::new();
    let mut record = Vec::with_capacity(objective.components.len());
    for (name, var) in &objective.components {
        let weight = match name.as_str() {
            TASK => {
                task = Some(*var);
                1.0
            }
            CONTRA => {
                contra = Some(*var);
                beta
            }
            _ => {
                let w = config.weight_of(name);
                extras.push((*var, w));
                w
            }
        };
        record.push((name.clone(), weight, tape.value(*var)));
    }
    let zero = tape.constant(0.0)?;
    let mut total = total_loss(tape, task.unwrap_or(zero), contra.unwrap_or(zero), beta)?;
    for (var, w) in extras {
        let weighted = tape.scale(var, w)?;
        total = tape.add(total, weighted)?;
    }
    Ok((total, record))
}

/// Full-batch training of the parameters in `init` against `builder`.
pub fn train(
    init: &[f64],
    builder: &mut impl ModelBuilder,
    config: &TrainingConfig,
) -> Result<TrainResult> {
    config.validate()?;
    let started = Instant::now();
    let mut params = init.to_vec();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let beta = config.beta_at(epoch);
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|&p| tape.param(p))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let objective = builder
            .build(&mut tape, &vars, epoch)
            .map_err(|e| match e {
                Error::Autodiff(AutodiffError::NonFinite { op, .. }) => Error::NonFinite {
                    component: format!("{op:?} node while building the loss"),
                    epoch,
                },
                other => other,
            })?;
        let (total, components) = assemble(&mut tape, &objective, config, beta)?;
        for (name, _, value) in &components {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    component: name.clone(),
                    epoch,
                });
            }
        }
        let grads = tape.backward(total);
        let grad_values: Vec<f64> = vars.iter().map(|&v| grads.wrt(v)).collect();
        if let Some(i) = grad_values.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                component: format!("gradient of parameter {i}"),
                epoch,
            });
        }
        history.push(EpochRecord {
            epoch,
            beta,
            total: tape.value(total),
            components,
        });
        optimizer.step(&mut [params.as_mut_slice()], &[grad_values.as_slice()]);
    }

    Ok(TrainResult {
        final_params: params,
        loss_history: history,
        wall_time: started.elapsed(),
    })
}

/// Long-format CSV: `epoch,component,value`, including `beta` and `total` rows.
pub fn loss_history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,component,value\n");
    for rec in history {
        let _ = writeln!(out, "{},beta,{}", rec.epoch, rec.beta);
        for (name, _, value) in &rec.components {
            let _ = writeln!(out, "{},{},{}", rec.epoch, name, value);
        }
        let _ = writeln!(out, "{},total,{}", rec.epoch, rec.total);
    }
    out
}
