//! Robust allocation: a bond/risky split trained under
//! `Portfolio -> box_W Solvent` over a normal and a crash world.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kripke::{Accessibility, KripkeModel, World};
use crate::modal_ops::{self, ModalAxiom, Modality};
use crate::trainer::{self, BetaSchedule, Objective, OptimizerKind, TrainingConfig, CONTRA, TASK};

pub const PORTFOLIO: &str = "Portfolio";
pub const SOLVENT: &str = "Solvent";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressWorld {
    pub label: String,
    pub probability: f64,
    pub risky_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressUniverse {
    pub worlds: Vec<StressWorld>,
    pub bond_return: f64,
    pub solvency_floor: f64,
    pub sharpness: f64,
}

pub fn default_worlds() -> Vec<StressWorld> {
    vec![
        StressWorld {
            label: "Normal".into(),
            probability: 0.95,
            risky_return: 0.10,
        },
        StressWorld {
            label: "Crash".into(),
            probability: 0.05,
            risky_return: -0.50,
        },
    ]
}

impl Default for StressUniverse {
    fn default() -> Self {
        StressUniverse {
            worlds: default_worlds(),
            bond_return: 0.02,
            solvency_floor: 0.90,
            sharpness: 0.02,
        }
    }
}

impl StressUniverse {
    pub fn validate(&self) -> Result<()> {
        if self.worlds.is_empty() {
            return Err(Error::Config("the stress universe needs at least one world".into()));
        }
        let total: f64 = self.worlds.iter().map(|w| w.probability).sum();
        if (total - 1.0).abs() > 1e-9 || self.worlds.iter().any(|w| !(0.0..=1.0).contains(&w.probability)) {
            return Err(Error::Config(format!("world probabilities sum to {total}, not 1")));
        }
        if !(self.solvency_floor > 0.0 && self.solvency_floor <= 1.0) {
            return Err(Error::Config(format!("solvency floor {} outside (0, 1]", self.solvency_floor)));
        }
        if !(self.sharpness > 0.0) {
            return Err(Error::Config("sharpness must be positive".into()));
        }
        Ok(())
    }

    /// Index of the world with the worst risky return.
    pub fn worst_world(&self) -> usize {
        (0..self.worlds.len())
            .min_by(|&a, &b| self.worlds[a].risky_return.total_cmp(&self.worlds[b].risky_return))
            .unwrap_or(0)
    }

    /// Smallest bond fraction that keeps every world at or above the floor.
    pub fn feasible_bond_fraction(&self) -> f64 {
        let worst = &self.worlds[self.worst_world()];
        let (risky, bond) = (1.0 + worst.risky_return, 1.0 + self.bond_return);
        ((self.solvency_floor - risky) / (bond - risky)).clamp(0.0, 1.0)
    }
}

/// Bond fraction `w = sigmoid(logit)`.
#[derive(Clone, Copy, Debug)]
pub struct Allocation {
    pub logit: Var,
    pub bond: Var,
}

impl Allocation {
    pub fn new(tape: &mut Tape, logit: Var) -> Result<Self> {
        Ok(Allocation {
            logit,
            bond: tape.sigmoid(logit)?,
        })
    }
}

/// `w (1 + r_bond) + (1 - w)(1 + r_risky)` from unit wealth.
pub fn world_value(tape: &mut Tape, alloc: &Allocation, universe: &StressUniverse, world: usize) -> Result<Var> {
    let risky_fraction = tape.one_minus(alloc.bond)?;
    let bond_part = tape.scale(alloc.bond, 1.0 + universe.bond_return)?;
    let risky_part = tape.scale(risky_fraction, 1.0 + universe.worlds[world].risky_return)?;
    Ok(tape.add(bond_part, risky_part)?)
}

pub fn expected_return(tape: &mut Tape, alloc: &Allocation, universe: &StressUniverse) -> Result<Var> {
    let mut terms = Vec::with_capacity(universe.worlds.len());
    for (i, w) in universe.worlds.iter().enumerate() {
        let value = world_value(tape, alloc, universe, i)?;
        let gain = tape.add_scalar(value, -1.0)?;
        terms.push(tape.scale(gain, w.probability)?);
    }
    Ok(tape.sum(&terms)?)
}

/// `sigmoid((value - floor) / s)`.
pub fn solvency_truth(tape: &mut Tape, value: Var, floor: f64, sharpness: f64) -> Result<Var> {
    let margin = tape.add_scalar(value, -floor)?;
    let z = tape.scale(margin, 1.0 / sharpness)?;
    Ok(tape.sigmoid(z)?)
}

/// Stress worlds under total accessibility with `V(Solvent)` per world and
/// `V(Portfolio) = 1` everywhere.
pub fn stress_model(tape: &mut Tape, alloc: &Allocation, universe: &StressUniverse) -> Result<KripkeModel> {
    let worlds = universe
        .worlds
        .iter()
        .enumerate()
        .map(|(i, w)| World {
            probability: Some(w.probability),
            ..World::new(i, w.label.clone())
        })
        .collect();
    let mut model = KripkeModel::new(worlds, Accessibility::total(universe.worlds.len()))?;
    for i in 0..universe.worlds.len() {
        let value = world_value(tape, alloc, universe, i)?;
        let solvent = solvency_truth(tape, value, universe.solvency_floor, universe.sharpness)?;
        model.set(tape, SOLVENT, i, solvent)?;
        model.set_const(tape, PORTFOLIO, i, 1.0)?;
    }
    Ok(model)
}

pub fn solvency_axiom(n_worlds: usize) -> ModalAxiom {
    ModalAxiom {
        antecedent: PORTFOLIO.into(),
        consequent: SOLVENT.into(),
        modality: Modality::Box,
        negate_consequent: false,
        world_scope: (0..n_worlds).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioConfig {
    pub worlds: Vec<StressWorld>,
    pub bond_return: f64,
    /// Solvency floor on end-of-period value.
    pub floor: f64,
    pub sharpness: f64,
    pub beta: f64,
    pub tau: f64,
    pub init_logit: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        let universe = StressUniverse::default();
        PortfolioConfig {
            worlds: universe.worlds,
            bond_return: universe.bond_return,
            floor: universe.solvency_floor,
            sharpness: universe.sharpness,
            beta: 2.0,
            tau: 0.05,
            // From w = 0.5 the crash-world solvency sigmoid is saturated
            // (z = -7) and the return gradient wins; w = 0.73 starts on the slope.
            init_logit: 1.0,
            learning_rate: 0.05,
            epochs: 500,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl PortfolioConfig {
    pub fn universe(&self) -> StressUniverse {
        StressUniverse {
            worlds: self.worlds.clone(),
            bond_return: self.bond_return,
            solvency_floor: self.floor,
            sharpness: self.sharpness,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub bond_fraction: f64,
    pub expected_return: f64,
    /// Value in the worst world.
    pub crash_value: f64,
    pub necessity_solvent: f64,
    pub contra_loss: f64,
    #[serde(skip)]
    pub loss_history: Vec<trainer::EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioReport {
    pub classical: AllocationReport,
    pub modal: AllocationReport,
    pub feasible_bond_fraction: f64,
}

fn objective(
    tape: &mut Tape,
    logit: Var,
    universe: &StressUniverse,
    config: &PortfolioConfig,
) -> Result<(Objective, Allocation, Var)> {
    let alloc = Allocation::new(tape, logit)?;
    let er = expected_return(tape, &alloc, universe)?;
    let task = tape.neg(er)?;
    let model = stress_model(tape, &alloc, universe)?;
    let tau = tape.constant(config.tau)?;
    let contra = modal_ops::contradiction_loss(tape, &model, &solvency_axiom(model.n_worlds()), tau)?;
    Ok((Objective::new().with(TASK, task).with(CONTRA, contra), alloc, er))
}

/// Evaluate a trained logit.
pub fn evaluate(logit: f64, config: &PortfolioConfig) -> Result<AllocationReport> {
    let mut tape = Tape::new();
    let universe = config.universe();
    let l = tape.param(logit)?;
    let (obj, alloc, er) = objective(&mut tape, l, &universe, config)?;
    let worst = universe.worst_world();
    let crash = world_value(&mut tape, &alloc, &universe, worst)?;
    let model = stress_model(&mut tape, &alloc, &universe)?;
    let tau = tape.constant(config.tau)?;
    let box_solvent = modal_ops::necessity(&mut tape, &model, SOLVENT, 0, tau)?;
    Ok(AllocationReport {
        bond_fraction: tape.value(alloc.bond),
        expected_return: tape.value(er),
        crash_value: tape.value(crash),
        necessity_solvent: tape.value(box_solvent),
        contra_loss: tape.value(obj.components[1].1),
        loss_history: Vec::new(),
    })
}

fn train_allocation(config: &PortfolioConfig, beta: f64) -> Result<AllocationReport> {
    let training = TrainingConfig {
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        optimizer: config.optimizer,
        beta_start: beta,
        beta_end: beta,
        beta_schedule: BetaSchedule::Constant,
        ..Default::default()
    };
    let universe = config.universe();
    let mut builder = |tape: &mut Tape, params: &[Var], _epoch: usize| -> Result<Objective> {
        Ok(objective(tape, params[0], &universe, config)?.0)
    };
    let result = trainer::train(&[config.init_logit], &mut builder, &training)?;
    let mut report = evaluate(result.final_params[0], config)?;
    report.loss_history = result.loss_history;
    Ok(report)
}

/// Classical (β = 0) and modal (β = `config.beta`) allocations.
pub fn run_scenario(config: &PortfolioConfig) -> Result<PortfolioReport> {
    let universe = config.universe();
    universe.validate()?;
    Ok(PortfolioReport {
        classical: train_allocation(config, 0.0)?,
        modal: train_allocation(config, config.beta)?,
        feasible_bond_fraction: universe.feasible_bond_fraction(),
    })
}
