//! Temporal compliance: a per-step trading policy trained under the
//! wash-sale axiom `SellAtLoss(t) -> box_[t+1, t+window] not Buy`.
//!
//! Worlds are time steps with a fixed forward window. The policy is a
//! table of logits trained directly on expected profit (no RL environment),
//! which keeps the unconstrained optimum enumerable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kripke::KripkeModel;
use crate::modal_ops::{self, ModalAxiom, Modality};
use crate::rng;
use crate::trainer::{self, BetaSchedule, EpochRecord, Objective, OptimizerKind, TrainingConfig, CONTRA, TASK};

pub const BUY: &str = "Buy";
pub const SELL_AT_LOSS: &str = "SellAtLoss";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Buy,
    Sell,
    Hold,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Buy, Action::Sell, Action::Hold];

    pub fn symbol(self) -> char {
        match self {
            Action::Buy => 'B',
            Action::Sell => 'S',
            Action::Hold => '.',
        }
    }
}

pub fn render(strategy: &[Action]) -> String {
    strategy.iter().map(|a| a.symbol()).collect()
}

/// Deterministic market: exogenous prices, a fixed cost basis and a payoff
/// per action and step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketScript {
    pub horizon: usize,
    pub prices: Vec<f64>,
    pub cost_basis: f64,
    pub payoff_buy: Vec<f64>,
    pub payoff_sell: Vec<f64>,
    pub payoff_hold: Vec<f64>,
    /// Extra reward for selling below the cost basis.
    pub tax_rebate: f64,
    pub wash_window: usize,
}

impl Default for MarketScript {
    fn default() -> Self {
        MarketScript {
            horizon: 10,
            prices: vec![101.0, 102.5, 96.0, 99.0, 101.5, 103.0, 104.5, 105.0, 106.5, 108.0],
            cost_basis: 100.0,
            payoff_buy: vec![1.2, 1.1, -0.4, 1.3, 1.4, 1.2, 1.5, 1.3, 1.2, 1.4],
            payoff_sell: vec![-0.6, -0.5, 0.2, -0.4, -0.7, -0.8, -0.9, -0.8, -0.7, -0.9],
            payoff_hold: vec![0.0; 10],
            tax_rebate: 0.8,
            wash_window: 3,
        }
    }
}

impl MarketScript {
    pub fn validate(&self) -> Result<()> {
        let t = self.horizon;
        if t < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        for (name, len) in [
            ("prices", self.prices.len()),
            ("payoff_buy", self.payoff_buy.len()),
            ("payoff_sell", self.payoff_sell.len()),
            ("payoff_hold", self.payoff_hold.len()),
        ] {
            if len != t {
                return Err(Error::Config(format!("{name} has {len} entries, horizon is {t}")));
            }
        }
        if self.wash_window < 1 {
            return Err(Error::Config("wash_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn at_loss(&self, t: usize) -> bool {
        self.prices[t] < self.cost_basis
    }

    /// Payoff of taking `action` at step `t`, rebate included.
    pub fn payoff(&self, action: Action, t: usize) -> f64 {
        match action {
            Action::Buy => self.payoff_buy[t],
            Action::Hold => self.payoff_hold[t],
            Action::Sell if self.at_loss(t) => self.payoff_sell[t] + self.tax_rebate,
            Action::Sell => self.payoff_sell[t],
        }
    }

    pub fn discrete_profit(&self, strategy: &[Action]) -> f64 {
        strategy.iter().enumerate().map(|(t, &a)| self.payoff(a, t)).sum()
    }

    /// `(t, t')` pairs with a sell at a loss at `t` and a buy at
    /// `t < t' <= t + wash_window`.
    pub fn violations(&self, strategy: &[Action]) -> usize {
        let mut count = 0;
        for (t, &a) in strategy.iter().enumerate() {
            if a != Action::Sell || !self.at_loss(t) {
                continue;
            }
            let end = (t + self.wash_window).min(strategy.len() - 1);
            count += strategy[t + 1..=end].iter().filter(|&&b| b == Action::Buy).count();
        }
        count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedStrategy {
    pub strategy: String,
    pub profit: f64,
    pub violations: usize,
}

/// Best deterministic strategy over all `3^T` candidates, optionally
/// restricted to strategies without violations. Ties keep the first
/// strategy in enumeration order.
pub fn exhaustive_optimum(script: &MarketScript, compliant_only: bool) -> EnumeratedStrategy {
    let t = script.horizon;
    let total = 3usize.pow(t as u32);
    let mut best: Option<(f64, Vec<Action>)> = None;
    let mut strategy = vec![Action::Buy; t];
    for code in 0..total {
        let mut c = code;
        for slot in strategy.iter_mut() {
            *slot = Action::ALL[c % 3];
            c /= 3;
        }
        if compliant_only && script.violations(&strategy) > 0 {
            continue;
        }
        let profit = script.discrete_profit(&strategy);
        if best.as_ref().is_none_or(|(p, _)| profit > *p) {
            best = Some((profit, strategy.clone()));
        }
    }
    let (profit, strategy) = best.expect("at least the all-hold strategy is compliant");
    EnumeratedStrategy {
        strategy: render(&strategy),
        profit,
        violations: script.violations(&strategy),
    }
}

/// Per-step softmax over Buy/Sell/Hold logits.
#[derive(Clone, Debug)]
pub struct Policy {
    pub logits: Vec<Var>,
    pub probs: Vec<[Var; 3]>,
}

impl Policy {
    /// `logits` is `T * 3`, ordered Buy, Sell, Hold per step.
    pub fn from_logits(tape: &mut Tape, logits: &[Var]) -> Result<Self> {
        if !logits.len().is_multiple_of(3) {
            return Err(Error::Config("policy logits must come in triples".into()));
        }
        let mut probs = Vec::with_capacity(logits.len() / 3);
        for step in logits.chunks(3) {
            // Shifting by the (constant) max leaves the softmax and its
            // gradients unchanged.
            let shift = step.iter().map(|&l| tape.value(l)).fold(f64::NEG_INFINITY, f64::max);
            let mut exps = [step[0]; 3];
            for (e, &l) in exps.iter_mut().zip(step) {
                let shifted = tape.add_scalar(l, -shift)?;
                *e = tape.exp(shifted)?;
            }
            let total = tape.sum(&exps)?;
            let mut p = exps;
            for slot in p.iter_mut() {
                *slot = tape.div(*slot, total)?;
            }
            probs.push(p);
        }
        Ok(Policy {
            logits: logits.to_vec(),
            probs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, t: usize, action: Action) -> Var {
        self.probs[t][action as usize]
    }

    /// Argmax action per step; ties resolve Buy, Sell, Hold in that order.
    pub fn strategy(&self, tape: &Tape) -> Vec<Action> {
        self.probs
            .iter()
            .map(|p| {
                let mut best = Action::Buy;
                for a in Action::ALL {
                    if tape.value(p[a as usize]) > tape.value(p[best as usize]) {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// `sum_t sum_a p(a, t) * payoff(a, t)`, with the rebate folded into the
/// sell payoff on loss steps.
pub fn expected_profit(tape: &mut Tape, policy: &Policy, script: &MarketScript) -> Result<Var> {
    let mut terms = Vec::with_capacity(policy.horizon() * 3);
    for t in 0..policy.horizon() {
        for a in Action::ALL {
            terms.push(tape.scale(policy.prob(t, a), script.payoff(a, t))?);
        }
    }
    Ok(tape.sum(&terms)?)
}

/// Temporal chain with `V(Buy, t) = p(Buy, t)` and
/// `V(SellAtLoss, t) = p(Sell, t) * [price_t < cost_basis]`.
pub fn build_wash_axiom(tape: &mut Tape, policy: &Policy, script: &MarketScript) -> Result<(KripkeModel, ModalAxiom)> {
    let horizon = policy.horizon();
    let mut model = KripkeModel::temporal_chain(horizon, script.wash_window)?;
    for t in 0..horizon {
        model.set(tape, BUY, t, policy.prob(t, Action::Buy))?;
        if script.at_loss(t) {
            model.set(tape, SELL_AT_LOSS, t, policy.prob(t, Action::Sell))?;
        } else {
            model.set_const(tape, SELL_AT_LOSS, t, 0.0)?;
        }
    }
    let axiom = ModalAxiom {
        antecedent: SELL_AT_LOSS.into(),
        consequent: BUY.into(),
        modality: Modality::Box,
        negate_consequent: true,
        world_scope: (0..horizon).collect(),
    };
    Ok((model, axiom))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WashSaleConfig {
    pub script: MarketScript,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    /// β for the annealed run moves linearly from `beta_start` to `beta_end`.
    pub beta_start: f64,
    pub beta_end: f64,
    pub tau: f64,
    /// Logits start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for WashSaleConfig {
    fn default() -> Self {
        WashSaleConfig {
            script: MarketScript::default(),
            learning_rate: 0.05,
            epochs: 800,
            optimizer: OptimizerKind::Adam,
            beta_start: 0.0,
            beta_end: 2.0,
            tau: 0.05,
            init_scale: 0.01,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WashReport {
    pub strategy: String,
    /// Expected profit under the trained (stochastic) policy.
    pub profit: f64,
    /// Profit of the argmax strategy.
    pub discrete_profit: f64,
    pub violations: usize,
    pub non_hold_actions: usize,
    pub final_contra_loss: f64,
    pub beta_final: f64,
    #[serde(skip)]
    pub loss_history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WashSaleOutcome {
    pub baseline: WashReport,
    pub modal: WashReport,
    pub unconstrained_optimum: EnumeratedStrategy,
    pub compliant_optimum: EnumeratedStrategy,
}

fn objective(tape: &mut Tape, logits: &[Var], script: &MarketScript, tau: f64) -> Result<(Objective, Policy)> {
    let policy = Policy::from_logits(tape, logits)?;
    let profit = expected_profit(tape, &policy, script)?;
    // Per-step profit keeps the task on the same scale as the contradiction loss.
    let task = tape.scale(profit, -1.0 / policy.horizon() as f64)?;
    let (model, axiom) = build_wash_axiom(tape, &policy, script)?;
    let tau = tape.constant(tau)?;
    let contra = modal_ops::contradiction_loss(tape, &model, &axiom, tau)?;
    Ok((Objective::new().with(TASK, task).with(CONTRA, contra), policy))
}

/// Expected profit and contradiction loss of a policy given by raw logits.
pub fn evaluate(logits: &[f64], script: &MarketScript, tau: f64) -> Result<(Policy, Tape, f64, f64)> {
    let mut tape = Tape::new();
    let vars = logits.iter().map(|&l| tape.param(l)).collect::<std::result::Result<Vec<_>, _>>()?;
    let (obj, policy) = objective(&mut tape, &vars, script, tau)?;
    let profit = -tape.value(obj.components[0].1) * policy.horizon() as f64;
    let contra = tape.value(obj.components[1].1);
    Ok((policy, tape, profit, contra))
}

fn train_policy(config: &WashSaleConfig, training: &TrainingConfig) -> Result<WashReport> {
    let script = &config.script;
    let mut rng = rng::stream(config.seed, "washsale/init");
    let init: Vec<f64> = (0..script.horizon * 3)
        .map(|_| rng.random_range(-config.init_scale..=config.init_scale))
        .collect();
    let mut builder = |tape: &mut Tape, params: &[Var], _epoch: usize| -> Result<Objective> {
        Ok(objective(tape, params, script, config.tau)?.0)
    };
    let result = trainer::train(&init, &mut builder, training)?;
    let (policy, tape, profit, contra) = evaluate(&result.final_params, script, config.tau)?;
    let strategy = policy.strategy(&tape);
    Ok(WashReport {
        strategy: render(&strategy),
        profit,
        discrete_profit: script.discrete_profit(&strategy),
        violations: script.violations(&strategy),
        non_hold_actions: strategy.iter().filter(|&&a| a != Action::Hold).count(),
        final_contra_loss: contra,
        beta_final: training.beta_at(training.epochs - 1),
        loss_history: result.loss_history,
    })
}

/// Train the unconstrained baseline (β = 0) and the annealed policy.
pub fn run_scenario(config: &WashSaleConfig) -> Result<WashSaleOutcome> {
    config.script.validate()?;
    let base = TrainingConfig {
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        optimizer: config.optimizer,
        seed: config.seed,
        ..Default::default()
    };
    let baseline_cfg = TrainingConfig {
        beta_start: 0.0,
        beta_end: 0.0,
        beta_schedule: BetaSchedule::Constant,
        ..base.clone()
    };
    let modal_cfg = TrainingConfig {
        beta_start: config.beta_start,
        beta_end: config.beta_end,
        beta_schedule: BetaSchedule::Linear,
        ..base
    };
    let (baseline, modal) = rayon::join(
        || train_policy(config, &baseline_cfg),
        || train_policy(config, &modal_cfg),
    );
    Ok(WashSaleOutcome {
        baseline: baseline?,
        modal: modal?,
        unconstrained_optimum: exhaustive_optimum(&config.script, false),
        compliant_optimum: exhaustive_optimum(&config.script, true),
    })
}
