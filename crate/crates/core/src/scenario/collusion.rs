//! Inductive mode: recover a latent trust matrix from spoof/profit events
//! through the axiom `Spoof(i) -> diamond_A Profit`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kripke::{matrix_to_csv, Accessibility, KripkeModel, World};
use crate::modal_ops::{self, ModalAxiom, Modality};
use crate::rng;
use crate::trainer::{self, BetaSchedule, Objective, OptimizerKind, TrainingConfig, CONTRA};

pub const SPOOF: &str = "Spoof";
pub const PROFIT: &str = "Profit";
pub const SPARSITY: &str = "sparsity";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub n_traders: usize,
    pub n_steps: usize,
    /// Probability that the spoofer (trader 0) acts at a step.
    pub spoof_rate: f64,
    pub noise_spoof_rate: f64,
    pub noise_profit_rate: f64,
    /// Steps between the spoof and the beneficiary's profit.
    pub lag: usize,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            n_traders: 5,
            n_steps: 200,
            spoof_rate: 0.3,
            noise_spoof_rate: 0.1,
            noise_profit_rate: 0.1,
            lag: 0,
            seed: 42,
        }
    }
}

/// Row-major `n_steps * n_traders` truth values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketEvents {
    pub n_traders: usize,
    pub n_steps: usize,
    pub spoof: Vec<f64>,
    pub profit: Vec<f64>,
    pub seed: u64,
}

impl MarketEvents {
    pub fn new(n_traders: usize, spoof: Vec<f64>, profit: Vec<f64>, seed: u64) -> Result<Self> {
        if n_traders < 2 {
            return Err(Error::Config("collusion needs at least two traders".into()));
        }
        if spoof.len() != profit.len() || !spoof.len().is_multiple_of(n_traders) {
            return Err(Error::Data(format!(
                "event matrices of {} and {} entries do not fit {n_traders} traders",
                spoof.len(),
                profit.len()
            )));
        }
        if let Some(v) = spoof.iter().chain(&profit).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("event truth value {v} outside [0, 1]")));
        }
        Ok(MarketEvents {
            n_traders,
            n_steps: spoof.len() / n_traders,
            spoof,
            profit,
            seed,
        })
    }

    pub fn spoof_at(&self, step: usize, trader: usize) -> f64 {
        self.spoof[step * self.n_traders + trader]
    }

    pub fn profit_at(&self, step: usize, trader: usize) -> f64 {
        self.profit[step * self.n_traders + trader]
    }

    /// Relabel traders so that old trader `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_traders;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Config("not a permutation of the traders".into()));
        }
        let mut spoof = vec![0.0; self.spoof.len()];
        let mut profit = vec![0.0; self.profit.len()];
        for s in 0..self.n_steps {
            for (i, &p) in perm.iter().enumerate() {
                spoof[s * n + p] = self.spoof_at(s, i);
                profit[s * n + p] = self.profit_at(s, i);
            }
        }
        Self::new(n, spoof, profit, self.seed)
    }
}

/// Trader 0 spoofs and trader 1 profits `lag` steps later; everyone else
/// spoofs and profits independently.
pub fn generate_market(config: &MarketConfig) -> Result<MarketEvents> {
    let n = config.n_traders;
    if n < 2 {
        return Err(Error::Config("collusion needs at least two traders".into()));
    }
    for (name, p) in [
        ("spoof_rate", config.spoof_rate),
        ("noise_spoof_rate", config.noise_spoof_rate),
        ("noise_profit_rate", config.noise_profit_rate),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} {p} is not a probability")));
        }
    }
    let mut rng = rng::stream(config.seed, "collusion/market");
    let steps = config.n_steps;
    let mut spoof = vec![0.0; steps * n];
    let mut profit = vec![0.0; steps * n];
    for s in 0..steps {
        if rng.random_bool(config.spoof_rate) {
            spoof[s * n] = 1.0;
            if s + config.lag < steps {
                profit[(s + config.lag) * n + 1] = 1.0;
            }
        }
        for i in 2..n {
            if rng.random_bool(config.noise_spoof_rate) {
                spoof[s * n + i] = 1.0;
            }
            if rng.random_bool(config.noise_profit_rate) {
                profit[s * n + i] = 1.0;
            }
        }
    }
    MarketEvents::new(n, spoof, profit, config.seed)
}

/// Contradiction term of the collusion axiom, averaged over steps and
/// traders. Each step is its own model over the shared accessibility.
pub fn collusion_contradiction(tape: &mut Tape, events: &MarketEvents, access: &Accessibility, tau: Var) -> Result<Var> {
    let n = events.n_traders;
    if access.n() != n {
        return Err(Error::Model(format!(
            "accessibility is {}x{} for {n} traders",
            access.n(),
            access.n()
        )));
    }
    let worlds: Vec<World> = (0..n).map(|i| World::new(i, format!("T{i}"))).collect();
    let axiom = ModalAxiom {
        antecedent: SPOOF.into(),
        consequent: PROFIT.into(),
        modality: Modality::Diamond,
        negate_consequent: false,
        world_scope: (0..n).collect(),
    };
    let mut per_step = Vec::with_capacity(events.n_steps);
    for s in 0..events.n_steps {
        let mut model = KripkeModel::new(worlds.clone(), access.clone())?;
        for i in 0..n {
            model.set_const(tape, SPOOF, i, events.spoof_at(s, i))?;
            model.set_const(tape, PROFIT, i, events.profit_at(s, i))?;
        }
        per_step.push(modal_ops::contradiction_loss(tape, &model, &axiom, tau)?);
    }
    Ok(tape.mean(&per_step)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollusionConfig {
    pub market: MarketConfig,
    pub lambda_sparse: f64,
    pub tau: f64,
    pub init_logit: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub edge_threshold: f64,
    /// Consecutive market seeds, starting at `market.seed`, for the recovery sweep.
    pub sweep: usize,
}

impl Default for CollusionConfig {
    fn default() -> Self {
        CollusionConfig {
            market: MarketConfig::default(),
            lambda_sparse: 0.4,
            tau: 0.05,
            init_logit: 0.0,
            learning_rate: 0.05,
            epochs: 300,
            optimizer: OptimizerKind::Adam,
            edge_threshold: 0.5,
            sweep: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub n_traders: usize,
    /// Row-major realized `A`, masked diagonal reported as 0.
    pub matrix: Vec<f64>,
    pub edges: Vec<Edge>,
    pub final_contra_loss: f64,
    pub seed: u64,
    #[serde(skip)]
    pub loss_history: Vec<trainer::EpochRecord>,
}

impl TrustReport {
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.n_traders + to]
    }

    /// Largest off-diagonal entry as `(from, to)`.
    pub fn argmax_edge(&self) -> (usize, usize) {
        let n = self.n_traders;
        let mut best = (0, 1);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                if self.weight(i, j) > self.weight(best.0, best.1) {
                    best = (i, j);
                }
            }
        }
        best
    }

    pub fn matrix_csv(&self) -> String {
        matrix_to_csv(self.n_traders, &self.matrix)
    }
}

fn objective(
    tape: &mut Tape,
    logits: &[Var],
    events: &MarketEvents,
    config: &CollusionConfig,
) -> Result<(Objective, Accessibility)> {
    let access = Accessibility::from_logits(tape, events.n_traders, logits, true)?;
    let tau = tape.constant(config.tau)?;
    let contra = collusion_contradiction(tape, events, &access, tau)?;
    let sparsity = modal_ops::sparsity_loss(tape, &access)?;
    Ok((Objective::new().with(CONTRA, contra).with(SPARSITY, sparsity), access))
}

/// Fit the trust matrix on given events.
pub fn train_on(events: &MarketEvents, config: &CollusionConfig) -> Result<TrustReport> {
    if config.lambda_sparse < 0.0 || !config.lambda_sparse.is_finite() {
        return Err(Error::Config("lambda_sparse must be a non-negative number".into()));
    }
    let n = events.n_traders;
    let training = TrainingConfig {
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        optimizer: config.optimizer,
        beta_start: 1.0,
        beta_end: 1.0,
        beta_schedule: BetaSchedule::Constant,
        loss_weights: [(SPARSITY.to_owned(), config.lambda_sparse)].into(),
        seed: events.seed,
        ..Default::default()
    };
    let init = vec![config.init_logit; n * n];
    let mut builder = |tape: &mut Tape, params: &[Var], _epoch: usize| -> Result<Objective> {
        // No separate task loss: the objective is contradiction plus sparsity.
        let (obj, _) = objective(tape, params, events, config)?;
        let zero = tape.constant(0.0)?;
        let mut components = vec![(trainer::TASK.to_owned(), zero)];
        components.extend(obj.components);
        Ok(Objective { components })
    };
    let result = trainer::train(&init, &mut builder, &training)?;

    let mut tape = Tape::new();
    let logits = result
        .final_params
        .iter()
        .map(|&l| tape.param(l))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (obj, access) = objective(&mut tape, &logits, events, config)?;
    let matrix = access.realized(&tape);
    let edges = (0..n * n)
        .filter(|&k| k / n != k % n && matrix[k] > config.edge_threshold)
        .map(|k| Edge {
            from: k / n,
            to: k % n,
            weight: matrix[k],
        })
        .collect();
    Ok(TrustReport {
        n_traders: n,
        matrix,
        edges,
        final_contra_loss: tape.value(obj.components[0].1),
        seed: events.seed,
        loss_history: result.loss_history,
    })
}

pub fn run_scenario(config: &CollusionConfig) -> Result<TrustReport> {
    let events = generate_market(&config.market)?;
    train_on(&events, config)
}

/// Independent runs over several market seeds, in seed order.
pub fn run_sweep(config: &CollusionConfig, seeds: &[u64]) -> Result<Vec<TrustReport>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let config = CollusionConfig {
                market: MarketConfig {
                    seed,
                    ..config.market.clone()
                },
                ..config.clone()
            };
            run_scenario(&config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contra_with(events: &MarketEvents, weights: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let n = events.n_traders;
        let logits: Vec<Var> = weights
            .iter()
            .map(|&w| {
                let l = if w >= 1.0 { 40.0 } else if w <= 0.0 { -40.0 } else { (w / (1.0 - w)).ln() };
                tape.param(l).unwrap()
            })
            .collect();
        let access = Accessibility::from_logits(&mut tape, n, &logits, true).unwrap();
        let tau = tape.constant(0.05).unwrap();
        let c = collusion_contradiction(&mut tape, events, &access, tau).unwrap();
        tape.value(c)
    }

    #[test]
    fn generator_is_deterministic() {
        let c = MarketConfig::default();
        assert_eq!(generate_market(&c).unwrap(), generate_market(&c).unwrap());
        let other = MarketConfig { seed: 7, ..c.clone() };
        assert_ne!(generate_market(&c).unwrap(), generate_market(&other).unwrap());
    }

    #[test]
    fn zero_trust_gives_spoof_rate() {
        let events = generate_market(&MarketConfig::default()).unwrap();
        let rate = events.spoof.iter().sum::<f64>() / events.spoof.len() as f64;
        // With nothing accessible the smooth max is just its slack tau * ln n.
        let expected = rate * (1.0 - 0.05 * 5f64.ln());
        let c = contra_with(&events, &[0.0; 25]);
        assert!((c - expected).abs() < 1e-9, "{c} vs {expected}");
        assert!((c - rate).abs() < 0.05 * 5f64.ln() * rate + 1e-12);
    }

    #[test]
    fn planted_edge_satisfies_spoofer() {
        // Only trader 0 spoofs, always followed by trader 1's profit.
        let n = 3;
        let mut spoof = vec![0.0; 10 * n];
        let mut profit = vec![0.0; 10 * n];
        for s in 0..10 {
            spoof[s * n] = 1.0;
            profit[s * n + 1] = 1.0;
        }
        let events = MarketEvents::new(n, spoof, profit, 0).unwrap();
        let mut w = vec![0.0; 9];
        w[1] = 1.0;
        assert!(contra_with(&events, &w) < 1e-9);
    }

    #[test]
    fn no_spoofs_is_vacuous() {
        let events = MarketEvents::new(3, vec![0.0; 12], vec![1.0; 12], 0).unwrap();
        assert_eq!(contra_with(&events, &[0.3; 9]), 0.0);
    }

    #[test]
    fn permutation_moves_columns() {
        let events = generate_market(&MarketConfig::default()).unwrap();
        let perm = [2, 0, 1, 4, 3];
        let p = events.permuted(&perm).unwrap();
        for s in 0..events.n_steps {
            for i in 0..5 {
                assert_eq!(events.spoof_at(s, i), p.spoof_at(s, perm[i]));
                assert_eq!(events.profit_at(s, i), p.profit_at(s, perm[i]));
            }
        }
        assert!(events.permuted(&[0, 0, 1, 2, 3]).is_err());
    }

    #[test]
    fn rejects_bad_events() {
        assert!(MarketEvents::new(3, vec![0.0; 7], vec![0.0; 7], 0).is_err());
        assert!(MarketEvents::new(2, vec![1.5, 0.0], vec![0.0; 2], 0).is_err());
    }
}
