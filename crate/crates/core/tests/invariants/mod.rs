//! Property invariants shared by the core property tests and the
//! acceptance suite. Each entry runs a deterministic proptest runner.

use modalnet::autodiff::{Tape, Var};
use modalnet::kripke::{Accessibility, KripkeModel, World};
use modalnet::modal_ops::{self, ModalAxiom, Modality};
use modalnet::scenario::portfolio::{self, PortfolioConfig, StressWorld};
use modalnet::scenario::safesigner::{self, Category, SEVERITIES};
use modalnet::trainer::{self, BetaSchedule, Objective, OptimizerKind, TrainingConfig, CONTRA, TASK};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub type Invariant = fn() -> Result<(), String>;

pub const ALL: &[(&str, Invariant)] = &[
    ("softmin_bounds", softmin_bounds),
    ("softmax_mirrored_bounds", softmax_mirrored_bounds),
    ("tape_determinism", tape_determinism),
    ("access_weights_in_unit_interval", access_weights_in_unit_interval),
    ("temporal_chain_forward_only", temporal_chain_forward_only),
    ("duality", duality),
    ("monotonicity_in_valuation", monotonicity_in_valuation),
    ("fixed_access_matches_hard_min", fixed_access_matches_hard_min),
    ("contradiction_zero_cases", contradiction_zero_cases),
    ("beta_zero_ignores_contra", beta_zero_ignores_contra),
    ("loss_history_sums", loss_history_sums),
    ("portfolio_min_pooling", portfolio_min_pooling),
    ("portfolio_probability_independence", portfolio_probability_independence),
    ("portfolio_classical_dominates_return", portfolio_classical_dominates_return),
    ("knowledge_capped_by_belief", knowledge_capped_by_belief),
    ("severity_monotonicity", severity_monotonicity),
    ("w0_inertness", w0_inertness),
    ("categories_partition", categories_partition),
    ("knowledge_near_hard_min", knowledge_near_hard_min),
];

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn hard_min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// A model over `n` worlds with learnable access from `logits` and `p`
/// valued by parameters, so gradients reach the valuation.
fn learnable_model(tape: &mut Tape, logits: &[f64], values: &[f64]) -> Result<(KripkeModel, Vec<Var>), TestCaseError> {
    let n = values.len();
    let logit_vars = logits.iter().map(|&l| tape.param(l)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
    let access = Accessibility::from_logits(tape, n, &logit_vars, false).map_err(fail)?;
    let worlds = (0..n).map(|i| World::new(i, format!("w{i}"))).collect();
    let mut model = KripkeModel::new(worlds, access).map_err(fail)?;
    let mut vs = Vec::with_capacity(n);
    for (i, &v) in values.iter().enumerate() {
        let var = tape.param(v).map_err(fail)?;
        model.set(tape, "p", i, var).map_err(fail)?;
        vs.push(var);
    }
    Ok((model, vs))
}

fn model_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(-6.0..6.0f64, n * n),
            prop::collection::vec(0.0..=1.0f64, n),
            0.001..1.0f64,
        )
    })
}

pub fn softmin_bounds() -> Result<(), String> {
    let inputs = (prop::collection::vec(-5.0..5.0f64, 1..=12), 1e-4..3.0f64);
    check(512, inputs, |(xs, tau_value)| {
        let mut tape = Tape::new();
        let vars = xs.iter().map(|&x| tape.param(x)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
        let tau = tape.constant(tau_value).map_err(fail)?;
        let s = tape.softmin_agg(&vars, tau).map_err(fail)?;
        let s = tape.value(s);
        let min = hard_min(&xs);
        prop_assert!(s <= min, "softmin {s} above min {min}");
        prop_assert!(s >= min - tau_value * (xs.len() as f64).ln() - 1e-12);
        Ok(())
    })
}

pub fn softmax_mirrored_bounds() -> Result<(), String> {
    let inputs = (prop::collection::vec(-5.0..5.0f64, 1..=12), 1e-4..3.0f64);
    check(512, inputs, |(xs, tau_value)| {
        let mut tape = Tape::new();
        let vars = xs.iter().map(|&x| tape.param(x)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
        let tau = tape.constant(tau_value).map_err(fail)?;
        let s = tape.softmax_agg(&vars, tau).map_err(fail)?;
        let s = tape.value(s);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s >= max, "softmax {s} below max {max}");
        prop_assert!(s <= max + tau_value * (xs.len() as f64).ln() + 1e-12);
        Ok(())
    })
}

fn random_graph(xs: &[f64]) -> Result<(f64, Vec<f64>), modalnet::AutodiffError> {
    let mut tape = Tape::new();
    let vars = xs.iter().map(|&x| tape.param(x)).collect::<Result<Vec<_>, _>>()?;
    let tau = tape.constant(0.3)?;
    let a = tape.mul(vars[0], vars[1])?;
    let b = tape.sigmoid(vars[2])?;
    let c = tape.exp(b)?;
    let d = tape.softmin_agg(&[a, c, vars[3]], tau)?;
    let e = tape.softmax_agg(&[d, vars[0]], tau)?;
    let f = tape.max0(e)?;
    let g = tape.add_scalar(f, 2.0)?;
    let h = tape.log(g)?;
    let out = tape.div(h, c)?;
    let grads = tape.backward(out);
    Ok((tape.value(out), vars.iter().map(|&v| grads.wrt(v)).collect()))
}

pub fn tape_determinism() -> Result<(), String> {
    check(256, prop::collection::vec(-5.0..5.0f64, 4), |xs| {
        let first = random_graph(&xs).map_err(fail)?;
        let second = random_graph(&xs).map_err(fail)?;
        prop_assert_eq!(first.0.to_bits(), second.0.to_bits());
        let bits = |g: &[f64]| g.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&first.1), bits(&second.1));
        Ok(())
    })
}

pub fn access_weights_in_unit_interval() -> Result<(), String> {
    let inputs = (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(-40.0..40.0f64, n * n),
            prop::collection::vec(any::<bool>(), n * n),
            any::<bool>(),
        )
    });
    check(256, inputs, |(logits, edges, mask)| {
        let n = (logits.len() as f64).sqrt() as usize;
        let mut tape = Tape::new();
        let vars = logits.iter().map(|&l| tape.param(l)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
        let learned = Accessibility::from_logits(&mut tape, n, &vars, mask).map_err(fail)?;
        for w in learned.realized(&tape) {
            prop_assert!((0.0..=1.0).contains(&w), "weight {w}");
        }
        let fixed = Accessibility::fixed(n, edges).map_err(fail)?;
        for w in fixed.realized(&tape) {
            prop_assert!(w == 0.0 || w == 1.0, "fixed weight {w}");
        }
        Ok(())
    })
}

pub fn temporal_chain_forward_only() -> Result<(), String> {
    check(128, (1usize..=14, 1usize..=6), |(horizon, window)| {
        let model = KripkeModel::temporal_chain(horizon, window).map_err(fail)?;
        let realized = model.access.realized(&Tape::new());
        for t in 0..horizon {
            for u in 0..horizon {
                let r = realized[t * horizon + u];
                if r == 1.0 {
                    prop_assert!(u > t, "edge {t} -> {u} is not forward");
                }
                prop_assert_eq!(r == 1.0, t < u && u <= t + window);
            }
        }
        Ok(())
    })
}

pub fn duality() -> Result<(), String> {
    check(256, model_inputs(), |(logits, values, tau_value)| {
        let mut tape = Tape::new();
        let (model, _) = learnable_model(&mut tape, &logits, &values)?;
        let tau = tape.constant(tau_value).map_err(fail)?;
        for w in 0..values.len() {
            let poss = modal_ops::possibility(&mut tape, &model, "p", w, tau).map_err(fail)?;
            let nec_not = modal_ops::necessity_not(&mut tape, &model, "p", w, tau).map_err(fail)?;
            let err = (tape.value(poss) - (1.0 - tape.value(nec_not))).abs();
            prop_assert!(err <= 1e-12, "duality error {err}");
        }
        Ok(())
    })
}

pub fn monotonicity_in_valuation() -> Result<(), String> {
    check(256, model_inputs(), |(logits, values, tau_value)| {
        let mut tape = Tape::new();
        let (model, vs) = learnable_model(&mut tape, &logits, &values)?;
        let tau = tape.constant(tau_value).map_err(fail)?;
        for w in 0..values.len() {
            let nec = modal_ops::necessity(&mut tape, &model, "p", w, tau).map_err(fail)?;
            let poss = modal_ops::possibility(&mut tape, &model, "p", w, tau).map_err(fail)?;
            for out in [nec, poss] {
                let grads = tape.backward(out);
                for &v in &vs {
                    prop_assert!(grads.wrt(v) >= 0.0, "negative gradient {}", grads.wrt(v));
                }
            }
        }
        Ok(())
    })
}

pub fn fixed_access_matches_hard_min() -> Result<(), String> {
    let inputs = (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n * n),
            prop::collection::vec(0.0..=1.0f64, n),
        )
    });
    check(256, inputs, |(edges, values)| {
        let n = values.len();
        let mut tape = Tape::new();
        let access = Accessibility::fixed(n, edges.clone()).map_err(fail)?;
        let worlds = (0..n).map(|i| World::new(i, format!("w{i}"))).collect();
        let mut model = KripkeModel::new(worlds, access).map_err(fail)?;
        for (i, &v) in values.iter().enumerate() {
            model.set_const(&mut tape, "p", i, v).map_err(fail)?;
        }
        let tau = tape.constant(modalnet::TAU_FLOOR).map_err(fail)?;
        for w in 0..n {
            let nec = modal_ops::necessity(&mut tape, &model, "p", w, tau).map_err(fail)?;
            let nec = tape.value(nec);
            let accessible: Vec<f64> = (0..n).filter(|&u| edges[w * n + u]).map(|u| values[u]).collect();
            let expected = if accessible.is_empty() { 1.0 } else { hard_min(&accessible) };
            prop_assert!((nec - expected).abs() <= 1e-3, "necessity {nec} vs hard min {expected}");
        }
        Ok(())
    })
}

pub fn contradiction_zero_cases() -> Result<(), String> {
    check(256, (model_inputs(), any::<bool>()), |((logits, values, tau_value), diamond)| {
        let n = values.len();
        let mut tape = Tape::new();
        let (mut model, _) = learnable_model(&mut tape, &logits, &values)?;
        let tau = tape.constant(tau_value).map_err(fail)?;
        let modality = if diamond { Modality::Diamond } else { Modality::Box };
        let axiom = |ante: &str| ModalAxiom {
            antecedent: ante.into(),
            consequent: "p".into(),
            modality,
            negate_consequent: false,
            world_scope: (0..n).collect(),
        };
        // Antecedent 0 everywhere.
        for w in 0..n {
            model.set_const(&mut tape, "off", w, 0.0).map_err(fail)?;
            model.set_const(&mut tape, "on", w, 1.0).map_err(fail)?;
        }
        let loss = modal_ops::contradiction_loss(&mut tape, &model, &axiom("off"), tau).map_err(fail)?;
        prop_assert_eq!(tape.value(loss), 0.0);

        // Consequent 1: a fully accessible true world saturates possibility,
        // and a single reflexive world with V = 1 saturates necessity.
        let mut tape = Tape::new();
        let worlds = (0..n).map(|i| World::new(i, format!("w{i}"))).collect();
        let mut model = KripkeModel::new(worlds, Accessibility::total(n)).map_err(fail)?;
        for (w, &v) in values.iter().enumerate() {
            model.set_const(&mut tape, "on", w, 1.0).map_err(fail)?;
            model.set_const(&mut tape, "p", w, if w == 0 { 1.0 } else { v }).map_err(fail)?;
        }
        let tau = tape.constant(tau_value).map_err(fail)?;
        let diamond_axiom = ModalAxiom {
            modality: Modality::Diamond,
            ..axiom("on")
        };
        let loss = modal_ops::contradiction_loss(&mut tape, &model, &diamond_axiom, tau).map_err(fail)?;
        prop_assert_eq!(tape.value(loss), 0.0);

        let mut tape = Tape::new();
        let mut single = KripkeModel::new(vec![World::new(0, "w0")], Accessibility::total(1)).map_err(fail)?;
        single.set_const(&mut tape, "on", 0, 1.0).map_err(fail)?;
        single.set_const(&mut tape, "p", 0, 1.0).map_err(fail)?;
        let tau = tape.constant(tau_value).map_err(fail)?;
        let box_axiom = ModalAxiom {
            modality: Modality::Box,
            world_scope: vec![0],
            ..axiom("on")
        };
        let loss = modal_ops::contradiction_loss(&mut tape, &single, &box_axiom, tau).map_err(fail)?;
        prop_assert_eq!(tape.value(loss), 0.0);
        Ok(())
    })
}

/// Task `(x - target)^2` and a contradiction term that pulls `x` elsewhere.
fn toy_objective(target: f64) -> impl FnMut(&mut Tape, &[Var], usize) -> modalnet::Result<Objective> {
    move |tape: &mut Tape, params: &[Var], _| {
        let d = tape.add_scalar(params[0], -target)?;
        let task = tape.mul(d, d)?;
        let s = tape.sigmoid(params[0])?;
        let contra = tape.mul(s, s)?;
        let extra = tape.exp(params[0])?;
        Ok(Objective::new().with(TASK, task).with(CONTRA, contra).with("extra", extra))
    }
}

fn toy_config(beta_start: f64, beta_end: f64, schedule: BetaSchedule, optimizer: OptimizerKind) -> TrainingConfig {
    TrainingConfig {
        learning_rate: 0.05,
        epochs: 40,
        beta_start,
        beta_end,
        beta_schedule: schedule,
        optimizer,
        loss_weights: [("extra".to_string(), 0.0)].into_iter().collect(),
        ..TrainingConfig::default()
    }
}

pub fn beta_zero_ignores_contra() -> Result<(), String> {
    check(48, (-2.0..2.0f64, -2.0..2.0f64, any::<bool>()), |(init, target, adam)| {
        let optimizer = if adam { OptimizerKind::Adam } else { OptimizerKind::PlainGd };
        let config = toy_config(0.0, 0.0, BetaSchedule::Constant, optimizer);
        let with_contra = trainer::train(&[init], &mut toy_objective(target), &config).map_err(fail)?;
        let mut task_only = |tape: &mut Tape, params: &[Var], _: usize| -> modalnet::Result<Objective> {
            let d = tape.add_scalar(params[0], -target)?;
            Ok(Objective::new().with(TASK, tape.mul(d, d)?))
        };
        let plain = trainer::train(&[init], &mut task_only, &config).map_err(fail)?;
        prop_assert_eq!(with_contra.final_params[0].to_bits(), plain.final_params[0].to_bits());
        Ok(())
    })
}

pub fn loss_history_sums() -> Result<(), String> {
    check(48, (-2.0..2.0f64, -2.0..2.0f64, 0.0..3.0f64), |(init, target, beta_end)| {
        let config = toy_config(0.0, beta_end, BetaSchedule::Linear, OptimizerKind::Adam);
        let result = trainer::train(&[init], &mut toy_objective(target), &config).map_err(fail)?;
        for record in &result.loss_history {
            let sum: f64 = record.components.iter().map(|(_, w, v)| w * v).sum();
            prop_assert!((sum - record.total).abs() <= 1e-9, "epoch {}: {sum} vs {}", record.epoch, record.total);
        }
        Ok(())
    })
}

fn solvency_values(logit: f64, config: &PortfolioConfig) -> Result<(f64, f64), TestCaseError> {
    let universe = config.universe();
    let mut tape = Tape::new();
    let l = tape.param(logit).map_err(fail)?;
    let alloc = portfolio::Allocation::new(&mut tape, l).map_err(fail)?;
    let truths = (0..universe.worlds.len())
        .map(|w| {
            let v = portfolio::world_value(&mut tape, &alloc, &universe, w)?;
            portfolio::solvency_truth(&mut tape, v, universe.solvency_floor, universe.sharpness)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let model = portfolio::stress_model(&mut tape, &alloc, &universe).map_err(fail)?;
    let tau = tape.constant(config.tau).map_err(fail)?;
    let nec = modal_ops::necessity(&mut tape, &model, portfolio::SOLVENT, 0, tau).map_err(fail)?;
    let min = hard_min(&truths.iter().map(|&t| tape.value(t)).collect::<Vec<_>>());
    Ok((tape.value(nec), min))
}

pub fn portfolio_min_pooling() -> Result<(), String> {
    check(256, (-8.0..8.0f64, 0.001..0.5f64), |(logit, tau)| {
        let config = PortfolioConfig {
            tau,
            ..PortfolioConfig::default()
        };
        let (nec, min) = solvency_values(logit, &config)?;
        let gap = nec - min;
        let n = config.worlds.len() as f64;
        prop_assert!(gap <= 0.0 && gap >= -tau * n.ln() - 1e-12, "necessity - min = {gap}");
        Ok(())
    })
}

fn with_crash_probability(p: f64) -> PortfolioConfig {
    let mut config = PortfolioConfig::default();
    config.worlds = vec![
        StressWorld {
            probability: 1.0 - p,
            ..config.worlds[0].clone()
        },
        StressWorld {
            probability: p,
            ..config.worlds[1].clone()
        },
    ];
    config
}

pub fn portfolio_probability_independence() -> Result<(), String> {
    check(256, (-6.0..6.0f64, 0.01..0.25f64), |(logit, p)| {
        let base = with_crash_probability(p);
        let doubled = with_crash_probability(2.0 * p);
        let a = portfolio::evaluate(logit, &base).map_err(fail)?;
        let b = portfolio::evaluate(logit, &doubled).map_err(fail)?;
        prop_assert_eq!(a.necessity_solvent, b.necessity_solvent);
        prop_assert!(a.expected_return != b.expected_return);
        Ok(())
    })
}

pub fn portfolio_classical_dominates_return() -> Result<(), String> {
    check(12, (0.80..0.95f64, 0.01..0.08f64), |(floor, p)| {
        let config = PortfolioConfig {
            floor,
            ..with_crash_probability(p)
        };
        let report = portfolio::run_scenario(&config).map_err(fail)?;
        prop_assert!(report.classical.expected_return >= report.modal.expected_return);
        Ok(())
    })
}

/// `(K_final, B)` for one document's access logits, belief and temperature.
fn knowledge_final(logits: &[f64; 4], belief: f64, tau_value: f64) -> Result<(f64, f64), TestCaseError> {
    let mut tape = Tape::new();
    let vars = logits.iter().map(|&l| tape.param(l)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
    let tau = tape.constant(tau_value).map_err(fail)?;
    let k = safesigner::knowledge(&mut tape, &vars, tau).map_err(fail)?;
    let b = tape.constant(belief).map_err(fail)?;
    let k_final = modal_ops::knowledge_cap(&mut tape, k, b).map_err(fail)?;
    Ok((tape.value(k_final), belief))
}

fn doc_inputs() -> impl Strategy<Value = ([f64; 4], f64, f64)> {
    (prop::array::uniform4(-12.0..12.0f64), 0.0..=1.0f64, modalnet::TAU_FLOOR..1.0f64)
}

pub fn knowledge_capped_by_belief() -> Result<(), String> {
    check(512, doc_inputs(), |(logits, belief, tau)| {
        let (k, b) = knowledge_final(&logits, belief, tau)?;
        prop_assert!(k <= b + 1e-6, "K_final {k} above B {b}");
        Ok(())
    })
}

fn knowledge_grads(logits: &[f64; 4], tau_value: f64) -> Result<(f64, Vec<f64>), TestCaseError> {
    let mut tape = Tape::new();
    let vars = logits.iter().map(|&l| tape.param(l)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
    let tau = tape.constant(tau_value).map_err(fail)?;
    let k = safesigner::knowledge(&mut tape, &vars, tau).map_err(fail)?;
    let grads = tape.backward(k);
    Ok((tape.value(k), vars.iter().map(|&v| grads.wrt(v)).collect()))
}

pub fn severity_monotonicity() -> Result<(), String> {
    check(512, doc_inputs(), |(logits, _, tau)| {
        let (_, grads) = knowledge_grads(&logits, tau)?;
        for (i, g) in grads.iter().enumerate().skip(1) {
            prop_assert!(*g <= 0.0, "dK/dA(w{i}) = {g}");
        }
        Ok(())
    })
}

pub fn w0_inertness() -> Result<(), String> {
    check(512, doc_inputs(), |(logits, _, tau)| {
        let (_, grads) = knowledge_grads(&logits, tau)?;
        prop_assert_eq!(grads[0], 0.0);
        Ok(())
    })
}

pub fn categories_partition() -> Result<(), String> {
    let inputs = (0.0..=1.0f64, 0.0..=1.0f64, 0.5..0.95f64, 0.05..0.45f64);
    check(1024, inputs, |(b, k, verified, trap)| {
        let category = safesigner::categorize(b, k, verified, trap);
        let is_verified = k >= verified;
        let is_trap = !is_verified && b >= verified && k <= trap;
        let matches = [
            category == Category::VerifiedSafe && is_verified,
            category == Category::TrapDetected && is_trap,
            category == Category::Uncertain && !is_verified && !is_trap,
        ];
        prop_assert_eq!(matches.iter().filter(|&&m| m).count(), 1);
        Ok(())
    })
}

pub fn knowledge_near_hard_min() -> Result<(), String> {
    check(512, doc_inputs(), |(logits, _, tau)| {
        let (k, _) = knowledge_grads(&logits, tau)?;
        let terms: Vec<f64> = logits
            .iter()
            .zip(SEVERITIES)
            .map(|(&l, s)| 1.0 - s / (1.0 + (-l).exp()))
            .collect();
        let min = hard_min(&terms);
        prop_assert!((k - min).abs() <= tau * 4f64.ln() + 1e-12, "K {k} vs hard min {min}");
        Ok(())
    })
}
