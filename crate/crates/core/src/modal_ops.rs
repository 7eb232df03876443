//! Smooth necessity and possibility, and the losses built on them.
//!
//! `necessity(p, w)` is the softmin over every world `w'` of
//! `1 - A(w, w') * (1 - V(p, w'))`: an accessible world contributes its
//! truth value, an inaccessible one contributes 1. Possibility is the dual
//! `1 - necessity(not p, w)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kripke::{Accessibility, KripkeModel, Weight};

/// Temperature of the smooth `min(K, B)` cap.
pub const CAP_TEMPERATURE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Box,
    Diamond,
}

/// `antecedent -> M consequent` (or `M not consequent`) checked at every
/// world in `world_scope`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalAxiom {
    pub antecedent: String,
    pub consequent: String,
    pub modality: Modality,
    pub negate_consequent: bool,
    pub world_scope: Vec<usize>,
}

fn necessity_of(
    tape: &mut Tape,
    model: &KripkeModel,
    prop: &str,
    negated: bool,
    w: usize,
    tau: Var,
) -> Result<Var> {
    let n = model.n_worlds();
    if n == 0 {
        return Err(Error::Model("necessity over an empty world set".into()));
    }
    if w >= n {
        return Err(Error::Model(format!("world {w} does not exist")));
    }
    let mut terms = Vec::with_capacity(n);
    for target in 0..n {
        let term = match model.access.weight(w, target) {
            Weight::Fixed(false) => tape.constant(1.0)?,
            Weight::Fixed(true) => {
                let v = model.truth(prop, target)?;
                if negated {
                    tape.one_minus(v)?
                } else {
                    v
                }
            }
            Weight::Node(a) => {
                // 1 - A * (1 - V); for the negated proposition 1 - V becomes V.
                let v = model.truth(prop, target)?;
                let falsity = if negated { v } else { tape.one_minus(v)? };
                let blocked = tape.mul(a, falsity)?;
                tape.one_minus(blocked)?
            }
        };
        terms.push(term);
    }
    Ok(tape.softmin_agg(&terms, tau)?)
}

pub fn necessity(
    tape: &mut Tape,
    model: &KripkeModel,
    prop: &str,
    w: usize,
    tau: Var,
) -> Result<Var> {
    necessity_of(tape, model, prop, false, w, tau)
}

pub fn possibility(
    tape: &mut Tape,
    model: &KripkeModel,
    prop: &str,
    w: usize,
    tau: Var,
) -> Result<Var> {
    let dual = necessity_of(tape, model, prop, true, w, tau)?;
    Ok(tape.one_minus(dual)?)
}

/// `necessity` of the negated proposition, exposed for duality checks.
pub fn necessity_not(
    tape: &mut Tape,
    model: &KripkeModel,
    prop: &str,
    w: usize,
    tau: Var,
) -> Result<Var> {
    necessity_of(tape, model, prop, true, w, tau)
}

fn modal_value(
    tape: &mut Tape,
    model: &KripkeModel,
    axiom: &ModalAxiom,
    w: usize,
    tau: Var,
) -> Result<Var> {
    let prop = axiom.consequent.as_str();
    match (axiom.modality, axiom.negate_consequent) {
        (Modality::Box, negated) => necessity_of(tape, model, prop, negated, w, tau),
        (Modality::Diamond, negated) => {
            // diamond q = 1 - box(not q); diamond(not q) = 1 - box(q)
            let dual = necessity_of(tape, model, prop, !negated, w, tau)?;
            Ok(tape.one_minus(dual)?)
        }
    }
}

/// Mean over scope worlds of `V(antecedent, w) * (1 - M(consequent, w))`.
///
/// The modal value is clamped into `[0, 1]` first, since the softmin slack
/// can push it slightly outside; the loss therefore stays in `[0, 1]`.
pub fn contradiction_loss(
    tape: &mut Tape,
    model: &KripkeModel,
    axiom: &ModalAxiom,
    tau: Var,
) -> Result<Var> {
    if axiom.world_scope.is_empty() {
        return Err(Error::Model("axiom scope is empty".into()));
    }
    let mut terms = Vec::with_capacity(axiom.world_scope.len());
    for &w in &axiom.world_scope {
        let ante = model.truth(&axiom.antecedent, w)?;
        let modal = modal_value(tape, model, axiom, w, tau)?;
        let modal = tape.clamp01(modal)?;
        let unmet = tape.one_minus(modal)?;
        terms.push(tape.mul(ante, unmet)?);
    }
    Ok(tape.mean(&terms)?)
}

/// L1 mean of the unmasked realized weights.
pub fn sparsity_loss(tape: &mut Tape, access: &Accessibility) -> Result<Var> {
    if !access.is_learnable() {
        return Err(Error::Model(
            "sparsity loss needs learnable accessibility".into(),
        ));
    }
    let weights = access.weight_nodes();
    if weights.is_empty() {
        return Ok(tape.constant(0.0)?);
    }
    Ok(tape.mean(&weights)?)
}

/// Smooth `min(K, B)`; never exceeds either input.
pub fn knowledge_cap(tape: &mut Tape, knowledge: Var, belief: Var) -> Result<Var> {
    let tau = tape.constant(CAP_TEMPERATURE)?;
    Ok(tape.softmin_agg(&[knowledge, belief], tau)?)
}

/// `max(0, K - B)`.
pub fn axiom_loss_k_leq_b(tape: &mut Tape, knowledge: Var, belief: Var) -> Result<Var> {
    let excess = tape.sub(knowledge, belief)?;
    Ok(tape.max0(excess)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kripke::{World, SAFE};

    fn two_world_model(tape: &mut Tape, access: Vec<bool>, values: [f64; 2]) -> KripkeModel {
        let worlds = vec![World::new(0, "a"), World::new(1, "b")];
        let mut m = KripkeModel::new(worlds, Accessibility::fixed(2, access).unwrap()).unwrap();
        for (i, v) in values.iter().enumerate() {
            m.set_const(tape, "p", i, *v).unwrap();
        }
        m
    }

    #[test]
    fn necessity_without_access_is_vacuous() {
        let mut t = Tape::new();
        let m = two_world_model(&mut t, vec![false; 4], [0.1, 0.2]);
        let tau = t.constant(0.05).unwrap();
        let v = {
            let v = necessity(&mut t, &m, "p", 0, tau).unwrap();
            t.value(v)
        };
        assert!(v <= 1.0 && v >= 1.0 - 0.05 * 2f64.ln());
    }

    #[test]
    fn necessity_single_accessible_world() {
        let mut t = Tape::new();
        // only world 1 accessible from 0, V = 0.7 there; closed form softmin{0.7, 1.0}
        let m = two_world_model(&mut t, vec![false, true, false, false], [0.3, 0.7]);
        let tau = 0.05;
        let tv = t.constant(tau).unwrap();
        let v = {
            let v = necessity(&mut t, &m, "p", 0, tv).unwrap();
            t.value(v)
        };
        let closed = -tau * ((-0.7f64 / tau).exp() + (-1.0f64 / tau).exp()).ln();
        assert!((v - closed).abs() < 1e-12);
        assert!(v <= 0.7 && v >= 0.7 - tau * 2f64.ln());
    }

    #[test]
    fn necessity_reproduces_graded_risk_form() {
        let mut t = Tape::new();
        let logits: Vec<Var> = [0.0, 0.0, 0.0, 0.88]
            .iter()
            .map(|&a: &f64| {
                // logit whose sigmoid is `a`; zero weight approximated by a very negative logit
                let l = if a == 0.0 {
                    -60.0
                } else {
                    (a / (1.0 - a)).ln()
                };
                t.param(l).unwrap()
            })
            .collect();
        let access = Accessibility::learnable_row(&mut t, 4, 0, &logits).unwrap();
        let m = KripkeModel::risk_worlds(&mut t, &[0.0, 0.3, 0.6, 1.0], access).unwrap();
        let tau = t.constant(0.02).unwrap();
        let k = {
            let v = necessity(&mut t, &m, SAFE, 0, tau).unwrap();
            t.value(v)
        };
        assert!(k <= 0.12 + 1e-9 && k >= 0.12 - 0.02 * 4f64.ln(), "{k}");
    }

    #[test]
    fn possibility_basic_cases_and_duality() {
        let mut t = Tape::new();
        let tau_v = 0.05;
        let tau = t.constant(tau_v).unwrap();
        let slack = tau_v * 2f64.ln();

        let m = two_world_model(&mut t, vec![false, true, false, false], [0.0, 1.0]);
        let d = {
            let v = possibility(&mut t, &m, "p", 0, tau).unwrap();
            t.value(v)
        };
        assert!(d >= 1.0 - 1e-12 && d <= 1.0 + slack);

        let none = two_world_model(&mut t, vec![false; 4], [1.0, 1.0]);
        let d = {
            let v = possibility(&mut t, &none, "p", 0, tau).unwrap();
            t.value(v)
        };
        assert!(d >= 0.0 && d <= slack + 1e-12, "{d}");

        let pos = possibility(&mut t, &m, "p", 0, tau).unwrap();
        let neg = necessity_not(&mut t, &m, "p", 0, tau).unwrap();
        assert!((t.value(pos) + t.value(neg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradiction_loss_zero_and_product_cases() {
        let mut t = Tape::new();
        let tau = t.constant(0.05).unwrap();
        let worlds = vec![World::new(0, "w")];
        let mut m = KripkeModel::new(worlds, Accessibility::total(1)).unwrap();
        m.set_const(&mut t, "a", 0, 0.0).unwrap();
        m.set_const(&mut t, "q", 0, 0.2).unwrap();
        let axiom = ModalAxiom {
            antecedent: "a".into(),
            consequent: "q".into(),
            modality: Modality::Box,
            negate_consequent: false,
            world_scope: vec![0],
        };
        assert_eq!(
            {
                let v = contradiction_loss(&mut t, &m, &axiom, tau).unwrap();
                t.value(v)
            },
            0.0
        );

        // single world: box q = softmin{0.2} = 0.2 exactly
        m.set_const(&mut t, "a", 0, 1.0).unwrap();
        let l = {
            let v = contradiction_loss(&mut t, &m, &axiom, tau).unwrap();
            t.value(v)
        };
        assert!((l - 0.8).abs() < 1e-12);

        m.set_const(&mut t, "q", 0, 1.0).unwrap();
        assert_eq!(
            {
                let v = contradiction_loss(&mut t, &m, &axiom, tau).unwrap();
                t.value(v)
            },
            0.0
        );

        let empty = ModalAxiom {
            world_scope: vec![],
            ..axiom
        };
        assert!(contradiction_loss(&mut t, &m, &empty, tau).is_err());
    }

    #[test]
    fn sparsity_loss_cases() {
        let mut t = Tape::new();
        let a = Accessibility::learnable(&mut t, 5, 0.0, true).unwrap();
        assert_eq!(
            {
                let v = sparsity_loss(&mut t, &a).unwrap();
                t.value(v)
            },
            0.5
        );

        let logits: Vec<Var> = (0..25)
            .map(|k| t.param(if k == 1 { 800.0 } else { -800.0 }).unwrap())
            .collect();
        let one_edge = Accessibility::from_logits(&mut t, 5, &logits, true).unwrap();
        assert!(
            ({
                let v = sparsity_loss(&mut t, &one_edge).unwrap();
                t.value(v)
            } - 0.05)
                .abs()
                < 1e-12
        );

        let low: Vec<Var> = (0..25).map(|_| t.param(-700.0).unwrap()).collect();
        let low = Accessibility::from_logits(&mut t, 5, &low, true).unwrap();
        assert!(
            {
                let v = sparsity_loss(&mut t, &low).unwrap();
                t.value(v)
            } < 1e-300
        );

        assert!(sparsity_loss(&mut t, &Accessibility::total(2)).is_err());
    }

    #[test]
    fn knowledge_cap_and_axiom_loss() {
        let mut t = Tape::new();
        let cases = [(0.98, 1.0, 0.98), (0.12, 1.0, 0.12)];
        for (k, b, expected) in cases {
            let (kv, bv) = (t.constant(k).unwrap(), t.constant(b).unwrap());
            let cap = {
                let v = knowledge_cap(&mut t, kv, bv).unwrap();
                t.value(v)
            };
            assert!(
                cap <= expected && cap >= expected - CAP_TEMPERATURE * 2f64.ln(),
                "{cap}"
            );
        }
        let (kv, bv) = (t.constant(0.6).unwrap(), t.constant(0.6).unwrap());
        let cap = {
            let v = knowledge_cap(&mut t, kv, bv).unwrap();
            t.value(v)
        };
        assert!((cap - (0.6 - CAP_TEMPERATURE * 2f64.ln())).abs() < 1e-12);

        for (k, b, expected) in [(0.3, 0.9, 0.0), (0.9, 0.3, 0.6), (0.5, 0.5, 0.0)] {
            let (kv, bv) = (t.constant(k).unwrap(), t.constant(b).unwrap());
            let l = {
                let v = axiom_loss_k_leq_b(&mut t, kv, bv).unwrap();
                t.value(v)
            };
            assert!((l - expected).abs() < 1e-12);
        }
    }
}
