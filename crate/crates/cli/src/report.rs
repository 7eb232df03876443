//! Report shapes written by the CLI and the checks run on them.

use modalnet::scenario::collusion::{Edge, TrustReport};
use modalnet::scenario::portfolio::PortfolioReport;
use modalnet::scenario::safesigner::SafeSignerMetrics;
use modalnet::scenario::washsale::WashSaleOutcome;
use modalnet::gradcheck::GradcheckReport;
use serde::{Deserialize, Serialize};

/// One pass/fail line of `--check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub scenario: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(scenario: &str, name: &str, passed: bool, detail: String) -> Self {
        Check {
            scenario: scenario.into(),
            name: name.into(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {}/{}: {}", self.scenario, self.name, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub seed: u64,
    pub planted_weight: f64,
    pub max_other_weight: f64,
    pub argmax: [usize; 2],
    pub strong_edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollusionReport {
    pub n_traders: usize,
    pub seed: u64,
    pub lambda_sparse: f64,
    pub matrix: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
    pub final_contra_loss: f64,
    pub sweep: Vec<SweepEntry>,
    pub recovered: usize,
}

/// The planted cartel is trader 0 spoofing for trader 1.
pub const PLANTED: (usize, usize) = (0, 1);

impl SweepEntry {
    pub fn from_trust(r: &TrustReport) -> Self {
        let n = r.n_traders;
        let max_other = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && (i, j) != PLANTED)
            .map(|(i, j)| r.weight(i, j))
            .fold(0.0, f64::max);
        let (a, b) = r.argmax_edge();
        SweepEntry {
            seed: r.seed,
            planted_weight: r.weight(PLANTED.0, PLANTED.1),
            max_other_weight: max_other,
            argmax: [a, b],
            strong_edges: r.edges.len(),
        }
    }

    pub fn recovered(&self) -> bool {
        self.planted_weight > 0.9 && self.max_other_weight < 0.1
    }
}

impl CollusionReport {
    pub fn new(lambda_sparse: f64, runs: &[TrustReport]) -> Self {
        let first = &runs[0];
        let n = first.n_traders;
        let sweep: Vec<SweepEntry> = runs.iter().map(SweepEntry::from_trust).collect();
        CollusionReport {
            n_traders: n,
            seed: first.seed,
            lambda_sparse,
            matrix: first.matrix.chunks(n).map(|r| r.to_vec()).collect(),
            edges: first.edges.clone(),
            final_contra_loss: first.final_contra_loss,
            recovered: sweep.iter().filter(|s| s.recovered()).count(),
            sweep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub classical: f64,
    pub modal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PortfolioJson {
    pub w_classical: f64,
    pub w_modal: f64,
    pub E_R_both: Pair,
    pub crash_value_both: Pair,
    pub necessity_solvent_both: Pair,
    pub feasible_bond_fraction: f64,
}

impl From<&PortfolioReport> for PortfolioJson {
    fn from(r: &PortfolioReport) -> Self {
        let pair = |f: fn(&modalnet::scenario::portfolio::AllocationReport) -> f64| Pair {
            classical: f(&r.classical),
            modal: f(&r.modal),
        };
        PortfolioJson {
            w_classical: r.classical.bond_fraction,
            w_modal: r.modal.bond_fraction,
            E_R_both: pair(|a| a.expected_return),
            crash_value_both: pair(|a| a.crash_value),
            necessity_solvent_both: pair(|a| a.necessity_solvent),
            feasible_bond_fraction: r.feasible_bond_fraction,
        }
    }
}

pub fn gradcheck_checks(r: &GradcheckReport) -> Vec<Check> {
    let c = &r.softmin_contract;
    vec![
        Check::new(
            "gradcheck",
            "gradient_fidelity",
            r.max_rel_err < 1e-4 && r.max_depth_seen <= 30,
            format!("max rel err {:.3e} over {} graphs", r.max_rel_err, r.graphs),
        ),
        Check::new(
            "gradcheck",
            "softmin_bounds",
            c.max_upper_excess <= 0.0 && c.max_lower_deficit <= 1e-12,
            format!(
                "{} vectors, upper excess {:.1e}, lower deficit {:.1e}",
                c.vectors, c.max_upper_excess, c.max_lower_deficit
            ),
        ),
        Check::new(
            "gradcheck",
            "duality",
            c.max_duality_err <= 1e-12,
            format!("max |poss - (1 - nec(not))| {:.1e}", c.max_duality_err),
        ),
    ]
}

pub fn washsale_checks(o: &WashSaleOutcome) -> Vec<Check> {
    let (b, m) = (&o.baseline, &o.modal);
    vec![
        Check::new(
            "washsale",
            "baseline_violates",
            b.violations >= 1,
            format!("{} with {} violations", b.strategy, b.violations),
        ),
        Check::new(
            "washsale",
            "modal_complies",
            m.violations == 0,
            format!("{} with {} violations", m.strategy, m.violations),
        ),
        Check::new(
            "washsale",
            "profit_ordering",
            m.profit > 0.0 && m.profit < b.profit && m.discrete_profit > 0.0 && m.discrete_profit < b.discrete_profit,
            format!(
                "expected 0 < {:.2} < {:.2}, discrete 0 < {:.2} < {:.2}",
                m.profit, b.profit, m.discrete_profit, b.discrete_profit
            ),
        ),
        Check::new(
            "washsale",
            "optimum_is_wash",
            o.unconstrained_optimum.violations >= 1,
            format!(
                "enumerated optimum {} ({:.2})",
                o.unconstrained_optimum.strategy, o.unconstrained_optimum.profit
            ),
        ),
    ]
}

pub fn collusion_checks(r: &CollusionReport) -> Vec<Check> {
    let mut checks: Vec<Check> = r
        .sweep
        .iter()
        .map(|s| {
            Check::new(
                "collusion",
                &format!("seed_{}", s.seed),
                s.recovered() && s.strong_edges == 1,
                format!(
                    "A(0,1) = {:.4}, max other = {:.4}, strong edges {}",
                    s.planted_weight, s.max_other_weight, s.strong_edges
                ),
            )
        })
        .collect();
    checks.push(Check::new(
        "collusion",
        "recovery",
        r.recovered == r.sweep.len() && !r.sweep.is_empty(),
        format!("{}/{}", r.recovered, r.sweep.len()),
    ));
    checks
}

pub fn portfolio_checks(p: &PortfolioJson) -> Vec<Check> {
    vec![
        Check::new(
            "portfolio",
            "classical_allocation",
            p.w_classical < 0.05 && (p.E_R_both.classical - 0.070).abs() <= 0.001,
            format!("w = {:.4}, E[R] = {:.3}%", p.w_classical, 100.0 * p.E_R_both.classical),
        ),
        Check::new(
            "portfolio",
            "modal_crash_value",
            p.crash_value_both.modal >= 0.90,
            format!("crash value {:.4}", p.crash_value_both.modal),
        ),
        Check::new(
            "portfolio",
            "modal_allocation",
            p.w_modal >= p.feasible_bond_fraction - 0.01,
            format!("w = {:.4} vs bound {:.4}", p.w_modal, p.feasible_bond_fraction),
        ),
        Check::new(
            "portfolio",
            "modal_return",
            (0.020..=0.025).contains(&p.E_R_both.modal) && p.E_R_both.modal <= p.E_R_both.classical,
            format!("E[R] = {:.3}%", 100.0 * p.E_R_both.modal),
        ),
    ]
}

pub fn safesigner_checks(m: &SafeSignerMetrics) -> Vec<Check> {
    vec![
        Check::new(
            "safesigner",
            "trap_detection",
            m.test_traps > 0 && m.trap_detection_rate == 1.0,
            format!("{:.1}% of {} traps", 100.0 * m.trap_detection_rate, m.test_traps),
        ),
        Check::new(
            "safesigner",
            "belief_knowledge_gap",
            m.mean_bk_gap_traps >= 0.9,
            format!("mean B - K_final on traps {:.4}", m.mean_bk_gap_traps),
        ),
        Check::new(
            "safesigner",
            "knowledge_capped",
            m.k_gt_b_violations == 0,
            format!("{} documents with K > B", m.k_gt_b_violations),
        ),
        Check::new(
            "safesigner",
            "temperature",
            m.tau_final < 0.05 && m.tau_final < m.tau_initial,
            format!("tau {} -> {:.4}", m.tau_initial, m.tau_final),
        ),
    ]
}
