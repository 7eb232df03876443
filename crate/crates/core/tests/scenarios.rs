use std::path::Path;

use modalnet::scenario::collusion::{self, CollusionConfig, MarketConfig};
use modalnet::scenario::safesigner::corpus::{self, CorpusConfig};
use modalnet::scenario::safesigner::ingest;
use modalnet::scenario::washsale::{self, Action, MarketScript, WashSaleConfig};

/// Best profit by dynamic programming over "steps left in the wash window",
/// independent of the enumerator.
fn dp_optimum(script: &MarketScript, compliant: bool) -> f64 {
    let window = script.wash_window;
    // best[k]: best profit from step t on when buys are blocked for k more steps.
    let mut best = vec![0.0f64; window + 1];
    for t in (0..script.horizon).rev() {
        let mut next = vec![f64::NEG_INFINITY; window + 1];
        for (k, slot) in next.iter_mut().enumerate() {
            let carry = k.saturating_sub(1);
            for a in Action::ALL {
                if compliant && a == Action::Buy && k > 0 {
                    continue;
                }
                let blocked = if compliant && a == Action::Sell && script.at_loss(t) {
                    window.max(carry)
                } else {
                    carry
                };
                *slot = slot.max(script.payoff(a, t) + best[blocked]);
            }
        }
        best = next;
    }
    best[0]
}

#[test]
fn enumeration_matches_dynamic_programming() {
    let script = MarketScript::default();
    let free = washsale::exhaustive_optimum(&script, false);
    let compliant = washsale::exhaustive_optimum(&script, true);
    assert!((free.profit - dp_optimum(&script, false)).abs() < 1e-9);
    assert!((compliant.profit - dp_optimum(&script, true)).abs() < 1e-9);
    assert!(free.violations >= 1);
    assert_eq!(compliant.violations, 0);
    assert!(compliant.profit < free.profit);
}

#[test]
fn washsale_modal_policy_reshapes_rather_than_freezes() {
    let outcome = washsale::run_scenario(&WashSaleConfig::default()).unwrap();
    let horizon = MarketScript::default().horizon;
    assert!(outcome.baseline.violations >= 1, "{:?}", outcome.baseline.strategy);
    assert_eq!(outcome.modal.violations, 0);
    assert!(outcome.modal.profit > 0.0 && outcome.modal.profit < outcome.baseline.profit);
    assert!(outcome.modal.non_hold_actions >= horizon - 2);
    // The annealed policy lands on the compliant optimum.
    assert_eq!(outcome.modal.strategy, outcome.compliant_optimum.strategy);
}

#[test]
fn market_counting_oracles() {
    let config = MarketConfig {
        n_steps: 20_000,
        ..MarketConfig::default()
    };
    let events = collusion::generate_market(&config).unwrap();
    let steps = events.n_steps as f64;
    let spoofs: Vec<usize> = (0..events.n_steps).filter(|&s| events.spoof_at(s, 0) == 1.0).collect();
    assert!(spoofs.iter().all(|&s| events.profit_at(s, 1) == 1.0), "P(profit1 | spoof0) must be 1");
    assert!((spoofs.len() as f64 / steps - config.spoof_rate).abs() < 0.015);
    for trader in 2..config.n_traders {
        let spoof = (0..events.n_steps).filter(|&s| events.spoof_at(s, trader) == 1.0).count() as f64;
        let profit = (0..events.n_steps).filter(|&s| events.profit_at(s, trader) == 1.0).count() as f64;
        assert!((spoof / steps - config.noise_spoof_rate).abs() < 0.01);
        assert!((profit / steps - config.noise_profit_rate).abs() < 0.01);
    }
}

#[test]
fn lagged_market_profits_after_the_spoof() {
    let config = MarketConfig {
        lag: 2,
        ..MarketConfig::default()
    };
    let events = collusion::generate_market(&config).unwrap();
    for s in 0..events.n_steps - 2 {
        if events.spoof_at(s, 0) == 1.0 {
            assert_eq!(events.profit_at(s + 2, 1), 1.0);
        }
    }
}

#[test]
fn collusion_recovery_across_lambda_and_seeds() {
    for lambda in [0.25, 0.5, 0.75] {
        let config = CollusionConfig {
            lambda_sparse: lambda,
            ..CollusionConfig::default()
        };
        let runs = collusion::run_sweep(&config, &[42, 43, 44, 45, 46]).unwrap();
        for r in &runs {
            assert_eq!(r.argmax_edge(), (0, 1), "lambda {lambda}, seed {}", r.seed);
            assert_eq!(r.edges.len(), 1, "lambda {lambda}, seed {}: {:?}", r.seed, r.edges);
        }
    }
}

#[test]
fn collusion_permutation_equivariance() {
    let config = CollusionConfig::default();
    let events = collusion::generate_market(&config.market).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let original = collusion::train_on(&events, &config).unwrap();
    let relabeled = collusion::train_on(&events.permuted(&perm).unwrap(), &config).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            if i == j {
                continue;
            }
            let (a, b) = (original.weight(i, j), relabeled.weight(perm[i], perm[j]));
            assert!((a - b).abs() <= 0.05, "A({i},{j}) = {a} vs A'({},{}) = {b}", perm[i], perm[j]);
        }
    }
    assert_eq!(relabeled.argmax_edge(), (perm[0], perm[1]));
}

#[test]
fn golden_two_row_fixture() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_rows.csv");
    let report = ingest::read_rows_from_path(&path).unwrap();
    assert!(report.errors.is_empty() && report.warnings.is_empty());
    assert_eq!(report.rows.len(), 2);
    let (trap, nda) = (&report.rows[0], &report.rows[1]);
    assert_eq!(trap.title, "Master Services Agreement");
    assert_eq!(trap.clause_text, "Licensee grants a perpetual, irrevocable license to all work product");
    assert!(!trap.label_safe);
    assert_eq!(trap.risk_tier, 3);
    assert!(ingest::looks_like_trap(trap));
    assert_eq!(nda.clause_text, "Each party keeps the other party's information confidential");
    assert!(nda.label_safe);
    assert_eq!(nda.risk_tier, 0);
    assert!(!ingest::looks_like_trap(nda));
    let vocab = corpus::Vocab::new();
    assert_eq!(ingest::to_doc(trap, &vocab).risk, [0.0, 0.0, 0.0, 1.0]);
    assert_eq!(ingest::to_doc(nda, &vocab).risk, [1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn synthetic_trap_titles_are_indistinguishable() {
    let corpus = corpus::generate_corpus(&CorpusConfig::default()).unwrap();
    let docs: Vec<_> = corpus.all_docs().cloned().collect();
    let check = corpus::title_self_check(&docs).unwrap();
    assert!(check.p_value > 0.05, "{check:?}");
    let traps = corpus.test.iter().filter(|d| d.is_trap).count();
    assert!(traps > 0);
    assert!(corpus.test.iter().filter(|d| d.is_trap).all(|d| !d.label_safe && d.title_safe()));
}
