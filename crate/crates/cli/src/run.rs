//! Runs scenarios and writes their artifacts under `<out>/<scenario>/`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use modalnet::scenario::safesigner::{self, ingest};
use modalnet::scenario::{collusion, portfolio, washsale};
use modalnet::trainer::loss_history_csv;
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{self, Check, CollusionReport, PortfolioJson};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Washsale,
    Collusion,
    Portfolio,
    Safesigner,
    Gradcheck,
    All,
}

impl Scenario {
    pub const SINGLE: [Scenario; 5] = [
        Scenario::Washsale,
        Scenario::Collusion,
        Scenario::Portfolio,
        Scenario::Safesigner,
        Scenario::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Washsale => "washsale",
            Scenario::Collusion => "collusion",
            Scenario::Portfolio => "portfolio",
            Scenario::Safesigner => "safesigner",
            Scenario::Gradcheck => "gradcheck",
            Scenario::All => "all",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub cuad: Option<PathBuf>,
    pub parallel: bool,
    pub verbose: bool,
}

/// Result of one scenario: a short summary plus its checks.
#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub summary: String,
    pub checks: Vec<Check>,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, &text)
}

fn scenario_dir(out: &Path, scenario: Scenario) -> Result<PathBuf> {
    let dir = out.join(scenario.name());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Run one scenario or, for `All`, every scenario in a fixed order.
pub fn run(scenario: Scenario, config: &RunConfig, opts: &RunOptions) -> Result<Vec<ScenarioResult>> {
    if scenario != Scenario::All {
        return Ok(vec![run_single(scenario, config, opts)?]);
    }
    if !opts.parallel {
        return Scenario::SINGLE.iter().map(|&s| run_single(s, config, opts)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = Scenario::SINGLE
            .iter()
            .map(|&s| scope.spawn(move || run_single(s, config, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("scenario thread panicked"))))
            .collect()
    })
}

pub fn run_single(scenario: Scenario, config: &RunConfig, opts: &RunOptions) -> Result<ScenarioResult> {
    if opts.verbose {
        eprintln!("running {scenario}");
    }
    let dir = scenario_dir(&opts.out, scenario)?;
    let result = match scenario {
        Scenario::Washsale => run_washsale(config, &dir),
        Scenario::Collusion => run_collusion(config, &dir),
        Scenario::Portfolio => run_portfolio(config, &dir),
        Scenario::Safesigner => run_safesigner(config, opts.cuad.as_deref(), &dir),
        Scenario::Gradcheck => run_gradcheck(config, &dir),
        Scenario::All => unreachable!("`all` is expanded by `run`"),
    };
    let (summary, checks) = result.with_context(|| format!("scenario {scenario} failed"))?;
    if opts.verbose {
        eprintln!("finished {scenario}, wrote {}", dir.display());
    }
    Ok(ScenarioResult {
        scenario,
        summary,
        checks,
    })
}

fn run_washsale(config: &RunConfig, dir: &Path) -> Result<(String, Vec<Check>)> {
    let outcome = washsale::run_scenario(&config.washsale)?;
    write_json(dir, "report.json", &outcome)?;
    write(dir, "loss_baseline.csv", &loss_history_csv(&outcome.baseline.loss_history))?;
    write(dir, "loss_modal.csv", &loss_history_csv(&outcome.modal.loss_history))?;
    let summary = format!(
        "washsale: baseline {} (profit {:.2}, {} violations), modal {} (profit {:.2}, {} violations)",
        outcome.baseline.strategy,
        outcome.baseline.discrete_profit,
        outcome.baseline.violations,
        outcome.modal.strategy,
        outcome.modal.discrete_profit,
        outcome.modal.violations
    );
    Ok((summary, report::washsale_checks(&outcome)))
}

fn run_collusion(config: &RunConfig, dir: &Path) -> Result<(String, Vec<Check>)> {
    let c = &config.collusion;
    let seeds: Vec<u64> = (0..c.sweep.max(1) as u64).map(|k| c.market.seed + k).collect();
    let runs = collusion::run_sweep(c, &seeds)?;
    let first = &runs[0];
    let rep = CollusionReport::new(c.lambda_sparse, &runs);
    write_json(dir, "report.json", &rep)?;
    write(dir, "trust_matrix.csv", &first.matrix_csv())?;
    write_json(dir, "edges.json", &first.edges)?;
    write(dir, "loss.csv", &loss_history_csv(&first.loss_history))?;
    let summary = format!(
        "collusion: A(0,1) = {:.4}, {} strong edges, recovered {}/{} seeds",
        rep.sweep[0].planted_weight,
        rep.edges.len(),
        rep.recovered,
        rep.sweep.len()
    );
    Ok((summary, report::collusion_checks(&rep)))
}

fn run_portfolio(config: &RunConfig, dir: &Path) -> Result<(String, Vec<Check>)> {
    let rep = portfolio::run_scenario(&config.portfolio)?;
    let json = PortfolioJson::from(&rep);
    write_json(dir, "report.json", &json)?;
    write(dir, "loss_classical.csv", &loss_history_csv(&rep.classical.loss_history))?;
    write(dir, "loss_modal.csv", &loss_history_csv(&rep.modal.loss_history))?;
    let summary = format!(
        "portfolio: classical w = {:.3} (E[R] {:.2}%), modal w = {:.3} (E[R] {:.2}%, crash value {:.3})",
        json.w_classical,
        100.0 * json.E_R_both.classical,
        json.w_modal,
        100.0 * json.E_R_both.modal,
        json.crash_value_both.modal
    );
    Ok((summary, report::portfolio_checks(&json)))
}

fn run_safesigner(config: &RunConfig, cuad: Option<&Path>, dir: &Path) -> Result<(String, Vec<Check>)> {
    let cfg = &config.safesigner;
    let outcome = match cuad {
        None => safesigner::run_scenario(cfg)?,
        Some(path) => {
            let ingest = ingest::read_rows_from_path(path).with_context(|| format!("reading {}", path.display()))?;
            write_json(
                dir,
                "ingest.json",
                &serde_json::json!({
                    "rows": ingest.rows.len(),
                    "errors": ingest.errors,
                    "warnings": ingest.warnings,
                }),
            )?;
            for e in &ingest.errors {
                eprintln!("warning: {}: line {}: {}", path.display(), e.line, e.message);
            }
            for w in &ingest.warnings {
                eprintln!("warning: {}: {w}", path.display());
            }
            let corpus = ingest::corpus_from_rows(&ingest.rows, cfg.test_fraction, cfg.seed)?;
            safesigner::run_on_corpus(&corpus, cfg)?
        }
    };
    write_json(dir, "metrics.json", &outcome.metrics)?;
    write(dir, "verdicts.csv", &safesigner::verdicts_csv(&outcome.verdicts)?)?;
    write(dir, "loss.csv", &loss_history_csv(&outcome.loss_history))?;
    let mut tau = String::from("epoch,tau\n");
    for (epoch, t) in outcome.tau_history.iter().enumerate() {
        tau.push_str(&format!("{epoch},{t}\n"));
    }
    write(dir, "tau.csv", &tau)?;
    let m = &outcome.metrics;
    let summary = format!(
        "safesigner: F1 {:.3}, trap detection {:.1}%, mean B-K gap on traps {:.3}, tau {} -> {:.4}",
        m.f1,
        100.0 * m.trap_detection_rate,
        m.mean_bk_gap_traps,
        m.tau_initial,
        m.tau_final
    );
    Ok((summary, report::safesigner_checks(m)))
}

fn run_gradcheck(config: &RunConfig, dir: &Path) -> Result<(String, Vec<Check>)> {
    let rep = modalnet::gradcheck::run(&config.gradcheck)?;
    write_json(dir, "report.json", &rep)?;
    let summary = format!(
        "gradcheck: max rel err {:.3e} over {} graphs ({} nodes, depth <= {})",
        rep.max_rel_err, rep.graphs, rep.total_nodes, rep.max_depth_seen
    );
    Ok((summary, report::gradcheck_checks(&rep)))
}
