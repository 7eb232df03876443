//! Command-line front end for the modal training scenarios.

pub mod config;
pub mod report;
pub mod run;

use std::path::PathBuf;

use clap::Parser;

pub use config::RunConfig;
pub use report::Check;
pub use run::{RunOptions, Scenario, ScenarioResult};

/// Exit status when `--check` finds a failing criterion.
pub const EXIT_CHECK_FAILED: i32 = 2;
/// Exit status for usage, config and runtime errors.
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "modalnet", version, about = "Train and audit differentiable modal-logic scenarios")]
pub struct Cli {
    /// Scenario to run.
    #[arg(value_enum)]
    pub scenario: Scenario,
    /// JSON config with optional per-scenario sections.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", env = "MODALNET_OUT_DIR", default_value = "out")]
    pub out: PathBuf,
    /// Override every scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print PASS/FAIL per criterion and exit 2 if any fails.
    #[arg(long)]
    pub check: bool,
    /// Run the scenarios of `all` concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Progress messages on stderr.
    #[arg(short, long)]
    pub verbose: bool,
    /// Train Safe Signer on a contract CSV (title,clause_text,label_safe,risk_tier).
    #[arg(long, value_name = "CSV")]
    pub cuad: Option<PathBuf>,
}

/// Execute a parsed command line and return the process exit status.
pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let opts = RunOptions {
        out: cli.out.clone(),
        cuad: cli.cuad.clone(),
        parallel: cli.parallel,
        verbose: cli.verbose,
    };
    let results = run::run(cli.scenario, &config, &opts)?;
    for r in &results {
        println!("{}", r.summary);
    }
    if !cli.check {
        return Ok(0);
    }
    let mut failed = 0;
    for check in results.iter().flat_map(|r| &r.checks) {
        println!("{}", check.line());
        failed += usize::from(!check.passed);
    }
    Ok(if failed == 0 { 0 } else { EXIT_CHECK_FAILED })
}
