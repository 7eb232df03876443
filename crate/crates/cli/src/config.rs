//! JSON run configuration with one optional section per scenario.

use std::path::Path;

use anyhow::{Context, Result};
use modalnet::{CollusionConfig, GradcheckConfig, PortfolioConfig, SafeSignerConfig, WashSaleConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub washsale: WashSaleConfig,
    pub collusion: CollusionConfig,
    pub portfolio: PortfolioConfig,
    pub safesigner: SafeSignerConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Point every seeded component at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.washsale.seed = seed;
        self.collusion.market.seed = seed;
        self.safesigner.seed = seed;
        self.safesigner.corpus.seed = seed;
        self.gradcheck.seed = seed;
        self
    }
}
