//! Documents, vocabulary and the synthetic trap corpus.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng;

pub const UNK: &str = "<unk>";

/// Title words that announce risk outright. Shared with CSV ingestion,
/// where a risky document without any of them is taken to be a trap.
pub const RISKY_TITLE_WORDS: &[&str] = &[
    "indemnity", "penalty", "guarantee", "waiver", "forfeiture", "default", "collateral", "liquidated",
];

const SAFE_TITLE_WORDS: &[&str] = &[
    "services", "agreement", "supply", "license", "master", "consulting", "distribution", "joint",
    "venture", "lease", "purchase", "employment", "maintenance", "reseller", "hosting", "marketing",
];

const FILLER_WORDS: &[&str] = &[
    "the", "party", "shall", "provide", "within", "days", "notice", "written", "terms", "under",
    "this", "including", "parties", "agree", "effective", "date", "period", "upon", "request",
    "delivery", "schedule", "price", "payment", "invoice", "section", "herein", "respective",
    "obligations", "reasonable", "efforts", "customer", "supplier", "goods", "work", "records",
    "business", "hours", "contact", "address", "signature",
];

/// Sounds like risk, carries none.
const ADJACENT_WORDS: &[&str] = &["warranty", "insurance", "confidential", "limitation", "dispute", "remedy"];

const TIER_WORDS: [&[&str]; 3] = [
    &["late", "fee", "renewal", "automatic", "interest", "surcharge"],
    &["exclusivity", "noncompete", "audit", "termination", "minimum", "commitment"],
    &["unlimited", "liability", "irrevocable", "perpetual", "assignment", "uncapped"],
];

/// Token ids by string; id 0 is the unknown token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK);
        v
    }

    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(UNK, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Lowercase, split on whitespace, map unseen words to 0.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(&w.to_lowercase())).collect()
    }

    /// Like [`Vocab::encode`] but adds unseen words.
    pub fn encode_growing(&mut self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.insert(&w.to_lowercase())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    CleanSafe,
    OvertRisky,
    Trap,
    NoisySafe,
    /// Ingested from CSV.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractDoc {
    pub title: Vec<u32>,
    pub clause: Vec<u32>,
    pub label_safe: bool,
    pub is_trap: bool,
    /// One-hot risk annotation over the four worlds.
    pub risk: [f64; 4],
    pub kind: DocKind,
}

impl ContractDoc {
    pub fn tier(&self) -> usize {
        (0..4).rev().find(|&i| self.risk[i] > 0.5).unwrap_or(0)
    }

    /// What the title alone says; traps read as safe.
    pub fn title_safe(&self) -> bool {
        self.label_safe || self.is_trap
    }
}

pub fn one_hot(tier: usize) -> [f64; 4] {
    let mut r = [0.0; 4];
    r[tier.min(3)] = 1.0;
    r
}

/// Shares of each kind in a split; normalized when used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KindMix {
    pub clean_safe: f64,
    pub noisy_safe: f64,
    pub overt_risky: f64,
    pub trap: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix {
            clean_safe: 0.35,
            noisy_safe: 0.15,
            overt_risky: 0.25,
            trap: 0.25,
        }
    }
}

impl KindMix {
    fn counts(&self, n: usize) -> Result<[(DocKind, usize); 4]> {
        let shares = [self.clean_safe, self.noisy_safe, self.overt_risky, self.trap];
        let total: f64 = shares.iter().sum();
        if shares.iter().any(|s| *s < 0.0 || !s.is_finite()) || total <= 0.0 {
            return Err(Error::Config("document mix shares must be non-negative and not all zero".into()));
        }
        let mut counts = shares.map(|s| (s / total * n as f64).floor() as usize);
        // Remainder goes to the clean-safe bucket.
        counts[0] += n - counts.iter().sum::<usize>();
        Ok([
            (DocKind::CleanSafe, counts[0]),
            (DocKind::NoisySafe, counts[1]),
            (DocKind::OvertRisky, counts[2]),
            (DocKind::Trap, counts[3]),
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub train_docs: usize,
    pub test_docs: usize,
    pub train_mix: KindMix,
    pub test_mix: KindMix,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_docs: 2000,
            test_docs: 640,
            train_mix: KindMix::default(),
            test_mix: KindMix::default(),
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TitleCheck {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub train: Vec<ContractDoc>,
    pub test: Vec<ContractDoc>,
}

impl Corpus {
    pub fn all_docs(&self) -> impl Iterator<Item = &ContractDoc> {
        self.train.iter().chain(&self.test)
    }
}

fn synthetic_vocab() -> Vocab {
    let mut v = Vocab::new();
    let lists = [RISKY_TITLE_WORDS, SAFE_TITLE_WORDS, FILLER_WORDS, ADJACENT_WORDS]
        .into_iter()
        .chain(TIER_WORDS);
    for list in lists {
        for w in list {
            v.insert(w);
        }
    }
    v
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str], n: usize) -> Vec<&'a str> {
    (0..n).map(|_| words[rng.random_range(0..words.len())]).collect()
}

fn safe_title(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = rng.random_range(2..=4);
    pick(rng, SAFE_TITLE_WORDS, n)
}

fn clause(rng: &mut ChaCha8Rng, extra: Vec<&'static str>) -> Vec<&'static str> {
    let n = rng.random_range(8..=12);
    let mut words = pick(rng, FILLER_WORDS, n);
    for w in extra {
        let at = rng.random_range(0..=words.len());
        words.insert(at, w);
    }
    words
}

fn make_doc(rng: &mut ChaCha8Rng, vocab: &Vocab, kind: DocKind) -> ContractDoc {
    let (title, body, label_safe, tier) = match kind {
        DocKind::CleanSafe | DocKind::External => (safe_title(rng), clause(rng, Vec::new()), true, 0),
        DocKind::NoisySafe => {
            let n = rng.random_range(1..=2);
            let extra = pick(rng, ADJACENT_WORDS, n);
            (safe_title(rng), clause(rng, extra), true, 0)
        }
        DocKind::OvertRisky => {
            let tier = rng.random_range(1..=3);
            let (n_risky, n_safe) = (rng.random_range(1..=2), rng.random_range(0..=2));
            let mut title = pick(rng, RISKY_TITLE_WORDS, n_risky);
            title.extend(pick(rng, SAFE_TITLE_WORDS, n_safe));
            title.shuffle(rng);
            let n = rng.random_range(1..=2);
            let extra = pick(rng, TIER_WORDS[tier - 1], n);
            (title, clause(rng, extra), false, tier)
        }
        DocKind::Trap => {
            // Only severe clauses make traps: a minor or moderate world cannot
            // pull knowledge down to the trap threshold.
            let n = rng.random_range(1..=2);
            let extra = pick(rng, TIER_WORDS[2], n);
            (safe_title(rng), clause(rng, extra), false, 3)
        }
    };
    ContractDoc {
        title: title.iter().map(|w| vocab.id(w)).collect(),
        clause: body.iter().map(|w| vocab.id(w)).collect(),
        label_safe,
        is_trap: kind == DocKind::Trap,
        risk: one_hot(tier),
        kind,
    }
}

fn split(rng: &mut ChaCha8Rng, vocab: &Vocab, n: usize, mix: &KindMix) -> Result<Vec<ContractDoc>> {
    let mut docs = Vec::with_capacity(n);
    for (kind, count) in mix.counts(n)? {
        docs.extend((0..count).map(|_| make_doc(rng, vocab, kind)));
    }
    docs.shuffle(rng);
    Ok(docs)
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    let vocab = synthetic_vocab();
    let mut train_rng = rng::stream(config.seed, "safesigner/corpus/train");
    let mut test_rng = rng::stream(config.seed, "safesigner/corpus/test");
    Ok(Corpus {
        train: split(&mut train_rng, &vocab, config.train_docs, &config.train_mix)?,
        test: split(&mut test_rng, &vocab, config.test_docs, &config.test_mix)?,
        vocab,
    })
}

/// Chi-square homogeneity test of title token counts, trap titles against
/// clean-safe titles. A large p-value means the titles give traps away no
/// more than chance would.
pub fn title_self_check(docs: &[ContractDoc]) -> Option<TitleCheck> {
    let mut counts: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    for d in docs {
        let col = match d.kind {
            DocKind::Trap => 0,
            DocKind::CleanSafe => 1,
            _ => continue,
        };
        for &t in &d.title {
            counts.entry(t).or_default()[col] += 1.0;
        }
    }
    let totals = counts.values().fold([0.0; 2], |acc, c| [acc[0] + c[0], acc[1] + c[1]]);
    let grand = totals[0] + totals[1];
    if counts.len() < 2 || totals.contains(&0.0) {
        return None;
    }
    let statistic = counts
        .values()
        .map(|c| {
            let row = c[0] + c[1];
            (0..2)
                .map(|k| {
                    let expected = row * totals[k] / grand;
                    (c[k] - expected).powi(2) / expected
                })
                .sum::<f64>()
        })
        .sum();
    let dof = counts.len() - 1;
    let dist = ChiSquared::new(dof as f64).ok()?;
    Some(TitleCheck {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_corpus_is_reproducible() {
        let c = CorpusConfig {
            train_docs: 200,
            test_docs: 64,
            ..Default::default()
        };
        assert_eq!(generate_corpus(&c).unwrap(), generate_corpus(&c).unwrap());
    }

    #[test]
    fn default_sizes_and_trap_share() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        assert_eq!(c.train.len(), 2000);
        assert_eq!(c.test.len(), 640);
        assert_eq!(c.test.iter().filter(|d| d.is_trap).count(), 160);
    }

    #[test]
    fn traps_carry_tier_tokens() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        for d in c.all_docs().filter(|d| !d.label_safe) {
            let tier = d.tier();
            assert!(tier >= 1);
            let words: Vec<&str> = d.clause.iter().map(|&t| c.vocab.token(t)).collect();
            assert!(words.iter().any(|w| TIER_WORDS[tier - 1].contains(w)));
        }
        for d in c.all_docs().filter(|d| d.is_trap) {
            assert!(d.title.iter().all(|&t| !RISKY_TITLE_WORDS.contains(&c.vocab.token(t))));
        }
    }

    #[test]
    fn trap_titles_pass_self_check() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        let docs: Vec<ContractDoc> = c.all_docs().cloned().collect();
        let check = title_self_check(&docs).unwrap();
        assert!(check.p_value > 0.05, "{check:?}");
        assert_eq!(check.dof, SAFE_TITLE_WORDS.len() - 1);
    }

    #[test]
    fn chi_square_flags_distinct_titles() {
        let doc = |title: Vec<u32>, kind| ContractDoc {
            title,
            clause: vec![],
            label_safe: kind == DocKind::CleanSafe,
            is_trap: kind == DocKind::Trap,
            risk: one_hot(0),
            kind,
        };
        let mut docs = Vec::new();
        for _ in 0..50 {
            docs.push(doc(vec![1, 1, 2], DocKind::Trap));
            docs.push(doc(vec![3, 3, 2], DocKind::CleanSafe));
        }
        assert!(title_self_check(&docs).unwrap().p_value < 1e-6);
    }

    #[test]
    fn vocab_round_trip() {
        let mut v = Vocab::new();
        let ids = v.encode_growing("Master  SERVICES agreement");
        assert_eq!(v.decode(&ids), "master services agreement");
        assert_eq!(v.encode("unseen master"), vec![0, ids[0]]);
    }
}
