//! Belief versus knowledge for contract review.
//!
//! A Proposer head reads the title and outputs a belief `B` that the
//! contract is safe. An Auditor head reads the clause and outputs how
//! strongly the contract reaches each of four risk worlds. Knowledge is the
//! necessity of `Safe` over those worlds, capped by belief.

pub mod corpus;
pub mod heads;
pub mod ingest;

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, TAU_FLOOR};
use crate::error::{Error, Result};
use crate::kripke::{Accessibility, KripkeModel, SAFE};
use crate::modal_ops;
use crate::rng;
use crate::trainer::{Adam, EpochRecord};

use corpus::{title_self_check, ContractDoc, Corpus, CorpusConfig, TitleCheck};
use heads::{embedding_grad, Embedding, Head, HeadCache, HeadShape, Packed};

pub const SEVERITIES: [f64; 4] = [0.0, 0.3, 0.6, 1.0];

pub const BELIEF: &str = "belief";
pub const RISK: &str = "risk";
pub const CONTRASTIVE: &str = "contrastive";
pub const AXIOM: &str = "axiom";
pub const VERIFY: &str = "verify";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafeSignerConfig {
    pub corpus: CorpusConfig,
    pub shape: HeadShape,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau_init: f64,
    pub margin: f64,
    pub lambda_contrastive: f64,
    pub lambda_axiom: f64,
    /// Weight of `max(0, B - K_final)` on documents labelled safe.
    pub lambda_verify: f64,
    pub verified_threshold: f64,
    pub trap_threshold: f64,
    /// Held-out share when the corpus comes from CSV.
    pub test_fraction: f64,
    pub train_baseline: bool,
    pub seed: u64,
}

impl Default for SafeSignerConfig {
    fn default() -> Self {
        SafeSignerConfig {
            corpus: CorpusConfig::default(),
            shape: HeadShape::default(),
            learning_rate: 0.001,
            epochs: 50,
            batch_size: 32,
            tau_init: 0.1,
            margin: 0.8,
            lambda_contrastive: 0.3,
            lambda_axiom: 0.2,
            lambda_verify: 0.2,
            verified_threshold: 0.75,
            trap_threshold: 0.25,
            test_fraction: 0.2,
            train_baseline: true,
            seed: 42,
        }
    }
}

impl SafeSignerConfig {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be a non-negative number".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.tau_init > TAU_FLOOR) {
            return Err(Error::Config(format!("tau_init must exceed {TAU_FLOOR}")));
        }
        if !(self.trap_threshold < self.verified_threshold) {
            return Err(Error::Config("trap_threshold must be below verified_threshold".into()));
        }
        Ok(())
    }
}

/// `K = box Safe` at the actual world `w0`, whose row of accessibility is
/// `sigmoid(a_logits)`. Each risk world contributes `1 - A_i * severity_i`.
pub fn knowledge(tape: &mut Tape, a_logits: &[Var], tau: Var) -> Result<Var> {
    let access = Accessibility::learnable_row(tape, SEVERITIES.len(), 0, a_logits)?;
    let model = KripkeModel::risk_worlds(tape, &SEVERITIES, access)?;
    modal_ops::necessity(tape, &model, SAFE, 0, tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    VerifiedSafe,
    TrapDetected,
    Uncertain,
}

pub fn categorize(belief: f64, k_final: f64, verified: f64, trap: f64) -> Category {
    if k_final >= verified {
        Category::VerifiedSafe
    } else if belief >= verified && k_final <= trap {
        Category::TrapDetected
    } else {
        Category::Uncertain
    }
}

fn explain(category: Category, belief: f64, k_final: f64, access: &[f64; 4]) -> String {
    let (world, weight) = (1..4)
        .map(|i| (i, access[i] * SEVERITIES[i]))
        .fold((1, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    match category {
        Category::VerifiedSafe => "no risk world is reachable from the clause".into(),
        Category::TrapDetected => format!(
            "title reads as standard but the clause reaches w{world} (severity {:.1}, weight {:.2})",
            SEVERITIES[world],
            access[world]
        ),
        Category::Uncertain if belief < 0.5 => format!("title itself signals risk (belief {belief:.2})"),
        Category::Uncertain => format!(
            "partial exposure to w{world} leaves knowledge at {k_final:.2}; send to a reviewer (weighted {weight:.2})"
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub doc_id: usize,
    pub belief: f64,
    pub access: [f64; 4],
    pub knowledge: f64,
    pub k_final: f64,
    pub category: Category,
    pub explanation: String,
}

/// Shared embedding with a Proposer (title) and an Auditor (clause) head.
#[derive(Clone, Debug, PartialEq)]
pub struct SafeSignerModel {
    pub embedding: Embedding,
    pub proposer: Head,
    pub auditor: Head,
    pub tau: f64,
}

struct Forward {
    titles: Packed,
    clauses: Packed,
    b_logits: Array2<f64>,
    a_logits: Array2<f64>,
    proposer: HeadCache,
    auditor: HeadCache,
}

impl SafeSignerModel {
    pub fn new(vocab: usize, shape: HeadShape, tau: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, "safesigner/model");
        SafeSignerModel {
            embedding: Embedding::new(&mut r, vocab, shape.embed_dim),
            proposer: Head::new(&mut r, shape, 1),
            auditor: Head::new(&mut r, shape, SEVERITIES.len()),
            tau,
        }
    }

    fn forward(&self, docs: &[&ContractDoc]) -> Forward {
        let titles = Packed::new(docs.iter().map(|d| d.title.as_slice()));
        let clauses = Packed::new(docs.iter().map(|d| d.clause.as_slice()));
        let (b_logits, proposer) = self.proposer.forward(self.embedding.lookup(&titles.tokens), &titles);
        let (a_logits, auditor) = self.auditor.forward(self.embedding.lookup(&clauses.tokens), &clauses);
        Forward {
            titles,
            clauses,
            b_logits,
            a_logits,
            proposer,
            auditor,
        }
    }

    /// Verdicts for `docs`, numbered by position.
    pub fn verdicts(&self, docs: &[ContractDoc], config: &SafeSignerConfig) -> Result<Vec<Verdict>> {
        let chunks: Vec<(usize, &[ContractDoc])> = docs.chunks(64).enumerate().collect();
        let per_chunk = chunks
            .into_par_iter()
            .map(|(c, chunk)| {
                let refs: Vec<&ContractDoc> = chunk.iter().collect();
                let fwd = self.forward(&refs);
                let mut out = Vec::with_capacity(chunk.len());
                for i in 0..chunk.len() {
                    let mut tape = Tape::new();
                    let b_logit = tape.param(fwd.b_logits[[i, 0]])?;
                    let a_logits = (0..4)
                        .map(|j| tape.param(fwd.a_logits[[i, j]]))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    let tau = tape.constant(self.tau)?;
                    let belief = tape.sigmoid(b_logit)?;
                    let k = knowledge(&mut tape, &a_logits, tau)?;
                    let k_final = modal_ops::knowledge_cap(&mut tape, k, belief)?;
                    let mut access = [0.0; 4];
                    for (slot, &l) in access.iter_mut().zip(&a_logits) {
                        *slot = crate::autodiff::sigmoid_f64(tape.value(l));
                    }
                    let (b, kf) = (tape.value(belief), tape.value(k_final));
                    let category = categorize(b, kf, config.verified_threshold, config.trap_threshold);
                    out.push(Verdict {
                        doc_id: c * 64 + i,
                        belief: b,
                        access,
                        knowledge: tape.value(k),
                        k_final: kf,
                        category,
                        explanation: explain(category, b, kf, &access),
                    });
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_chunk.into_iter().flatten().collect())
    }
}

/// Loss components of one batch, on the tape.
pub struct BatchLoss {
    pub components: Vec<(&'static str, f64, Var)>,
    pub total: Var,
}

/// Five-term objective over a batch given head logits already on the tape.
pub fn batch_loss(
    tape: &mut Tape,
    docs: &[&ContractDoc],
    b_logits: &[Var],
    a_logits: &[[Var; 4]],
    tau: Var,
    config: &SafeSignerConfig,
) -> Result<BatchLoss> {
    let mut belief_terms = Vec::with_capacity(docs.len());
    let mut risk_terms = Vec::with_capacity(docs.len() * 4);
    let mut contrast_terms = Vec::new();
    let mut axiom_terms = Vec::with_capacity(docs.len());
    let mut verify_terms = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let target = if doc.title_safe() { 1.0 } else { 0.0 };
        belief_terms.push(tape.bce_with_logit(b_logits[i], target)?);
        for (j, &r) in doc.risk.iter().enumerate() {
            risk_terms.push(tape.bce_with_logit(a_logits[i][j], r)?);
        }
        let belief = tape.sigmoid(b_logits[i])?;
        let k = knowledge(tape, &a_logits[i], tau)?;
        let k_final = modal_ops::knowledge_cap(tape, k, belief)?;
        axiom_terms.push(modal_ops::axiom_loss_k_leq_b(tape, k_final, belief)?);
        let gap = tape.sub(belief, k_final)?;
        if doc.is_trap {
            let neg_gap = tape.neg(gap)?;
            let short = tape.add_scalar(neg_gap, config.margin)?;
            contrast_terms.push(tape.max0(short)?);
        }
        if doc.label_safe {
            verify_terms.push(tape.max0(gap)?);
        }
    }
    let mean_or_zero = |tape: &mut Tape, terms: &[Var]| -> Result<Var> {
        Ok(if terms.is_empty() { tape.constant(0.0)? } else { tape.mean(terms)? })
    };
    let components = vec![
        (BELIEF, 1.0, mean_or_zero(tape, &belief_terms)?),
        (RISK, 1.0, mean_or_zero(tape, &risk_terms)?),
        (CONTRASTIVE, config.lambda_contrastive, mean_or_zero(tape, &contrast_terms)?),
        (AXIOM, config.lambda_axiom, mean_or_zero(tape, &axiom_terms)?),
        (VERIFY, config.lambda_verify, mean_or_zero(tape, &verify_terms)?),
    ];
    let mut weighted = Vec::with_capacity(components.len());
    for &(_, w, v) in &components {
        weighted.push(tape.scale(v, w)?);
    }
    let total = tape.sum(&weighted)?;
    Ok(BatchLoss { components, total })
}

fn shuffled_batches(n: usize, batch: usize, seed: u64, label: &str, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &format!("{label}/epoch{epoch}")));
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

fn non_finite(component: &str, epoch: usize) -> Error {
    Error::NonFinite {
        component: component.to_owned(),
        epoch,
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: SafeSignerModel,
    pub loss_history: Vec<EpochRecord>,
    pub tau_history: Vec<f64>,
}

pub fn train_model(train: &[ContractDoc], vocab: usize, config: &SafeSignerConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut model = SafeSignerModel::new(vocab, config.shape, config.tau_init, config.seed);
    let mut adam = Adam::new(config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    let mut tau_history = vec![model.tau];
    for epoch in 0..config.epochs {
        let batches = shuffled_batches(train.len(), config.batch_size, config.seed, "safesigner/batches", epoch);
        let mut sums = [0.0; 5];
        let mut total_sum = 0.0;
        for idx in &batches {
            let docs: Vec<&ContractDoc> = idx.iter().map(|&i| &train[i]).collect();
            let fwd = model.forward(&docs);

            let mut tape = Tape::new();
            let b_vars = (0..docs.len())
                .map(|i| tape.param(fwd.b_logits[[i, 0]]))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let mut a_vars = Vec::with_capacity(docs.len());
            for i in 0..docs.len() {
                let mut row = [b_vars[0]; 4];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = tape.param(fwd.a_logits[[i, j]])?;
                }
                a_vars.push(row);
            }
            let tau = tape.param(model.tau)?;
            let loss = batch_loss(&mut tape, &docs, &b_vars, &a_vars, tau, config)?;
            for (slot, &(_, _, v)) in sums.iter_mut().zip(&loss.components) {
                *slot += tape.value(v) * docs.len() as f64;
            }
            total_sum += tape.value(loss.total) * docs.len() as f64;

            let grads = tape.backward(loss.total);
            let d_b = Array2::from_shape_fn((docs.len(), 1), |(i, _)| grads.wrt(b_vars[i]));
            let d_a = Array2::from_shape_fn((docs.len(), 4), |(i, j)| grads.wrt(a_vars[i][j]));
            let d_tau = grads.wrt(tau);
            let gp = model.proposer.backward(d_b.view(), &fwd.proposer, &fwd.titles);
            let ga = model.auditor.backward(d_a.view(), &fwd.auditor, &fwd.clauses);
            if !gp.is_finite() || !ga.is_finite() || !d_tau.is_finite() {
                return Err(non_finite("head gradients", epoch));
            }
            let mut d_emb = Array2::zeros(model.embedding.table.raw_dim());
            embedding_grad(&mut d_emb, &fwd.titles.tokens, &gp.x);
            embedding_grad(&mut d_emb, &fwd.clauses.tokens, &ga.x);

            let d_tau = [d_tau];
            let mut grad_slices: Vec<&[f64]> = vec![d_emb.as_slice().expect("standard layout")];
            grad_slices.extend(gp.slices());
            grad_slices.extend(ga.slices());
            grad_slices.push(&d_tau);
            let mut tau_slot = [model.tau];
            {
                let mut params: Vec<&mut [f64]> =
                    vec![model.embedding.table.as_slice_mut().expect("standard layout")];
                params.extend(model.proposer.params_mut());
                params.extend(model.auditor.params_mut());
                params.push(&mut tau_slot);
                adam.step(&mut params, &grad_slices);
            }
            model.tau = tau_slot[0].max(TAU_FLOOR);
        }
        let n = train.len().max(1) as f64;
        let names = [BELIEF, RISK, CONTRASTIVE, AXIOM, VERIFY];
        let weights = [1.0, 1.0, config.lambda_contrastive, config.lambda_axiom, config.lambda_verify];
        history.push(EpochRecord {
            epoch,
            beta: 0.0,
            total: total_sum / n,
            components: names
                .iter()
                .zip(weights)
                .zip(sums)
                .map(|((name, w), s)| (name.to_string(), w, s / n))
                .collect(),
        });
        tau_history.push(model.tau);
    }
    Ok(TrainedModel {
        model,
        loss_history: history,
        tau_history,
    })
}

/// Single-head classifier over title and clause together, trained with
/// plain cross-entropy on the safety label.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub embedding: Embedding,
    pub head: Head,
}

fn joined(doc: &ContractDoc) -> Vec<u32> {
    doc.title.iter().chain(&doc.clause).copied().collect()
}

impl BaselineModel {
    pub fn train(train: &[ContractDoc], vocab: usize, config: &SafeSignerConfig) -> Result<Self> {
        let mut r = rng::stream(config.seed, "safesigner/baseline");
        let mut model = BaselineModel {
            embedding: Embedding::new(&mut r, vocab, config.shape.embed_dim),
            head: Head::new(&mut r, config.shape, 1),
        };
        let mut adam = Adam::new(config.learning_rate);
        for epoch in 0..config.epochs {
            for idx in shuffled_batches(train.len(), config.batch_size, config.seed, "safesigner/baseline/batches", epoch) {
                let seqs: Vec<Vec<u32>> = idx.iter().map(|&i| joined(&train[i])).collect();
                let packed = Packed::new(seqs.iter().map(|s| s.as_slice()));
                let (logits, cache) = model.head.forward(model.embedding.lookup(&packed.tokens), &packed);
                let n = idx.len() as f64;
                // d/dz of mean BCE(sigmoid(z), y)
                let d_out = Array2::from_shape_fn((idx.len(), 1), |(i, _)| {
                    let y = if train[idx[i]].label_safe { 1.0 } else { 0.0 };
                    (crate::autodiff::sigmoid_f64(logits[[i, 0]]) - y) / n
                });
                let g = model.head.backward(d_out.view(), &cache, &packed);
                if !g.is_finite() {
                    return Err(non_finite("baseline gradients", epoch));
                }
                let mut d_emb = Array2::zeros(model.embedding.table.raw_dim());
                embedding_grad(&mut d_emb, &packed.tokens, &g.x);
                let mut grads: Vec<&[f64]> = vec![d_emb.as_slice().expect("standard layout")];
                grads.extend(g.slices());
                let mut params: Vec<&mut [f64]> = vec![model.embedding.table.as_slice_mut().expect("standard layout")];
                params.extend(model.head.params_mut());
                adam.step(&mut params, &grads);
            }
        }
        Ok(model)
    }

    /// Probability of "safe" per document.
    pub fn predict(&self, docs: &[ContractDoc]) -> Vec<f64> {
        docs.par_chunks(64)
            .map(|chunk| {
                let seqs: Vec<Vec<u32>> = chunk.iter().map(joined).collect();
                let packed = Packed::new(seqs.iter().map(|s| s.as_slice()));
                let (logits, _) = self.head.forward(self.embedding.lookup(&packed.tokens), &packed);
                logits.index_axis(Axis(1), 0).iter().map(|&z| crate::autodiff::sigmoid_f64(z)).collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }
}

/// F1 with "safe" as the positive class.
pub fn f1_safe(predicted_safe: &[bool], label_safe: &[bool]) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fneg = 0.0;
    for (&p, &y) in predicted_safe.iter().zip(label_safe) {
        match (p, y) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fneg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub f1: f64,
    /// Share of traps the baseline calls safe.
    pub trap_accept_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafeSignerMetrics {
    pub f1: f64,
    pub trap_detection_rate: f64,
    #[serde(rename = "mean_BK_gap_traps")]
    pub mean_bk_gap_traps: f64,
    pub k_gt_b_violations: usize,
    pub category_counts: BTreeMap<Category, usize>,
    pub tau_initial: f64,
    pub tau_final: f64,
    pub train_docs: usize,
    pub test_docs: usize,
    pub test_traps: usize,
    pub baseline: Option<BaselineMetrics>,
    pub title_check: Option<TitleCheck>,
}

#[derive(Clone, Debug)]
pub struct SafeSignerOutcome {
    pub metrics: SafeSignerMetrics,
    pub verdicts: Vec<Verdict>,
    pub loss_history: Vec<EpochRecord>,
    pub tau_history: Vec<f64>,
}

pub fn verdicts_csv(verdicts: &[Verdict]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["doc_id", "B", "A0", "A1", "A2", "A3", "K_final", "category", "explanation"])?;
    for v in verdicts {
        let mut row = vec![v.doc_id.to_string(), format!("{:.6}", v.belief)];
        row.extend(v.access.iter().map(|a| format!("{a:.6}")));
        row.push(format!("{:.6}", v.k_final));
        row.push(format!("{:?}", v.category));
        row.push(v.explanation.clone());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Train on `corpus.train`, evaluate on `corpus.test`.
pub fn run_on_corpus(corpus: &Corpus, config: &SafeSignerConfig) -> Result<SafeSignerOutcome> {
    config.validate()?;
    if corpus.train.is_empty() || corpus.test.is_empty() {
        return Err(Error::Data("both the training and the test split need documents".into()));
    }
    let vocab = corpus.vocab.len();
    let (trained, baseline) = rayon::join(
        || train_model(&corpus.train, vocab, config),
        || {
            config
                .train_baseline
                .then(|| BaselineModel::train(&corpus.train, vocab, config))
                .transpose()
        },
    );
    let trained = trained?;
    let baseline = baseline?;
    let verdicts = trained.model.verdicts(&corpus.test, config)?;

    let labels: Vec<bool> = corpus.test.iter().map(|d| d.label_safe).collect();
    let predicted: Vec<bool> = verdicts.iter().map(|v| v.k_final >= 0.5).collect();
    let traps: Vec<usize> = (0..corpus.test.len()).filter(|&i| corpus.test[i].is_trap).collect();
    let n_traps = traps.len();
    let share = |count: usize| if n_traps == 0 { 0.0 } else { count as f64 / n_traps as f64 };
    let detected = traps.iter().filter(|&&i| verdicts[i].category == Category::TrapDetected).count();
    let gap_sum: f64 = traps.iter().map(|&i| verdicts[i].belief - verdicts[i].k_final).sum();
    let mut category_counts = BTreeMap::new();
    for v in &verdicts {
        *category_counts.entry(v.category).or_insert(0) += 1;
    }
    let baseline = baseline.map(|b| {
        let p = b.predict(&corpus.test);
        let safe: Vec<bool> = p.iter().map(|&x| x >= 0.5).collect();
        BaselineMetrics {
            f1: f1_safe(&safe, &labels),
            trap_accept_rate: share(traps.iter().filter(|&&i| safe[i]).count()),
        }
    });
    let all: Vec<ContractDoc> = corpus.all_docs().cloned().collect();
    let metrics = SafeSignerMetrics {
        f1: f1_safe(&predicted, &labels),
        trap_detection_rate: share(detected),
        mean_bk_gap_traps: if n_traps == 0 { 0.0 } else { gap_sum / n_traps as f64 },
        k_gt_b_violations: verdicts.iter().filter(|v| v.k_final > v.belief + 1e-6).count(),
        category_counts,
        tau_initial: config.tau_init,
        tau_final: trained.model.tau,
        train_docs: corpus.train.len(),
        test_docs: corpus.test.len(),
        test_traps: n_traps,
        baseline,
        title_check: title_self_check(&all),
    };
    Ok(SafeSignerOutcome {
        metrics,
        verdicts,
        loss_history: trained.loss_history,
        tau_history: trained.tau_history,
    })
}

/// Synthetic corpus end to end.
pub fn run_scenario(config: &SafeSignerConfig) -> Result<SafeSignerOutcome> {
    let corpus = corpus::generate_corpus(&config.corpus)?;
    run_on_corpus(&corpus, config)
}
