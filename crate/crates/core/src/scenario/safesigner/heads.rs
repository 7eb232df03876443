//! Token-sequence heads: embedding lookup, one multi-head self-attention
//! layer, mean pooling, output projection with a mean-embedding residual,
//! and a ReLU feed-forward layer to the logits.
//!
//! The heads are dense matrix code with hand-written backward passes. They
//! hand their logits to the scalar tape as parameters, and the tape's
//! gradients for those logits flow back in through [`Head::backward`].

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadShape {
    pub embed_dim: usize,
    pub heads: usize,
    pub hidden: usize,
}

impl Default for HeadShape {
    fn default() -> Self {
        HeadShape {
            embed_dim: 128,
            heads: 4,
            hidden: 64,
        }
    }
}

impl HeadShape {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.hidden == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    uniform(rng, rows, cols, (6.0 / (rows + cols) as f64).sqrt())
}

/// Token embedding table, row 0 reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub table: Array2<f64>,
}

impl Embedding {
    pub fn new(rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> Self {
        Embedding {
            table: uniform(rng, vocab.max(1), dim, 0.5),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.nrows()
    }

    /// Rows for a packed batch of token ids; ids past the table map to 0.
    pub fn lookup(&self, tokens: &[u32]) -> Array2<f64> {
        let mut x = Array2::zeros((tokens.len(), self.table.ncols()));
        for (mut row, &t) in x.rows_mut().into_iter().zip(tokens) {
            let t = if (t as usize) < self.vocab() { t as usize } else { 0 };
            row.assign(&self.table.row(t));
        }
        x
    }
}

/// Several token sequences packed row-wise; sequence `b` owns rows
/// `offsets[b]..offsets[b + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Packed {
    pub tokens: Vec<u32>,
    pub offsets: Vec<usize>,
}

impl Packed {
    /// Empty sequences are replaced by a single unknown token.
    pub fn new<'a>(seqs: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut tokens = Vec::new();
        let mut offsets = vec![0];
        for seq in seqs {
            if seq.is_empty() {
                tokens.push(0);
            } else {
                tokens.extend_from_slice(seq);
            }
            offsets.push(tokens.len());
        }
        Packed { tokens, offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub shape: HeadShape,
    /// Fused query/key/value projection, `d x 3d`.
    pub wqkv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug)]
pub struct HeadCache {
    x: Array2<f64>,
    qkv: Array2<f64>,
    /// Attention matrices per sequence and head.
    probs: Vec<Vec<Array2<f64>>>,
    attn_mean: Array2<f64>,
    pooled: Array2<f64>,
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
}

/// Gradients with the same layout as [`Head`], plus the input rows.
#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub wqkv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub x: Array2<f64>,
}

impl Head {
    pub fn new(rng: &mut ChaCha8Rng, shape: HeadShape, outputs: usize) -> Self {
        let d = shape.embed_dim;
        Head {
            shape,
            wqkv: glorot(rng, d, 3 * d),
            wo: glorot(rng, d, d),
            bo: Array1::zeros(d),
            w1: glorot(rng, d, shape.hidden),
            b1: Array1::zeros(shape.hidden),
            w2: glorot(rng, shape.hidden, outputs),
            b2: Array1::zeros(outputs),
        }
    }

    pub fn outputs(&self) -> usize {
        self.b2.len()
    }

    /// Logits for each packed sequence given its embedded rows `x`.
    pub fn forward(&self, x: Array2<f64>, packed: &Packed) -> (Array2<f64>, HeadCache) {
        let d = self.shape.embed_dim;
        let dh = d / self.shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = x.dot(&self.wqkv);
        let n = packed.len();
        let mut attn_mean = Array2::zeros((n, d));
        let mut x_mean = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(n);
        for b in 0..n {
            let r = packed.range(b);
            let len = r.len() as f64;
            let mut per_head = Vec::with_capacity(self.shape.heads);
            for h in 0..self.shape.heads {
                let q = qkv.slice(s![r.clone(), h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![r.clone(), d + h * dh..d + (h + 1) * dh]);
                let v = qkv.slice(s![r.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let mut p = q.dot(&k.t()) * scale;
                softmax_rows(&mut p);
                // mean over rows of P V equals (column means of P) V
                let pbar = p.sum_axis(Axis(0)) / len;
                attn_mean.slice_mut(s![b, h * dh..(h + 1) * dh]).assign(&pbar.dot(&v));
                per_head.push(p);
            }
            probs.push(per_head);
            x_mean.row_mut(b).assign(&(x.slice(s![r, ..]).sum_axis(Axis(0)) / len));
        }
        let pooled = attn_mean.dot(&self.wo) + &self.bo + &x_mean;
        let pre_hidden = pooled.dot(&self.w1) + &self.b1;
        let hidden = pre_hidden.mapv(|v| v.max(0.0));
        let out = hidden.dot(&self.w2) + &self.b2;
        let cache = HeadCache {
            x,
            qkv,
            probs,
            attn_mean,
            pooled,
            pre_hidden,
            hidden,
        };
        (out, cache)
    }

    /// Backpropagate `d_out` (one row per sequence) through the head.
    pub fn backward(&self, d_out: ArrayView2<f64>, cache: &HeadCache, packed: &Packed) -> HeadGrads {
        let d = self.shape.embed_dim;
        let dh = d / self.shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let w2 = cache.hidden.t().dot(&d_out);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&self.w2.t());
        d_hidden.zip_mut_with(&cache.pre_hidden, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let w1 = cache.pooled.t().dot(&d_hidden);
        let b1 = d_hidden.sum_axis(Axis(0));
        let d_pooled = d_hidden.dot(&self.w1.t());
        let wo = cache.attn_mean.t().dot(&d_pooled);
        let bo = d_pooled.sum_axis(Axis(0));
        let d_attn = d_pooled.dot(&self.wo.t());

        let mut d_x = Array2::zeros(cache.x.raw_dim());
        let mut d_qkv = Array2::zeros(cache.qkv.raw_dim());
        for b in 0..packed.len() {
            let r = packed.range(b);
            let len = r.len();
            let inv = 1.0 / len as f64;
            // residual mean of the embeddings
            let g = d_pooled.row(b).mapv(|v| v * inv);
            for mut row in d_x.slice_mut(s![r.clone(), ..]).rows_mut() {
                row += &g;
            }
            for h in 0..self.shape.heads {
                let p = &cache.probs[b][h];
                let q = cache.qkv.slice(s![r.clone(), h * dh..(h + 1) * dh]);
                let k = cache.qkv.slice(s![r.clone(), d + h * dh..d + (h + 1) * dh]);
                let v = cache.qkv.slice(s![r.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                // every output row receives the same share of the pooled gradient
                let g_row = d_attn.slice(s![b, h * dh..(h + 1) * dh]).mapv(|x| x * inv);
                let d_o = broadcast_rows(&g_row, len);
                let d_p = d_o.dot(&v.t());
                let d_v = p.t().dot(&d_o);
                let mut d_s = d_p;
                for (mut ds_row, p_row) in d_s.rows_mut().into_iter().zip(p.rows()) {
                    let dot: f64 = ds_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                    ds_row.zip_mut_with(&p_row, |x, &pi| *x = pi * (*x - dot));
                }
                d_s *= scale;
                let d_q = d_s.dot(&k);
                let d_k = d_s.t().dot(&q);
                d_qkv.slice_mut(s![r.clone(), h * dh..(h + 1) * dh]).assign(&d_q);
                d_qkv.slice_mut(s![r.clone(), d + h * dh..d + (h + 1) * dh]).assign(&d_k);
                d_qkv.slice_mut(s![r.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&d_v);
            }
        }
        let wqkv = cache.x.t().dot(&d_qkv);
        d_x += &d_qkv.dot(&self.wqkv.t());
        // products with transposed views can come back column-major
        let standard = |a: Array2<f64>| a.as_standard_layout().into_owned();
        HeadGrads {
            wqkv: standard(wqkv),
            wo: standard(wo),
            bo,
            w1: standard(w1),
            b1,
            w2: standard(w2),
            b2,
            x: standard(d_x),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.wqkv.as_slice_mut().expect("standard layout"),
            self.wo.as_slice_mut().expect("standard layout"),
            self.bo.as_slice_mut().expect("standard layout"),
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

impl HeadGrads {
    /// Same order as [`Head::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.wqkv.as_slice().expect("standard layout"),
            self.wo.as_slice().expect("standard layout"),
            self.bo.as_slice().expect("standard layout"),
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite())) && self.x.iter().all(|v| v.is_finite())
    }
}

/// Scatter-add row gradients back into an embedding-table gradient.
pub fn embedding_grad(grad: &mut Array2<f64>, tokens: &[u32], d_x: &Array2<f64>) {
    let vocab = grad.nrows();
    for (&t, row) in tokens.iter().zip(d_x.rows()) {
        let t = if (t as usize) < vocab { t as usize } else { 0 };
        let mut target = grad.row_mut(t);
        target += &row;
    }
}

fn broadcast_rows(row: &Array1<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, row.len()));
    for mut r in out.rows_mut() {
        r.assign(row);
    }
    out
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
}
