//! Cross-lingual dual encoder: a shared linear projection over hashed
//! character n-grams, scored by dot product and trained with a contrastive
//! negative log likelihood objective.

mod featurize;
mod io;
mod train;

pub use featurize::{featurize, FeaturizerConfig, SparseVec, WORD_END, WORD_START};
pub use io::{load_model, read_embeddings, save_model, write_embeddings};
pub use train::{train_retriever, train_retriever_warm, TrainConfig, TrainResult};

use crate::error::{Error, Result};

/// Row-major dense matrix of projection weights or their gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Dense-sparse product: one output entry per row.
    pub fn mul_sparse(&self, x: &SparseVec) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (out_r, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            let mut acc = 0.0;
            for (j, v) in x.iter() {
                acc += row[j as usize] * v;
            }
            *out_r = acc;
        }
        out
    }
}

/// The retriever. One projection serves as both the query and the passage
/// encoder; `shared` records that parameter sharing and is always true.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub featurizer: FeaturizerConfig,
    pub projection: DenseMatrix,
    pub shared: bool,
}

impl EncoderModel {
    pub fn new(featurizer: FeaturizerConfig, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(format!("encoder dim {dim} must be >= 2")));
        }
        Ok(EncoderModel {
            projection: DenseMatrix::zeros(dim, featurizer.num_buckets),
            featurizer,
            shared: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.rows
    }
}

/// Encode text into a d-dimensional vector: projection times the hashed
/// n-gram features. The output is intentionally not normalized; retrieval
/// scores are raw dot products.
pub fn encode(model: &EncoderModel, text: &str) -> Result<Vec<f64>> {
    let features = featurize(&model.featurizer, text)?;
    Ok(model.projection.mul_sparse(&features))
}

/// Encode pre-computed features (used by training and indexing loops that
/// cache featurization).
pub fn encode_features(model: &EncoderModel, features: &SparseVec) -> Vec<f64> {
    model.projection.mul_sparse(features)
}

/// Dot-product similarity.
pub fn sim(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch { left: q.len(), right: p.len() });
    }
    Ok(q.iter().zip(p).map(|(a, b)| a * b).sum())
}

/// Log-sum-exp with max shift; `sims[0]` is the positive candidate.
fn nll_from_sims(sims: &[f64]) -> f64 {
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = sims.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    lse - sims[0]
}

fn softmax_from_sims(sims: &[f64]) -> Vec<f64> {
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Negative log likelihood of the positive passage against the sampled
/// negatives, under softmax over dot-product similarities.
pub fn nll_loss(
    model: &EncoderModel,
    query_text: &str,
    positive_text: &str,
    negative_texts: &[&str],
) -> Result<f64> {
    if negative_texts.is_empty() {
        return Err(Error::NoNegatives);
    }
    let q = encode(model, query_text)?;
    let mut sims = Vec::with_capacity(1 + negative_texts.len());
    sims.push(sim(&q, &encode(model, positive_text)?)?);
    for neg in negative_texts {
        sims.push(sim(&q, &encode(model, neg)?)?);
    }
    Ok(nll_from_sims(&sims))
}

/// The per-example pieces shared between loss evaluation and the weight
/// update: softmax residuals folded into a sparse candidate combination.
pub(crate) struct ExampleGrad {
    pub loss: f64,
    /// g = sum_i (softmax_i - [i == 0]) * x_i over candidate features.
    pub residual: Vec<(u32, f64)>,
    /// Encoded query, q = W x_q.
    pub query_vec: Vec<f64>,
    /// c = W g.
    pub residual_vec: Vec<f64>,
}

pub(crate) fn example_grad(
    model: &EncoderModel,
    query: &SparseVec,
    candidates: &[&SparseVec],
) -> ExampleGrad {
    let q = encode_features(model, query);
    let sims: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let p = encode_features(model, c);
            q.iter().zip(&p).map(|(a, b)| a * b).sum()
        })
        .collect();
    let loss = nll_from_sims(&sims);
    let probs = softmax_from_sims(&sims);

    let mut residual: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    for (i, cand) in candidates.iter().enumerate() {
        let coeff = probs[i] - if i == 0 { 1.0 } else { 0.0 };
        for (j, v) in cand.iter() {
            *residual.entry(j).or_insert(0.0) += coeff * v;
        }
    }
    let mut residual: Vec<(u32, f64)> = residual.into_iter().collect();
    residual.sort_unstable_by_key(|(j, _)| *j);

    let residual_sparse = SparseVec {
        indices: residual.iter().map(|(j, _)| *j).collect(),
        values: residual.iter().map(|(_, v)| *v).collect(),
    };
    let residual_vec = encode_features(model, &residual_sparse);

    ExampleGrad { loss, residual, query_vec: q, residual_vec }
}

/// Exact gradient of `nll_loss` in the projection weights. With the shared
/// projection W, every similarity is x_q' W' W x_i, so
/// dL/dW = q g' + (W g) x_q' with g the softmax-weighted candidate
/// combination minus the positive.
pub fn grad_nll(
    model: &EncoderModel,
    query_text: &str,
    positive_text: &str,
    negative_texts: &[&str],
) -> Result<DenseMatrix> {
    if negative_texts.is_empty() {
        return Err(Error::NoNegatives);
    }
    let query = featurize(&model.featurizer, query_text)?;
    let mut cands = Vec::with_capacity(1 + negative_texts.len());
    cands.push(featurize(&model.featurizer, positive_text)?);
    for neg in negative_texts {
        cands.push(featurize(&model.featurizer, neg)?);
    }
    let cand_refs: Vec<&SparseVec> = cands.iter().collect();
    let parts = example_grad(model, &query, &cand_refs);

    let dim = model.dim();
    let mut grad = DenseMatrix::zeros(dim, model.featurizer.num_buckets);
    for (j, gv) in &parts.residual {
        for r in 0..dim {
            grad.data[r * grad.cols + *j as usize] += parts.query_vec[r] * gv;
        }
    }
    for (j, xv) in query.iter() {
        for r in 0..dim {
            grad.data[r * grad.cols + j as usize] += parts.residual_vec[r] * xv;
        }
    }
    Ok(grad)
}
