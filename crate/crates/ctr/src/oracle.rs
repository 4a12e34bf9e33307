//! Slow reference implementations used by the test suites.
//!
//! Everything here recomputes results from first principles: dense
//! matrix-vector products over full one-hot vectors and explicit pairwise
//! enumeration, with no shared code paths into the fast implementations.
//! They exist so equivalence tests compare two genuinely independent
//! derivations rather than a function against itself.

use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::real::Real;
use crate::schema::Features;

/// Dense per-field embedding: e[k] = sum_j V[n][j][k] * x[j] over the whole
/// vocabulary, with x the multiplicity vector of the active indices.
fn dense_field_embedding<T: Real>(
    model: &ModelParams<T>,
    feats: &impl Features,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let card = model.schema.cardinality(n)?;
    let dim = model.embeddings.dim;
    let mut x = vec![0.0f64; card];
    for &j in feats.actives(n) {
        if j as usize >= card {
            return Err(Error::IndexOutOfRange { field: n, index: j, cardinality: card });
        }
        x[j as usize] += 1.0;
    }
    let table = &model.embeddings.tables[n];
    let mut e = vec![0.0f64; dim];
    for (j, &xj) in x.iter().enumerate() {
        for k in 0..dim {
            e[k] += table[j * dim + k].as_f64() * xj;
        }
    }
    Ok((e, x))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Classical factorization machine score: global bias, dense linear term,
/// and an explicit sum of inner products over all feature-field pairs.
pub fn fm_score_bruteforce<T: Real>(model: &ModelParams<T>, feats: &impl Features) -> Result<f64> {
    let mut score = model.fwbi.w0.as_f64();
    let mut vecs = Vec::with_capacity(model.schema.n_fields());
    for n in 0..model.schema.n_fields() {
        let (e, x) = dense_field_embedding(model, feats, n)?;
        for (j, &xj) in x.iter().enumerate() {
            score += model.fwbi.w[n][j].as_f64() * xj;
        }
        vecs.push(e);
    }
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            score += dot(&vecs[i], &vecs[j]);
        }
    }
    Ok(score)
}

/// Field-weighted variant: each feature-field pair's inner product carries
/// its own weight. Requires a model whose hierarchical fields coincide with
/// the feature fields, so pair (i, j) reads weight r(i, j).
pub fn fwfm_score_bruteforce<T: Real>(
    model: &ModelParams<T>,
    feats: &impl Features,
) -> Result<f64> {
    let n_fields = model.schema.n_fields();
    if model.schema.n_hierarchies() != n_fields {
        return Err(Error::LengthMismatch {
            expected: n_fields,
            got: model.schema.n_hierarchies(),
        });
    }
    let mut score = model.fwbi.w0.as_f64();
    let mut vecs = Vec::with_capacity(n_fields);
    for n in 0..n_fields {
        let (e, x) = dense_field_embedding(model, feats, n)?;
        for (j, &xj) in x.iter().enumerate() {
            score += model.fwbi.w[n][j].as_f64() * xj;
        }
        vecs.push(e);
    }
    for i in 0..n_fields {
        for j in i + 1..n_fields {
            score += model.fwbi.r(i, j).as_f64() * dot(&vecs[i], &vecs[j]);
        }
    }
    Ok(score)
}

/// Quadratic pair-counting AUC: every positive-negative pair scores 1 for a
/// correct ordering and 1/2 for a tie. Returns None when single-class.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut wins = 0.0f64;
    let mut pairs = 0u64;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0 {
        return None;
    }
    Some(wins / pairs as f64)
}

// ============================================================
// Tests
// ============================================================
