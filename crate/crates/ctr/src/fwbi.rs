//! Field-wise bi-interaction layer.
//!
//! Three submodules share one embedding space and meet in a small projection:
//!
//! * a sparse linear part `h_S = w0 + sum of active feature weights`,
//! * an inter-field machine-factorization part
//!   `h_MF = Σ_{i<j} r[i][j] * (e_i ⊙ e_j)` over hierarchical field vectors,
//! * an intra-field part computed per hierarchical field with the
//!   square-of-sum identity
//!   `h_FM = Σ_m r[m][m] * (e_m ⊙ e_m − Σ_{F(n)=m} e_n ⊙ e_n)`,
//!   which equals twice the sum of pairwise products of the member feature
//!   vectors without enumerating pairs.
//!
//! The interaction vector `h_MF + h_FM` is scaled entry-wise (dropout mask in
//! training, its expectation at inference; see [`crate::dicefactor`]), stacked
//! under `h_S`, and pushed through a square projection `W_proj` of side
//! `K_e + 1` with no bias.
//!
//! Setting `M = 1`, `r = 1/2`, `W_proj = I` and an identity activation turns
//! the layer into a factorization machine over the feature fields; giving
//! every feature field its own hierarchical field and zeroing the diagonal of
//! `r` yields a field-weighted FM. [`make_fm_config`] and
//! [`make_fwfm_config`] build exactly those configurations, and the test
//! suite holds them against brute-force pairwise oracles.

use std::collections::BTreeMap;

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddedInstance;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::schema::{Features, FieldSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Pass-through, used by the FM/FwFM recovery configurations and as a
    /// test hook.
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation. The ReLU subgradient at exactly
    /// zero is taken as zero.
    fn grad<T: Real>(self, pre: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

// ============================================================
// Parameters
// ============================================================

#[derive(Debug, Clone, PartialEq)]
pub struct FwbiParams<T> {
    /// Number of hierarchical fields M.
    pub m: usize,
    /// Embedding width K_e.
    pub dim: usize,
    /// Linear bias.
    pub w0: T,
    /// Per-field, per-value linear weights; `w[n]` has the field's
    /// cardinality.
    pub w: Vec<Vec<T>>,
    /// Interaction strengths, packed upper triangle including the diagonal:
    /// entry (i, j) with i <= j lives at `i*M - i*(i-1)/2 + (j-i)`.
    /// Off-diagonal entries weight field pairs, diagonal entries weight the
    /// intra-field term.
    pub r: Vec<T>,
    /// Square projection of side `dim + 1`, row-major with rows indexed by
    /// input component: `pre[i] = Σ_j w_proj[j*(dim+1) + i] * h_in[j]`.
    /// No bias.
    pub w_proj: Vec<T>,
}

impl<T: Real> FwbiParams<T> {
    /// Random initialization: zero linear weights, all-ones `r`, projection
    /// drawn uniformly from ±1/sqrt(K_e) like the embeddings.
    pub fn init(schema: &FieldSchema, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(schema, dim)?;
        for x in p.r.iter_mut() {
            *x = T::one();
        }
        let bound = T::from_f64(1.0 / (dim as f64).sqrt());
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        for x in p.w_proj.iter_mut() {
            *x = dist.sample(rng);
        }
        Ok(p)
    }

    pub fn zeros(schema: &FieldSchema, dim: usize) -> Result<Self> {
        let m = schema.n_hierarchies();
        let mut w = Vec::with_capacity(schema.n_fields());
        for n in 0..schema.n_fields() {
            w.push(vec![T::zero(); schema.cardinality(n)?]);
        }
        let d = dim + 1;
        Ok(FwbiParams {
            m,
            dim,
            w0: T::zero(),
            w,
            r: vec![T::zero(); m * (m + 1) / 2],
            w_proj: vec![T::zero(); d * d],
        })
    }

    pub fn r_index(m: usize, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < m);
        i * m - (i * i - i) / 2 + (j - i)
    }

    pub fn r(&self, i: usize, j: usize) -> T {
        self.r[Self::r_index(self.m, i, j)]
    }

    pub fn r_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.r[Self::r_index(self.m, i, j)]
    }

    pub fn identity_projection(&mut self) {
        let d = self.dim + 1;
        self.w_proj.iter_mut().for_each(|x| *x = T::zero());
        for i in 0..d {
            self.w_proj[i * d + i] = T::one();
        }
    }
}

// ============================================================
// Forward terms
// ============================================================

/// Linear submodule: bias plus the weights of every active feature value.
/// A value repeated in a multi-hot cell counts as many times as it appears.
pub fn linear_term<T: Real>(params: &FwbiParams<T>, feats: &impl Features) -> Result<T> {
    let mut acc = params.w0;
    for n in 0..params.w.len() {
        let field = &params.w[n];
        for &j in feats.actives(n) {
            let Some(&wj) = field.get(j as usize) else {
                return Err(Error::IndexOutOfRange {
                    field: n,
                    index: j,
                    cardinality: field.len(),
                });
            };
            acc += wj;
        }
    }
    Ok(acc)
}

/// Inter-field interactions: `Σ_{i<j} r[i][j] * (e_i ⊙ e_j)` over the pooled
/// hierarchical field vectors, accumulated in ascending (i, j) order. With a
/// single hierarchical field there are no pairs and the result is zero.
pub fn mf_term<T: Real>(field_vecs: &[Vec<T>], params: &FwbiParams<T>) -> Result<Vec<T>> {
    check_field_vecs(field_vecs, params)?;
    let mut out = vec![T::zero(); params.dim];
    for i in 0..params.m {
        for j in (i + 1)..params.m {
            let rij = params.r(i, j);
            let (ei, ej) = (&field_vecs[i], &field_vecs[j]);
            for k in 0..params.dim {
                out[k] += rij * ei[k] * ej[k];
            }
        }
    }
    Ok(out)
}

pub struct FmOut<T> {
    pub h_fm: Vec<T>,
    /// Square of each pooled field vector, e_m ⊙ e_m.
    pub hf: Vec<Vec<T>>,
    /// Per field, the sum of squared member feature vectors.
    pub ht: Vec<Vec<T>>,
}

/// Intra-field interactions via the square-of-sum identity. For each
/// hierarchical field, `e_m ⊙ e_m − Σ e_n ⊙ e_n` equals twice the sum of
/// elementwise products over distinct member pairs, so a field with a single
/// member feature contributes exactly zero.
pub fn fm_term<T: Real>(
    embedded: &EmbeddedInstance<T>,
    schema: &FieldSchema,
    params: &FwbiParams<T>,
) -> Result<FmOut<T>> {
    check_field_vecs(&embedded.field_vecs, params)?;
    let dim = params.dim;
    let hf: Vec<Vec<T>> =
        embedded.field_vecs.iter().map(|e| e.iter().map(|&x| x * x).collect()).collect();
    let mut ht = vec![vec![T::zero(); dim]; params.m];
    for (n, e) in embedded.feature_vecs.iter().enumerate() {
        let t = &mut ht[schema.hierarchy_of(n)];
        for k in 0..dim {
            t[k] += e[k] * e[k];
        }
    }
    let mut h_fm = vec![T::zero(); dim];
    for m in 0..params.m {
        let rmm = params.r(m, m);
        for k in 0..dim {
            h_fm[k] += rmm * (hf[m][k] - ht[m][k]);
        }
    }
    Ok(FmOut { h_fm, hf, ht })
}

fn check_field_vecs<T: Real>(field_vecs: &[Vec<T>], params: &FwbiParams<T>) -> Result<()> {
    if field_vecs.len() != params.m {
        return Err(Error::LengthMismatch { expected: params.m, got: field_vecs.len() });
    }
    for v in field_vecs {
        if v.len() != params.dim {
            return Err(Error::LengthMismatch { expected: params.dim, got: v.len() });
        }
    }
    Ok(())
}

// ============================================================
// Forward / backward
// ============================================================

/// Every intermediate the backward pass needs.
#[derive(Debug, Clone)]
pub struct FwbiTrace<T> {
    pub h_s: T,
    pub h_mf: Vec<T>,
    pub h_fm: Vec<T>,
    pub hf: Vec<Vec<T>>,
    pub ht: Vec<Vec<T>>,
    /// Entry-wise multiplier applied to `h_mf + h_fm`: a 0/1 dropout mask in
    /// training, the keep probability at inference, ones when disabled.
    pub scale: Vec<T>,
    /// `[h_s, scale ⊙ (h_mf + h_fm)]`, length K_e + 1.
    pub h_in: Vec<T>,
    /// `W_proj^T h_in` before the activation.
    pub pre: Vec<T>,
    pub h_fwbi: Vec<T>,
}

pub fn forward<T: Real>(
    params: &FwbiParams<T>,
    activation: Activation,
    schema: &FieldSchema,
    feats: &impl Features,
    embedded: &EmbeddedInstance<T>,
    scale: Vec<T>,
) -> Result<FwbiTrace<T>> {
    let dim = params.dim;
    if scale.len() != dim {
        return Err(Error::LengthMismatch { expected: dim, got: scale.len() });
    }
    let h_s = linear_term(params, feats)?;
    let h_mf = mf_term(&embedded.field_vecs, params)?;
    let FmOut { h_fm, hf, ht } = fm_term(embedded, schema, params)?;

    let d = dim + 1;
    let mut h_in = vec![T::zero(); d];
    h_in[0] = h_s;
    for k in 0..dim {
        h_in[k + 1] = scale[k] * (h_mf[k] + h_fm[k]);
    }

    let mut pre = vec![T::zero(); d];
    for (j, &hj) in h_in.iter().enumerate() {
        let row = &params.w_proj[j * d..(j + 1) * d];
        for i in 0..d {
            pre[i] += row[i] * hj;
        }
    }
    let h_fwbi = pre.iter().map(|&x| activation.apply(x)).collect();

    Ok(FwbiTrace { h_s, h_mf, h_fm, hf, ht, scale, h_in, pre, h_fwbi })
}

/// Gradients of the layer's own parameters.
#[derive(Debug, Clone)]
pub struct FwbiGrads<T> {
    pub w0: T,
    /// Sparse linear gradients, one map of value index to gradient per field.
    pub w: Vec<BTreeMap<u32, T>>,
    pub r: Vec<T>,
    pub w_proj: Vec<T>,
}

/// One dense `K_e`-vector gradient per field.
pub type VecGrads<T> = Vec<Vec<T>>;

/// Backward through the layer. `upstream` is dLoss/dh_fwbi.
///
/// Returns the parameter gradients plus two embedding-side gradients that the
/// caller must still chain down to the tables: dLoss/de_m per hierarchical
/// field (to be copied to each member feature, since pooling is a plain sum)
/// and a direct dLoss/de_n per feature field from the intra-field term.
/// Interaction entries zeroed by the dropout mask contribute nothing to any
/// of these.
pub fn backward<T: Real>(
    params: &FwbiParams<T>,
    activation: Activation,
    schema: &FieldSchema,
    feats: &impl Features,
    embedded: &EmbeddedInstance<T>,
    trace: &FwbiTrace<T>,
    upstream: &[T],
) -> Result<(FwbiGrads<T>, VecGrads<T>, VecGrads<T>)> {
    let dim = params.dim;
    let d = dim + 1;
    if upstream.len() != d {
        return Err(Error::LengthMismatch { expected: d, got: upstream.len() });
    }

    // Activation, then the projection.
    let d_pre: Vec<T> = (0..d).map(|i| upstream[i] * activation.grad(trace.pre[i])).collect();
    let mut d_w_proj = vec![T::zero(); d * d];
    let mut d_h_in = vec![T::zero(); d];
    for j in 0..d {
        let hj = trace.h_in[j];
        let row = &params.w_proj[j * d..(j + 1) * d];
        let grad_row = &mut d_w_proj[j * d..(j + 1) * d];
        let mut acc = T::zero();
        for i in 0..d {
            grad_row[i] = hj * d_pre[i];
            acc += row[i] * d_pre[i];
        }
        d_h_in[j] = acc;
    }

    // Split the stacked input and undo the dropout scaling.
    let d_h_s = d_h_in[0];
    let du: Vec<T> = (0..dim).map(|k| trace.scale[k] * d_h_in[k + 1]).collect();

    // Linear submodule.
    let mut d_w: Vec<BTreeMap<u32, T>> = vec![BTreeMap::new(); params.w.len()];
    for (n, field) in d_w.iter_mut().enumerate() {
        for &j in feats.actives(n) {
            *field.entry(j).or_insert_with(T::zero) += d_h_s;
        }
    }

    let mut d_r = vec![T::zero(); params.r.len()];
    let mut d_field = vec![vec![T::zero(); dim]; params.m];
    let mut d_feature = vec![vec![T::zero(); dim]; embedded.feature_vecs.len()];

    // Inter-field term.
    for i in 0..params.m {
        for j in (i + 1)..params.m {
            let rij = params.r(i, j);
            let (ei, ej) = (&embedded.field_vecs[i], &embedded.field_vecs[j]);
            let mut dr = T::zero();
            for k in 0..dim {
                dr += du[k] * ei[k] * ej[k];
                d_field[i][k] += rij * du[k] * ej[k];
                d_field[j][k] += rij * du[k] * ei[k];
            }
            d_r[FwbiParams::<T>::r_index(params.m, i, j)] = dr;
        }
    }

    // Intra-field term: d/de_m of e_m⊙e_m is 2 e_m, and each member feature
    // also loses its own 2 e_n through the subtracted sum of squares.
    for m in 0..params.m {
        let rmm = params.r(m, m);
        let em = &embedded.field_vecs[m];
        let mut dr = T::zero();
        for k in 0..dim {
            dr += du[k] * (trace.hf[m][k] - trace.ht[m][k]);
            d_field[m][k] += (rmm + rmm) * du[k] * em[k];
        }
        d_r[FwbiParams::<T>::r_index(params.m, m, m)] = dr;
    }
    for (n, en) in embedded.feature_vecs.iter().enumerate() {
        let rmm = params.r(schema.hierarchy_of(n), schema.hierarchy_of(n));
        for k in 0..dim {
            d_feature[n][k] -= (rmm + rmm) * du[k] * en[k];
        }
    }

    let grads = FwbiGrads { w0: d_h_s, w: d_w, r: d_r, w_proj: d_w_proj };
    Ok((grads, d_field, d_feature))
}

// ============================================================
// Exact special cases
// ============================================================

/// Rewrite `schema` so every feature field shares one hierarchical field and
/// pin the layer to a plain factorization machine: `r = 1/2`, identity
/// projection, identity activation. With those settings `h_fwbi` is exactly
/// `[h_S, Σ_{n<n'} e_n ⊙ e_n']` over feature fields, so summing its entries
/// gives the classical FM score.
pub fn make_fm_config<T: Real>(
    schema: &FieldSchema,
    dim: usize,
) -> Result<(FieldSchema, FwbiParams<T>, Activation)> {
    let mut flat = schema.clone();
    flat.hierarchies = vec!["all".to_owned()];
    for f in &mut flat.fields {
        f.hierarchy = 0;
    }
    let mut params = FwbiParams::zeros(&flat, dim)?;
    params.r = vec![T::from_f64(0.5)];
    params.identity_projection();
    Ok((flat, params, Activation::Identity))
}

/// Give every feature field its own hierarchical field and pin the layer to a
/// field-weighted factorization machine: off-diagonal `r` carries the
/// per-field-pair weights (initialized to one here), the diagonal is zero so
/// the intra-field term vanishes, and projection and activation are identity.
pub fn make_fwfm_config<T: Real>(
    schema: &FieldSchema,
    dim: usize,
) -> Result<(FieldSchema, FwbiParams<T>, Activation)> {
    let mut split = schema.clone();
    split.hierarchies = split.fields.iter().map(|f| f.name.clone()).collect();
    for (n, f) in split.fields.iter_mut().enumerate() {
        f.hierarchy = n;
    }
    let mut params = FwbiParams::zeros(&split, dim)?;
    let m = params.m;
    for i in 0..m {
        for j in (i + 1)..m {
            *params.r_mut(i, j) = T::one();
        }
    }
    params.identity_projection();
    Ok((split, params, Activation::Identity))
}

// ============================================================
// Tests
// ============================================================
