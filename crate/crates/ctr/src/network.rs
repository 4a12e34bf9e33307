//! Full model: embeddings -> interaction layer and MLP tower -> scoring head.
//!
//! The interaction layer output `h_fwbi` (length K_e + 1) and the top MLP
//! activation are concatenated and reduced to a scalar by a trainable weight
//! vector; the score is squashed by a single logistic at the very end, with
//! the predicted probability clamped away from 0 and 1 so the log loss stays
//! finite. The MLP consumes the concatenated hierarchical field vectors, so
//! its input width is M * K_e.
//!
//! Backward is written by hand against the forward trace. The only
//! re-entrant piece of state is the trace itself: a model is safe to score
//! from many threads at once.

use std::collections::BTreeMap;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dicefactor::DiceMask;
use crate::embedding::{EmbeddedInstance, EmbeddingTable};
use crate::error::{Error, Result};
use crate::fwbi::{self, Activation, FwbiParams, FwbiTrace};
use crate::real::Real;
use crate::schema::{Features, FieldSchema};

/// Lower clamp for predicted probabilities; the upper clamp is its mirror.
pub const PROB_CLAMP: f64 = 1e-7;

// ============================================================
// Configuration
// ============================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadActivation {
    /// Raw dot product feeds the logistic. Default.
    Linear,
    /// Optional variant that rectifies the dot product first.
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceConfig {
    pub enabled: bool,
    /// Keep probability.
    pub beta: f64,
    /// Sample a fresh mask per example instead of per mini-batch
    /// (ablation option; the default shares one mask per batch).
    pub per_example: bool,
}

impl Default for DiceConfig {
    fn default() -> Self {
        DiceConfig { enabled: true, beta: 0.7, per_example: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Hidden widths of the tower; empty means no tower.
    pub mlp_widths: Vec<usize>,
    pub fwbi_activation: Activation,
    pub head_activation: HeadActivation,
    pub dice: DiceConfig,
    /// Recovery configurations freeze parts of the model; frozen groups are
    /// skipped by the optimizer.
    pub train_r: bool,
    pub train_w_proj: bool,
    pub train_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            mlp_widths: vec![64, 32],
            fwbi_activation: Activation::Relu,
            head_activation: HeadActivation::Linear,
            dice: DiceConfig::default(),
            train_r: true,
            train_w_proj: true,
            train_head: true,
        }
    }
}

// ============================================================
// Parameters
// ============================================================

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer<T> {
    /// Row-major d_out x d_in.
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MlpParams<T> {
    pub layers: Vec<MlpLayer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub w: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub schema: FieldSchema,
    pub config: ModelConfig,
    pub embeddings: EmbeddingTable<T>,
    pub fwbi: FwbiParams<T>,
    pub mlp: MlpParams<T>,
    pub head: HeadParams<T>,
}

fn uniform_fill<T: Real>(slice: &mut [T], bound: f64, rng: &mut impl Rng) {
    let b = T::from_f64(bound);
    let dist = Uniform::new_inclusive(-b, b).expect("valid bounds");
    for x in slice {
        *x = dist.sample(rng);
    }
}

impl<T: Real> ModelParams<T> {
    /// Full model with seeded random initialization. Parameter groups are
    /// drawn in a fixed order (embeddings, interaction, tower, head), so one
    /// seed pins every scalar.
    pub fn new(schema: FieldSchema, config: ModelConfig, seed: u64) -> Result<Self> {
        if !schema.is_resolved() {
            return Err(Error::Schema {
                line: 0,
                msg: "schema has unresolved cardinalities; build a vocabulary first".into(),
            });
        }
        if config.embed_dim == 0 {
            return Err(Error::LengthMismatch { expected: 1, got: 0 });
        }
        if !(0.0..=1.0).contains(&config.dice.beta) {
            return Err(Error::BetaOutOfRange(config.dice.beta));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = config.embed_dim;
        let embeddings = EmbeddingTable::init(&schema, dim, &mut rng)?;
        let fwbi = FwbiParams::init(&schema, dim, &mut rng)?;

        let mut layers = Vec::with_capacity(config.mlp_widths.len());
        let mut d_in = schema.n_hierarchies() * dim;
        for &d_out in &config.mlp_widths {
            if d_out == 0 {
                return Err(Error::LengthMismatch { expected: 1, got: 0 });
            }
            let mut w = vec![T::zero(); d_out * d_in];
            uniform_fill(&mut w, 1.0 / (d_in as f64).sqrt(), &mut rng);
            layers.push(MlpLayer { w, b: vec![T::zero(); d_out], d_in, d_out });
            d_in = d_out;
        }
        let mlp = MlpParams { layers };

        let head_len = (dim + 1) + config.mlp_widths.last().copied().unwrap_or(0);
        let mut head_w = vec![T::zero(); head_len];
        uniform_fill(&mut head_w, 1.0 / (head_len as f64).sqrt(), &mut rng);

        Ok(ModelParams { schema, config, embeddings, fwbi, mlp, head: HeadParams { w: head_w } })
    }

    /// Exact factorization-machine configuration: one hierarchical field, r
    /// pinned to 1/2, identity projection and activations, no tower, head
    /// fixed to all ones. The raw score then equals the classical FM score
    /// over the feature-field embeddings.
    pub fn new_fm(schema: &FieldSchema, embed_dim: usize, seed: u64) -> Result<Self> {
        let (flat, fwbi_params, act) = fwbi::make_fm_config::<T>(schema, embed_dim)?;
        Self::recovery(flat, fwbi_params, act, embed_dim, seed)
    }

    /// Exact field-weighted FM configuration: every feature field is its own
    /// hierarchical field, diagonal r zero, off-diagonal r trainable.
    pub fn new_fwfm(schema: &FieldSchema, embed_dim: usize, seed: u64) -> Result<Self> {
        let (split, fwbi_params, act) = fwbi::make_fwfm_config::<T>(schema, embed_dim)?;
        let mut model = Self::recovery(split, fwbi_params, act, embed_dim, seed)?;
        model.config.train_r = true; // pair weights do train in this variant
        Ok(model)
    }

    fn recovery(
        schema: FieldSchema,
        fwbi_params: FwbiParams<T>,
        act: Activation,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let config = ModelConfig {
            embed_dim,
            mlp_widths: vec![],
            fwbi_activation: act,
            head_activation: HeadActivation::Linear,
            dice: DiceConfig { enabled: false, beta: 1.0, per_example: false },
            train_r: false,
            train_w_proj: false,
            train_head: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = EmbeddingTable::init(&schema, embed_dim, &mut rng)?;
        Ok(ModelParams {
            schema,
            config,
            embeddings,
            fwbi: fwbi_params,
            mlp: MlpParams::default(),
            head: HeadParams { w: vec![T::one(); embed_dim + 1] },
        })
    }

    /// Plain logistic regression on the sparse features: the interaction
    /// vector is pinned to zero and the head passes `h_S` through untouched.
    /// Only the bias and the per-value linear weights train.
    pub fn new_linear(schema: &FieldSchema, seed: u64) -> Result<Self> {
        let mut fwbi_params = FwbiParams::zeros(schema, 1)?;
        fwbi_params.identity_projection();
        let config = ModelConfig {
            embed_dim: 1,
            mlp_widths: vec![],
            fwbi_activation: Activation::Identity,
            head_activation: HeadActivation::Linear,
            dice: DiceConfig { enabled: false, beta: 1.0, per_example: false },
            train_r: false,
            train_w_proj: false,
            train_head: false,
        };
        let _ = seed; // nothing random in this variant
        let mut head = vec![T::zero(); 2];
        head[0] = T::one();
        Ok(ModelParams {
            schema: schema.clone(),
            config,
            embeddings: EmbeddingTable::zeros(schema, 1)?,
            fwbi: fwbi_params,
            mlp: MlpParams::default(),
            head: HeadParams { w: head },
        })
    }
}

// ============================================================
// Forward
// ============================================================

/// Which path the dropout takes.
#[derive(Debug, Clone, Copy)]
pub enum Phase<'a> {
    /// Training; carries the current mask when the dropout is enabled.
    Train(Option<&'a DiceMask>),
    /// Serving; the interaction vector is scaled by the keep probability.
    Inference,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub embedded: EmbeddedInstance<T>,
    pub fwbi: FwbiTrace<T>,
    /// Concatenated hierarchical field vectors, the tower input.
    pub h0: Vec<T>,
    /// Post-activation tower outputs, one per layer.
    pub mlp_acts: Vec<Vec<T>>,
    /// `[h_fwbi, top tower activation]`.
    pub h_f: Vec<T>,
    /// Head dot product before its optional activation.
    pub s: T,
    /// Raw score feeding the logistic.
    pub z: T,
    /// Clamped probability.
    pub p: T,
}

pub fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Binary cross-entropy for one example. The probability must lie strictly
/// inside (0, 1); the forward pass guarantees that by clamping.
pub fn logloss<T: Real>(label: u8, p: T) -> Result<T> {
    if p <= T::zero() || p >= T::one() {
        return Err(Error::Domain(p.as_f64()));
    }
    Ok(if label == 1 { -p.ln() } else { -(T::one() - p).ln() })
}

pub fn mlp_forward<T: Real>(mlp: &MlpParams<T>, h0: &[T]) -> Result<Vec<Vec<T>>> {
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(mlp.layers.len());
    let mut input = h0;
    for layer in &mlp.layers {
        if input.len() != layer.d_in {
            return Err(Error::LengthMismatch { expected: layer.d_in, got: input.len() });
        }
        let mut out = vec![T::zero(); layer.d_out];
        for (i, out_i) in out.iter_mut().enumerate() {
            let row = &layer.w[i * layer.d_in..(i + 1) * layer.d_in];
            let mut a = layer.b[i];
            for (wj, xj) in row.iter().zip(input) {
                a += *wj * *xj;
            }
            *out_i = if a > T::zero() { a } else { T::zero() };
        }
        acts.push(out);
        input = acts.last().unwrap();
    }
    Ok(acts)
}

/// Per-layer tower gradients as (dW, db) pairs.
pub type MlpGrads<T> = Vec<(Vec<T>, Vec<T>)>;

/// Backward through the tower. Returns per-layer (dW, db) and dLoss/dh0.
/// The rectifier's subgradient at exactly zero is zero.
pub fn mlp_backward<T: Real>(
    mlp: &MlpParams<T>,
    h0: &[T],
    acts: &[Vec<T>],
    d_top: &[T],
) -> (MlpGrads<T>, Vec<T>) {
    let mut grads: MlpGrads<T> = Vec::with_capacity(mlp.layers.len());
    let mut d_out = d_top.to_vec();
    for l in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[l];
        let input: &[T] = if l == 0 { h0 } else { &acts[l - 1] };
        let d_a: Vec<T> = (0..layer.d_out)
            .map(|i| if acts[l][i] > T::zero() { d_out[i] } else { T::zero() })
            .collect();
        let mut dw = vec![T::zero(); layer.w.len()];
        let mut d_in = vec![T::zero(); layer.d_in];
        for i in 0..layer.d_out {
            let w_row = &layer.w[i * layer.d_in..(i + 1) * layer.d_in];
            let g_row = &mut dw[i * layer.d_in..(i + 1) * layer.d_in];
            for j in 0..layer.d_in {
                g_row[j] = d_a[i] * input[j];
                d_in[j] += w_row[j] * d_a[i];
            }
        }
        grads.push((dw, d_a));
        d_out = d_in;
    }
    grads.reverse();
    (grads, d_out)
}

impl<T: Real> ModelParams<T> {
    fn interaction_scale(&self, phase: Phase<'_>) -> Result<Vec<T>> {
        let dim = self.config.embed_dim;
        match phase {
            Phase::Train(Some(mask)) => {
                if mask.keep.len() != dim {
                    return Err(Error::LengthMismatch { expected: dim, got: mask.keep.len() });
                }
                Ok(mask.scale_vec())
            }
            Phase::Train(None) => Ok(vec![T::one(); dim]),
            Phase::Inference => {
                let s = if self.config.dice.enabled {
                    T::from_f64(self.config.dice.beta)
                } else {
                    T::one()
                };
                Ok(vec![s; dim])
            }
        }
    }

    pub fn forward(&self, feats: &impl Features, phase: Phase<'_>) -> Result<ForwardTrace<T>> {
        let embedded = self.embeddings.embed_instance(&self.schema, feats)?;
        let scale = self.interaction_scale(phase)?;
        let fwbi_trace = fwbi::forward(
            &self.fwbi,
            self.config.fwbi_activation,
            &self.schema,
            feats,
            &embedded,
            scale,
        )?;

        let dim = self.config.embed_dim;
        let mut h0 = Vec::with_capacity(self.schema.n_hierarchies() * dim);
        for v in &embedded.field_vecs {
            h0.extend_from_slice(v);
        }
        let mlp_acts = mlp_forward(&self.mlp, &h0)?;

        let mut h_f = fwbi_trace.h_fwbi.clone();
        if let Some(top) = mlp_acts.last() {
            h_f.extend_from_slice(top);
        }
        if h_f.len() != self.head.w.len() {
            return Err(Error::LengthMismatch { expected: self.head.w.len(), got: h_f.len() });
        }
        let mut s = T::zero();
        for (w, x) in self.head.w.iter().zip(&h_f) {
            s += *w * *x;
        }
        let z = match self.config.head_activation {
            HeadActivation::Linear => s,
            HeadActivation::Relu => {
                if s > T::zero() {
                    s
                } else {
                    T::zero()
                }
            }
        };
        let lo = T::from_f64(PROB_CLAMP);
        let hi = T::one() - lo;
        let p = sigmoid(z).max(lo).min(hi);

        Ok(ForwardTrace { embedded, fwbi: fwbi_trace, h0, mlp_acts, h_f, s, z, p })
    }

    /// Serving-path probability. Consumes no randomness: calling it twice on
    /// the same input returns bit-identical results.
    pub fn predict(&self, feats: &impl Features) -> Result<T> {
        Ok(self.forward(feats, Phase::Inference)?.p)
    }

    /// Serving-path raw score (the value feeding the logistic). This is what
    /// the FM/FwFM recovery configurations expose for equivalence checks.
    pub fn raw_score(&self, feats: &impl Features) -> Result<T> {
        Ok(self.forward(feats, Phase::Inference)?.z)
    }

    /// Backward for one example given dLoss/dz. For the log loss that
    /// upstream value is `p - y`.
    pub fn backward(
        &self,
        feats: &impl Features,
        trace: &ForwardTrace<T>,
        dz: T,
    ) -> Result<Gradients<T>> {
        let dim = self.config.embed_dim;
        let d = dim + 1;

        let d_s = match self.config.head_activation {
            HeadActivation::Linear => dz,
            HeadActivation::Relu => {
                if trace.s > T::zero() {
                    dz
                } else {
                    T::zero()
                }
            }
        };

        let d_head: Vec<T> = trace.h_f.iter().map(|&x| d_s * x).collect();
        let d_h_f: Vec<T> = self.head.w.iter().map(|&w| d_s * w).collect();

        let (mlp_grads, d_h0) = if self.mlp.layers.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            mlp_backward(&self.mlp, &trace.h0, &trace.mlp_acts, &d_h_f[d..])
        };

        let (fwbi_grads, mut d_field, d_feature_direct) = fwbi::backward(
            &self.fwbi,
            self.config.fwbi_activation,
            &self.schema,
            feats,
            &trace.embedded,
            &trace.fwbi,
            &d_h_f[..d],
        )?;

        if !d_h0.is_empty() {
            for (m, dv) in d_field.iter_mut().enumerate() {
                for k in 0..dim {
                    dv[k] += d_h0[m * dim + k];
                }
            }
        }

        // Chain pooled-field gradients to each member feature, add the direct
        // intra-field term, then scatter into the active columns.
        let mut embed: Vec<BTreeMap<u32, Vec<T>>> = vec![BTreeMap::new(); self.schema.n_fields()];
        for n in 0..self.schema.n_fields() {
            let m = self.schema.hierarchy_of(n);
            let mut d_feat = d_feature_direct[n].clone();
            for k in 0..dim {
                d_feat[k] += d_field[m][k];
            }
            for &j in feats.actives(n) {
                let slot = embed[n].entry(j).or_insert_with(|| vec![T::zero(); dim]);
                for k in 0..dim {
                    slot[k] += d_feat[k];
                }
            }
        }

        Ok(Gradients {
            embed,
            w0: fwbi_grads.w0,
            w: fwbi_grads.w,
            r: fwbi_grads.r,
            w_proj: fwbi_grads.w_proj,
            mlp: mlp_grads,
            head: d_head,
        })
    }
}

// ============================================================
// Gradients
// ============================================================

/// Per-example or accumulated mini-batch gradients. Embedding and linear
/// gradients stay sparse (only touched value indices appear); everything
/// else is dense.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub embed: Vec<BTreeMap<u32, Vec<T>>>,
    pub w0: T,
    pub w: Vec<BTreeMap<u32, T>>,
    pub r: Vec<T>,
    pub w_proj: Vec<T>,
    pub mlp: MlpGrads<T>,
    pub head: Vec<T>,
}

impl<T: Real> Gradients<T> {
    /// Accumulate another example's gradients in place. Addition order is the
    /// caller's iteration order, which the trainer keeps fixed.
    pub fn add(&mut self, other: &Gradients<T>) {
        for (mine, theirs) in self.embed.iter_mut().zip(&other.embed) {
            for (&j, g) in theirs {
                match mine.get_mut(&j) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += *b;
                        }
                    }
                    None => {
                        mine.insert(j, g.clone());
                    }
                }
            }
        }
        self.w0 += other.w0;
        for (mine, theirs) in self.w.iter_mut().zip(&other.w) {
            for (&j, &g) in theirs {
                *mine.entry(j).or_insert_with(T::zero) += g;
            }
        }
        add_slice(&mut self.r, &other.r);
        add_slice(&mut self.w_proj, &other.w_proj);
        for ((dw, db), (ow, ob)) in self.mlp.iter_mut().zip(&other.mlp) {
            add_slice(dw, ow);
            add_slice(db, ob);
        }
        add_slice(&mut self.head, &other.head);
    }

    pub fn scale(&mut self, c: T) {
        for field in &mut self.embed {
            for g in field.values_mut() {
                for x in g.iter_mut() {
                    *x *= c;
                }
            }
        }
        self.w0 *= c;
        for field in &mut self.w {
            for g in field.values_mut() {
                *g *= c;
            }
        }
        for x in self.r.iter_mut().chain(self.w_proj.iter_mut()).chain(self.head.iter_mut()) {
            *x *= c;
        }
        for (dw, db) in &mut self.mlp {
            for x in dw.iter_mut().chain(db.iter_mut()) {
                *x *= c;
            }
        }
    }

    pub fn empty_like(model: &ModelParams<T>) -> Gradients<T> {
        Gradients {
            embed: vec![BTreeMap::new(); model.schema.n_fields()],
            w0: T::zero(),
            w: vec![BTreeMap::new(); model.schema.n_fields()],
            r: vec![T::zero(); model.fwbi.r.len()],
            w_proj: vec![T::zero(); model.fwbi.w_proj.len()],
            mlp: model
                .mlp
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.w.len()], vec![T::zero(); l.b.len()]))
                .collect(),
            head: vec![T::zero(); model.head.w.len()],
        }
    }
}

fn add_slice<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += *b;
    }
}

// ============================================================
// Tests
// ============================================================
