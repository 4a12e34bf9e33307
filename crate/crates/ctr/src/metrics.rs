//! Ranking metrics, parameter accounting, and a wall-clock throughput
//! benchmark.
//!
//! AUC uses the rank statistic: sort by score, give tied scores their
//! average rank, sum the positive ranks. Ties therefore earn exactly half
//! credit, and the result matches naive pair counting bit for bit because
//! both reduce to the same integer-and-half-integer arithmetic.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::dicefactor::sample_mask;
use crate::error::{Error, Result};
use crate::network::{logloss, ModelConfig, ModelParams, Phase};
use crate::real::Real;
use crate::schema::FieldSchema;
use crate::trainer::{adagrad_step, TrainOptions, TrainState};

// ============================================================
// AUC and log loss
// ============================================================

/// Area under the ROC curve, computed from ranks in O(n log n).
/// Scores may repeat; tied pairs count one half. Errors when the labels are
/// single-class (the statistic is undefined) or any score is NaN.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), got: scores.len() });
    }
    if scores.is_empty() {
        return Err(Error::EmptyData("no predictions to rank".into()));
    }
    if let Some(&bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Domain(bad));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Walk runs of equal scores; each member of a run gets the run's average
    // 1-based rank, an exact multiple of 0.5.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

// ============================================================
// Evaluation
// ============================================================

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// None when the labels are single-class.
    pub auc: Option<f64>,
    pub mean_logloss: f64,
    pub n_examples: usize,
    pub wall_seconds: f64,
}

/// Single pass over the data in inference mode.
pub fn evaluate<T: Real>(model: &ModelParams<T>, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyData("evaluation set has no rows".into()));
    }
    if data.n_fields() != model.schema.n_fields() {
        return Err(Error::LengthMismatch {
            expected: model.schema.n_fields(),
            got: data.n_fields(),
        });
    }
    let start = Instant::now();
    let mut scores = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0f64;
    for (i, &label) in data.labels().iter().enumerate() {
        let p = model.predict(&data.get(i))?;
        loss_sum += logloss(label, p)?.as_f64();
        scores.push(p.as_f64());
    }
    let auc_value = match auc(&scores, data.labels()) {
        Ok(a) => Some(a),
        Err(Error::AucUndefined) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        auc: auc_value,
        mean_logloss: loss_sum / data.len() as f64,
        n_examples: data.len(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

// ============================================================
// Parameter accounting
// ============================================================

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    /// Embedding tables, `sum(K_n) * K`.
    pub embedding: usize,
    /// Global bias plus one weight per feature value.
    pub linear: usize,
    /// Field-pair weights, `M * (M + 1) / 2`.
    pub pair_weights: usize,
    /// Interaction projection, `(K + 1)^2`.
    pub projection: usize,
    pub mlp: usize,
    pub head: usize,
    pub total: usize,
    /// Asymptotic per-example cost with the concrete sizes substituted.
    pub complexity: String,
}

/// Exact trainable-scalar count by category. Requires a resolved schema.
pub fn param_count(schema: &FieldSchema, config: &ModelConfig) -> Result<ParamCount> {
    let n = schema.total_features()?;
    let k = config.embed_dim;
    let m = schema.n_hierarchies();
    let embedding = n * k;
    let linear = 1 + n;
    let pair_weights = m * (m + 1) / 2;
    let projection = (k + 1) * (k + 1);
    let mut mlp = 0usize;
    let mut d_in = m * k;
    for &w in &config.mlp_widths {
        mlp += d_in * w + w;
        d_in = w;
    }
    let head = (k + 1) + config.mlp_widths.last().copied().unwrap_or(0);
    let h = config.mlp_widths.first().copied().unwrap_or(0);
    Ok(ParamCount {
        embedding,
        linear,
        pair_weights,
        projection,
        mlp,
        head,
        total: embedding + linear + pair_weights + projection + mlp + head,
        complexity: format!("O(N*K + M^2 + M*K*H) with N={n}, K={k}, M={m}, H={h}"),
    })
}

// ============================================================
// Throughput benchmark
// ============================================================

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    /// Median examples/second over 5 trials, scoring only.
    pub inference_ips: f64,
    /// Median examples/second over 5 trials of forward + backward + update.
    pub train_ips: f64,
    pub inference_trials: Vec<f64>,
    pub train_trials: Vec<f64>,
}

const BENCH_TRIALS: usize = 5;

/// Measures both serving and training throughput, cycling over the given
/// rows. The time budget is split evenly across the ten trials, so tiny
/// budgets still return (with noisier numbers). Absolute figures are
/// machine-specific; only self-relative comparisons are meaningful.
pub fn benchmark_throughput<T: Real>(
    model: &ModelParams<T>,
    data: &Dataset,
    seconds: f64,
) -> Result<BenchReport> {
    if seconds <= 0.0 || seconds.is_nan() {
        return Err(Error::ZeroBudget(seconds));
    }
    if data.is_empty() {
        return Err(Error::EmptyData("benchmark needs at least one row".into()));
    }
    if data.n_fields() != model.schema.n_fields() {
        return Err(Error::LengthMismatch {
            expected: model.schema.n_fields(),
            got: data.n_fields(),
        });
    }
    let budget = seconds / (2 * BENCH_TRIALS) as f64;
    let mut inference_trials = Vec::with_capacity(BENCH_TRIALS);
    let mut train_trials = Vec::with_capacity(BENCH_TRIALS);
    for _ in 0..BENCH_TRIALS {
        inference_trials.push(inference_trial(model, data, budget)?);
    }
    for trial in 0..BENCH_TRIALS {
        train_trials.push(train_trial(model, data, budget, trial as u64)?);
    }
    Ok(BenchReport {
        inference_ips: median(&inference_trials),
        train_ips: median(&train_trials),
        inference_trials,
        train_trials,
    })
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn inference_trial<T: Real>(model: &ModelParams<T>, data: &Dataset, budget: f64) -> Result<f64> {
    let start = Instant::now();
    let mut count = 0usize;
    'outer: loop {
        for i in 0..data.len() {
            let p = model.predict(&data.get(i))?;
            std::hint::black_box(p);
            count += 1;
            if count.is_multiple_of(64) && start.elapsed().as_secs_f64() >= budget {
                break 'outer;
            }
        }
        if start.elapsed().as_secs_f64() >= budget {
            break;
        }
    }
    Ok(count as f64 / start.elapsed().as_secs_f64())
}

fn train_trial<T: Real>(
    model: &ModelParams<T>,
    data: &Dataset,
    budget: f64,
    seed: u64,
) -> Result<f64> {
    let mut work = model.clone();
    let mut state = TrainState::new(&work);
    let opts = TrainOptions { batch_size: data.len().min(256), ..TrainOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dice = work.config.dice;
    let dim = work.config.embed_dim;

    let start = Instant::now();
    let mut count = 0usize;
    'outer: loop {
        let mut i = 0;
        while i < data.len() {
            let end = (i + opts.batch_size).min(data.len());
            let mask =
                if dice.enabled { Some(sample_mask(dice.beta, dim, &mut rng)?) } else { None };
            let mut acc = crate::network::Gradients::empty_like(&work);
            for idx in i..end {
                let view = data.get(idx);
                let trace = work.forward(&view, Phase::Train(mask.as_ref()))?;
                let dz = trace.p - T::from_f64(view.label as f64);
                acc.add(&work.backward(&view, &trace, dz)?);
            }
            acc.scale(T::one() / T::from_f64((end - i) as f64));
            adagrad_step(&mut work, &mut state, &acc, &opts);
            count += end - i;
            i = end;
            if start.elapsed().as_secs_f64() >= budget {
                break 'outer;
            }
        }
    }
    Ok(count as f64 / start.elapsed().as_secs_f64())
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::network::DiceConfig;
    use crate::oracle;
    use crate::schema::Instance;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn auc_pinned_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.8, 0.6, 0.4], &[1, 0, 1]).unwrap(), 0.5);
        // Ranks 1..4 with positives at ranks 2 and 4: (6 - 3) / (2 * 2).
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn constant_scores_give_exactly_one_half() {
        assert_eq!(auc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn auc_error_cases() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::AucUndefined)));
        assert!(matches!(auc(&[0.1, 0.2], &[0, 0]), Err(Error::AucUndefined)));
        assert!(matches!(auc(&[], &[]), Err(Error::EmptyData(_))));
        assert!(matches!(auc(&[0.1], &[1, 0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(auc(&[f64::NAN, 0.2], &[1, 0]), Err(Error::Domain(_))));
    }

    #[test]
    fn auc_matches_pair_counting_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for round in 0..30 {
            let n = 2 + rng.random_range(0..120);
            // Quantized scores make ties frequent.
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(0..12) as f64) / 10.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            match (auc(&scores, &labels), oracle::auc_pairwise(&scores, &labels)) {
                (Ok(fast), Some(slow)) => assert_eq!(fast, slow, "round {round}"),
                (Err(Error::AucUndefined), None) => {}
                (a, b) => panic!("disagreement: {a:?} vs {b:?}"),
            }
        }
    }

    proptest! {
        // Rank statistics only see the ordering, so any strictly increasing
        // map must leave the value untouched bit for bit. Scores sit on a
        // coarse lattice so the transform cannot merge distinct values.
        #[test]
        fn auc_invariant_under_monotone_transforms(
            raw in proptest::collection::vec((0i32..2000, 0u8..2), 2..120),
            a in 0.5f64..2.0,
            b in 0.5f64..2.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 100.0).collect();
            let labels: Vec<u8> = raw.iter().map(|&(_, y)| y).collect();
            let mapped: Vec<f64> =
                scores.iter().map(|&x| a * x + b * x.atan()).collect();
            match (auc(&scores, &labels), auc(&mapped, &labels)) {
                (Ok(before), Ok(after)) => prop_assert_eq!(before, after),
                (Err(Error::AucUndefined), Err(Error::AucUndefined)) => {}
                (x, y) => prop_assert!(false, "disagreement: {:?} vs {:?}", x, y),
            }
        }
    }

    fn two_field_schema() -> FieldSchema {
        FieldSchema::parse(
            "@hierarchy u i\n\
             a, 2, one-hot, u, dict\n\
             b, 2, one-hot, i, dict\n",
        )
        .unwrap()
    }

    fn toy_dataset(labels: &[u8]) -> Dataset {
        let mut data = Dataset::new(2);
        for (i, &y) in labels.iter().enumerate() {
            let inst = Instance {
                label: y,
                actives: vec![vec![(i % 2) as u32], vec![((i / 2) % 2) as u32]],
            };
            data.push(&inst);
        }
        data
    }

    #[test]
    fn evaluate_constant_model_reports_ln2_and_tied_auc() {
        let model = ModelParams::<f64>::new_linear(&two_field_schema(), 0).unwrap();
        let data = toy_dataset(&[1, 0, 1, 0]);
        let report = evaluate(&model, &data).unwrap();
        assert_eq!(report.auc, Some(0.5));
        assert!((report.mean_logloss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(report.n_examples, 4);
    }

    #[test]
    fn evaluate_single_class_reports_undefined_auc() {
        let model = ModelParams::<f64>::new_linear(&two_field_schema(), 0).unwrap();
        let report = evaluate(&model, &toy_dataset(&[1, 1, 1])).unwrap();
        assert_eq!(report.auc, None);
        assert!(matches!(evaluate(&model, &Dataset::new(2)), Err(Error::EmptyData(_))));
    }

    #[test]
    fn param_count_tiny_case_by_hand() {
        // One field of cardinality 1, K=1, M=1, no tower:
        // embedding 1, linear 2, pair weights 1, projection 4, head 2.
        let schema = FieldSchema::parse("@hierarchy only\nf, 1, one-hot, only, dict").unwrap();
        let config = ModelConfig { embed_dim: 1, mlp_widths: vec![], ..ModelConfig::default() };
        let count = param_count(&schema, &config).unwrap();
        assert_eq!(count.embedding, 1);
        assert_eq!(count.linear, 2);
        assert_eq!(count.pair_weights, 1);
        assert_eq!(count.projection, 4);
        assert_eq!(count.mlp, 0);
        assert_eq!(count.head, 2);
        assert_eq!(count.total, 10);
    }

    #[test]
    fn doubling_embed_dim_doubles_the_embedding_block() {
        let schema = two_field_schema();
        let mut config = ModelConfig { embed_dim: 8, ..ModelConfig::default() };
        let small = param_count(&schema, &config).unwrap();
        config.embed_dim = 16;
        let big = param_count(&schema, &config).unwrap();
        assert_eq!(big.embedding, 2 * small.embedding);
    }

    #[test]
    fn param_count_includes_tower_weights_and_biases() {
        let schema = two_field_schema(); // M = 2
        let config = ModelConfig { embed_dim: 4, mlp_widths: vec![3, 2], ..ModelConfig::default() };
        let count = param_count(&schema, &config).unwrap();
        assert_eq!(count.mlp, (8 * 3 + 3) + (3 * 2 + 2));
        assert_eq!(count.head, 5 + 2);
    }

    #[test]
    fn bench_rejects_zero_budget_and_empty_data() {
        let model = ModelParams::<f64>::new_linear(&two_field_schema(), 0).unwrap();
        let data = toy_dataset(&[1, 0]);
        assert!(matches!(benchmark_throughput(&model, &data, 0.0), Err(Error::ZeroBudget(_))));
        assert!(matches!(benchmark_throughput(&model, &data, -1.0), Err(Error::ZeroBudget(_))));
        assert!(matches!(
            benchmark_throughput(&model, &Dataset::new(2), 0.5),
            Err(Error::EmptyData(_))
        ));
    }

    fn wide_schema(fields: usize, hierarchies: usize) -> FieldSchema {
        let names: Vec<String> = (0..hierarchies).map(|m| format!("h{m}")).collect();
        let mut text = format!("@hierarchy {}\n", names.join(" "));
        for f in 0..fields {
            text.push_str(&format!("f{f}, 4, one-hot, h{}, dict\n", f % hierarchies));
        }
        FieldSchema::parse(&text).unwrap()
    }

    fn single_value_dataset(schema: &FieldSchema, rows: usize) -> Dataset {
        let mut data = Dataset::new(schema.n_fields());
        for i in 0..rows {
            let inst = Instance {
                label: (i % 2) as u8,
                actives: (0..schema.n_fields()).map(|f| vec![((i + f) % 4) as u32]).collect(),
            };
            data.push(&inst);
        }
        data
    }

    // Wall-clock sensitive; single test so the measurements never run in
    // parallel with each other.
    #[test]
    fn throughput_tracks_model_size() {
        let budget = 0.4;
        let config = |dim| ModelConfig {
            embed_dim: dim,
            mlp_widths: vec![],
            dice: DiceConfig { enabled: false, beta: 1.0, per_example: false },
            ..ModelConfig::default()
        };

        // A 1-field model must process at least 10x more rows per second
        // than a 100-field model at the same embedding width.
        let tiny_schema = wide_schema(1, 1);
        let tiny = ModelParams::<f32>::new(tiny_schema.clone(), config(8), 1).unwrap();
        let tiny_rate =
            benchmark_throughput(&tiny, &single_value_dataset(&tiny_schema, 64), budget)
                .unwrap()
                .inference_ips;

        let wide = wide_schema(100, 4);
        let big = ModelParams::<f32>::new(wide.clone(), config(8), 1).unwrap();
        let big_rate = benchmark_throughput(&big, &single_value_dataset(&wide, 64), budget)
            .unwrap()
            .inference_ips;
        assert!(
            tiny_rate >= 10.0 * big_rate,
            "expected >= 10x gap, got {tiny_rate:.0} vs {big_rate:.0}"
        );

        // At fixed feature count, more hierarchical fields means more pair
        // work, so throughput must not grow with M (10% timing slack).
        let mut rates = Vec::new();
        for m in [1usize, 4, 16] {
            let schema = wide_schema(32, m);
            let model = ModelParams::<f32>::new(schema.clone(), config(8), 1).unwrap();
            let rate = benchmark_throughput(&model, &single_value_dataset(&schema, 64), budget)
                .unwrap()
                .inference_ips;
            rates.push(rate);
        }
        assert!(rates[1] <= rates[0] * 1.10, "M=4 vs M=1: {rates:?}");
        assert!(rates[2] <= rates[1] * 1.10, "M=16 vs M=4: {rates:?}");
    }
}
