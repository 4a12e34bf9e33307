//! Embedding tables and hierarchical pooling.
//!
//! Every feature field n owns a dense K_e x K_n matrix stored column-major by
//! value index, so looking up a value is a contiguous column read and a sparse
//! gradient update touches exactly the active columns. A field's embedding is
//! the sum of its active columns (multi-hot cells sum several columns, and a
//! repeated value counts twice). Hierarchical field vectors are plain sums of
//! their member feature vectors, accumulated in ascending field order so
//! results are bit-reproducible.

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::schema::{Features, FieldSchema};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub dim: usize,
    /// `tables[n]` holds K_e * K_n scalars; column j is
    /// `tables[n][j * dim .. (j + 1) * dim]`.
    pub tables: Vec<Vec<T>>,
    pub cards: Vec<usize>,
}

impl<T: Real> EmbeddingTable<T> {
    /// Fresh table with entries drawn uniformly from ±1/sqrt(K_e), the same
    /// scheme the interaction projection uses. Field order and column order
    /// fix the draw order, so a seeded RNG reproduces the table exactly.
    pub fn init(schema: &FieldSchema, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut table = Self::zeros(schema, dim)?;
        let bound = T::from_f64(1.0 / (dim as f64).sqrt());
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        for field in &mut table.tables {
            for slot in field.iter_mut() {
                *slot = dist.sample(rng);
            }
        }
        Ok(table)
    }

    pub fn zeros(schema: &FieldSchema, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::LengthMismatch { expected: 1, got: 0 });
        }
        let mut tables = Vec::with_capacity(schema.n_fields());
        let mut cards = Vec::with_capacity(schema.n_fields());
        for n in 0..schema.n_fields() {
            let k = schema.cardinality(n)?;
            tables.push(vec![T::zero(); dim * k]);
            cards.push(k);
        }
        Ok(EmbeddingTable { dim, tables, cards })
    }

    pub fn n_fields(&self) -> usize {
        self.tables.len()
    }

    pub fn column(&self, field: usize, j: u32) -> &[T] {
        let j = j as usize;
        &self.tables[field][j * self.dim..(j + 1) * self.dim]
    }

    pub fn column_mut(&mut self, field: usize, j: u32) -> &mut [T] {
        let j = j as usize;
        &mut self.tables[field][j * self.dim..(j + 1) * self.dim]
    }

    /// Embedding of one feature field: the sum of its active columns.
    /// Zero actives (an empty multi-hot cell) give the zero vector.
    pub fn embed_feature(&self, field: usize, actives: &[u32]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim];
        for &j in actives {
            if j as usize >= self.cards[field] {
                return Err(Error::IndexOutOfRange {
                    field,
                    index: j,
                    cardinality: self.cards[field],
                });
            }
            for (o, &c) in out.iter_mut().zip(self.column(field, j)) {
                *o += c;
            }
        }
        Ok(out)
    }

    /// Feature vectors for every field plus the pooled vector of every
    /// hierarchical field.
    pub fn embed_instance(
        &self,
        schema: &FieldSchema,
        feats: &impl Features,
    ) -> Result<EmbeddedInstance<T>> {
        if feats.n_fields() != self.n_fields() {
            return Err(Error::LengthMismatch { expected: self.n_fields(), got: feats.n_fields() });
        }
        let mut feature_vecs = Vec::with_capacity(self.n_fields());
        for n in 0..self.n_fields() {
            feature_vecs.push(self.embed_feature(n, feats.actives(n))?);
        }
        let mut field_vecs = Vec::with_capacity(schema.n_hierarchies());
        for m in 0..schema.n_hierarchies() {
            let members: Vec<&[T]> = (0..self.n_fields())
                .filter(|&n| schema.hierarchy_of(n) == m)
                .map(|n| feature_vecs[n].as_slice())
                .collect();
            field_vecs.push(pool_field(&members, self.dim)?);
        }
        Ok(EmbeddedInstance { feature_vecs, field_vecs })
    }
}

/// Sum-pool feature vectors into one hierarchical field vector. No averaging
/// or other normalization; an empty member list pools to the zero vector.
pub fn pool_field<T: Real>(members: &[&[T]], dim: usize) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); dim];
    for v in members {
        if v.len() != dim {
            return Err(Error::LengthMismatch { expected: dim, got: v.len() });
        }
        for (o, &x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    Ok(out)
}

/// Embedded form of one instance: e_n per feature field and the pooled e_m
/// per hierarchical field.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedInstance<T> {
    pub feature_vecs: Vec<Vec<T>>,
    pub field_vecs: Vec<Vec<T>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Instance;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema(text: &str) -> FieldSchema {
        FieldSchema::parse(text).unwrap()
    }

    fn two_col_table() -> (FieldSchema, EmbeddingTable<f64>) {
        let s = schema("@hierarchy u\nf, 2, multi-hot, u, dict\n");
        let mut t = EmbeddingTable::<f64>::zeros(&s, 2).unwrap();
        t.column_mut(0, 0).copy_from_slice(&[2.0, 4.0]);
        t.column_mut(0, 1).copy_from_slice(&[3.0, 5.0]);
        (s, t)
    }

    #[test]
    fn embed_feature_selects_and_sums_columns() {
        let (_, t) = two_col_table();
        assert_eq!(t.embed_feature(0, &[0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(t.embed_feature(0, &[0, 1]).unwrap(), vec![5.0, 9.0]);
        assert_eq!(t.embed_feature(0, &[]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(t.embed_feature(0, &[1, 1]).unwrap(), vec![6.0, 10.0]);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let (_, t) = two_col_table();
        let e = t.embed_feature(0, &[2]).unwrap_err();
        assert!(matches!(e, Error::IndexOutOfRange { index: 2, cardinality: 2, .. }));
    }

    #[test]
    fn pooling_sums_without_normalization() {
        let a = [1.0, 2.0];
        let b = [10.0, 20.0];
        let c = [100.0, 200.0];
        let pooled = pool_field(&[&a, &b, &c], 2).unwrap();
        assert_eq!(pooled, vec![111.0, 222.0]);
        assert_eq!(pool_field::<f64>(&[], 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn pooling_rejects_ragged_members() {
        let a = [1.0, 2.0];
        let b = [1.0, 2.0, 3.0];
        assert!(matches!(
            pool_field(&[&a[..], &b[..]], 2),
            Err(Error::LengthMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn instance_embedding_pools_by_hierarchy() {
        let s = schema(
            "@hierarchy u i\na, 2, one-hot, u, dict\nb, 2, one-hot, u, dict\nc, 2, one-hot, i, dict\n",
        );
        let mut t = EmbeddingTable::<f64>::zeros(&s, 2).unwrap();
        t.column_mut(0, 1).copy_from_slice(&[1.0, 2.0]);
        t.column_mut(1, 0).copy_from_slice(&[10.0, 20.0]);
        t.column_mut(2, 1).copy_from_slice(&[5.0, 6.0]);
        let inst = Instance { label: 1, actives: vec![vec![1], vec![0], vec![1]] };
        let emb = t.embed_instance(&s, &inst).unwrap();
        assert_eq!(emb.feature_vecs[0], vec![1.0, 2.0]);
        assert_eq!(emb.field_vecs[0], vec![11.0, 22.0]); // a + b
        assert_eq!(emb.field_vecs[1], vec![5.0, 6.0]); // c alone
    }

    #[test]
    fn field_order_within_hierarchy_does_not_change_the_pool() {
        // Same columns attached to fields in swapped order: pooled vector is
        // bit-identical because addition runs in ascending field order over
        // the same set of addends.
        let s = schema("@hierarchy u\na, 2, one-hot, u, dict\nb, 2, one-hot, u, dict\n");
        let mut t1 = EmbeddingTable::<f64>::zeros(&s, 2).unwrap();
        t1.column_mut(0, 0).copy_from_slice(&[0.1, 0.7]);
        t1.column_mut(1, 0).copy_from_slice(&[0.3, 0.2]);
        let mut t2 = EmbeddingTable::<f64>::zeros(&s, 2).unwrap();
        t2.column_mut(0, 0).copy_from_slice(&[0.3, 0.2]);
        t2.column_mut(1, 0).copy_from_slice(&[0.1, 0.7]);
        let inst = Instance { label: 0, actives: vec![vec![0], vec![0]] };
        let a = t1.embed_instance(&s, &inst).unwrap().field_vecs;
        let b = t2.embed_instance(&s, &inst).unwrap().field_vecs;
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let s = schema("@hierarchy u\nf, 50, one-hot, u, dict\n");
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let t1 = EmbeddingTable::<f32>::init(&s, 16, &mut r1).unwrap();
        let t2 = EmbeddingTable::<f32>::init(&s, 16, &mut r2).unwrap();
        assert_eq!(t1.tables, t2.tables);
        let bound = 1.0 / (16.0f32).sqrt();
        assert!(t1.tables[0].iter().all(|x| x.abs() <= bound));
        // Not degenerate: draws actually vary.
        assert!(t1.tables[0].iter().any(|x| x.abs() > bound / 10.0));
    }

    #[test]
    fn pooled_gradient_wrt_selected_column_is_one() {
        // d(pool)/d(column entry) = 1 for active columns: check with central
        // finite differences on a random configuration.
        let s = schema("@hierarchy u\na, 3, multi-hot, u, dict\nb, 3, one-hot, u, dict\n");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = EmbeddingTable::<f64>::init(&s, 4, &mut rng).unwrap();
        let inst = Instance { label: 0, actives: vec![vec![0, 2], vec![1]] };
        let h = 1e-4;
        for k in 0..4 {
            let read =
                |t: &EmbeddingTable<f64>| t.embed_instance(&s, &inst).unwrap().field_vecs[0][k];
            let base = t.tables[0][2 * 4 + k];
            t.tables[0][2 * 4 + k] = base + h;
            let up = read(&t);
            t.tables[0][2 * 4 + k] = base - h;
            let down = read(&t);
            t.tables[0][2 * 4 + k] = base;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - 1.0).abs() < 1e-9, "fd={fd}");
        }
    }

    proptest! {
        // Splitting one multi-hot active set into disjoint parts and summing
        // the part embeddings reproduces the whole: lookup is linear.
        #[test]
        fn embedding_is_additive_over_active_sets(
            mut actives in proptest::collection::vec(0u32..8, 0..6),
            split in 0usize..6,
        ) {
            let s = schema("@hierarchy u\nf, 8, multi-hot, u, dict\n");
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let t = EmbeddingTable::<f64>::init(&s, 3, &mut rng).unwrap();
            actives.sort_unstable();
            let cut = split.min(actives.len());
            let whole = t.embed_feature(0, &actives).unwrap();
            let left = t.embed_feature(0, &actives[..cut]).unwrap();
            let right = t.embed_feature(0, &actives[cut..]).unwrap();
            for k in 0..3 {
                prop_assert!((whole[k] - (left[k] + right[k])).abs() < 1e-12);
            }
        }
    }
}
