//! Dictionary vocabularies for `dict`-sourced fields.
//!
//! Indices are assigned in first-seen order starting at 1; index 0 is the
//! reserved unknown slot, so a field with D distinct training values resolves
//! to cardinality D + 1. Hash-sourced fields never get a dictionary: their
//! index is a pure function of the value string.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{FieldSchema, IndexSource};

/// Per-field value dictionary. Immutable after the build pass; lookups on a
/// frozen vocabulary are safe to share across threads.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FieldVocab {
    values: Vec<String>,
    map: HashMap<String, u32>,
}

impl FieldVocab {
    /// Index for `value`, or 0 when the value was never seen in training.
    pub fn lookup(&self, value: &str) -> u32 {
        self.map.get(value).copied().unwrap_or(0)
    }

    /// Insert on first sight, returning the value's index either way.
    pub fn intern(&mut self, value: &str) -> u32 {
        if let Some(&i) = self.map.get(value) {
            return i;
        }
        let i = (self.values.len() + 1) as u32;
        self.values.push(value.to_owned());
        self.map.insert(value.to_owned(), i);
        i
    }

    /// Distinct values plus the reserved unknown slot.
    pub fn cardinality(&self) -> usize {
        self.values.len() + 1
    }

    pub fn distinct(&self) -> usize {
        self.values.len()
    }
}

impl From<Vec<String>> for FieldVocab {
    fn from(values: Vec<String>) -> Self {
        let map = values.iter().enumerate().map(|(i, v)| (v.clone(), (i + 1) as u32)).collect();
        FieldVocab { values, map }
    }
}

impl From<FieldVocab> for Vec<String> {
    fn from(v: FieldVocab) -> Self {
        v.values
    }
}

/// Dictionaries for every `dict` field of a schema, `None` for hashed fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub fields: Vec<Option<FieldVocab>>,
}

impl Vocabulary {
    /// Empty dictionaries shaped for `schema`.
    pub fn new(schema: &FieldSchema) -> Self {
        let fields = schema
            .fields
            .iter()
            .map(|f| match f.source {
                IndexSource::Dict => Some(FieldVocab::default()),
                IndexSource::Hash { .. } => None,
            })
            .collect();
        Vocabulary { fields }
    }

    /// Feed one raw value of one field during the build pass.
    ///
    /// `max_cardinality` caps every field's resolved cardinality (reserved
    /// slot included); a field whose declared cardinality is explicit is also
    /// capped by that declaration.
    pub fn observe(
        &mut self,
        schema: &FieldSchema,
        field: usize,
        value: &str,
        max_cardinality: usize,
    ) -> Result<()> {
        let Some(vocab) = self.fields[field].as_mut() else {
            return Ok(()); // hashed field: nothing to learn
        };
        let cap = schema.fields[field].cardinality.unwrap_or(max_cardinality).min(max_cardinality);
        if vocab.lookup(value) == 0 && vocab.cardinality() + 1 > cap {
            return Err(Error::VocabOverflow {
                field: schema.fields[field].name.clone(),
                max: cap,
            });
        }
        vocab.intern(value);
        Ok(())
    }

    pub fn field(&self, n: usize) -> Option<&FieldVocab> {
        self.fields[n].as_ref()
    }
}

impl FieldSchema {
    /// Copy of the schema with `auto` dictionary cardinalities filled in from
    /// a built vocabulary (distinct + 1 for the unknown slot). Fields with an
    /// explicit declared cardinality keep it; the extra slots simply stay
    /// unused.
    pub fn resolved(&self, vocab: &Vocabulary) -> Result<FieldSchema> {
        let mut out = self.clone();
        for (n, f) in out.fields.iter_mut().enumerate() {
            if f.cardinality.is_none() {
                let v = vocab.fields[n].as_ref().ok_or_else(|| Error::Schema {
                    line: 0,
                    msg: format!("field `{}` has no vocabulary", f.name),
                })?;
                f.cardinality = Some(v.cardinality());
            }
        }
        Ok(out)
    }
}
