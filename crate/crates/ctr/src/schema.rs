//! Field schema: which categorical fields exist, how each is encoded, and how
//! feature fields group into the coarser hierarchical fields the interaction
//! layer operates on.
//!
//! Schema documents are line oriented. The first meaningful line declares the
//! hierarchical fields, then one line per feature field:
//!
//! ```text
//! # anything after '#' is a comment
//! @hierarchy user item context
//! gender,   auto,   one-hot,   user,  dict
//! tags,     500,    multi-hot, item,  dict
//! device_ip, auto,  one-hot,   user,  hash:100000
//! ```
//!
//! Columns are: name, cardinality (`auto` defers to the vocabulary build),
//! encoding (`one-hot` | `multi-hot`), hierarchical field, and index source
//! (`dict` | `hash:<buckets>`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ============================================================
// Types
// ============================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    /// Exactly one active value per record.
    OneHot,
    /// Zero or more active values per record, `|`-separated in the raw cell.
    MultiHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexSource {
    /// First-seen dictionary built from training data; index 0 is reserved
    /// for unknown values.
    Dict,
    /// Stable 64-bit hash of the value string reduced modulo `buckets`.
    Hash { buckets: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    /// Number of value slots K_n. `None` until the vocabulary build resolves
    /// an `auto` dictionary field.
    pub cardinality: Option<usize>,
    pub encoding: Encoding,
    /// Index into [`FieldSchema::hierarchies`].
    pub hierarchy: usize,
    pub source: IndexSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    /// Hierarchical field names, in declaration order. Indices are contiguous
    /// from zero; M = `hierarchies.len()`.
    pub hierarchies: Vec<String>,
    pub fields: Vec<FieldDef>,
}

impl FieldSchema {
    /// Number of feature fields.
    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Number of hierarchical fields (M).
    pub fn n_hierarchies(&self) -> usize {
        self.hierarchies.len()
    }

    /// Hierarchical index of feature field `n`.
    pub fn hierarchy_of(&self, n: usize) -> usize {
        self.fields[n].hierarchy
    }

    /// Resolved cardinality of field `n`. Errors if the field is still `auto`.
    pub fn cardinality(&self, n: usize) -> Result<usize> {
        self.fields[n].cardinality.ok_or_else(|| Error::Schema {
            line: 0,
            msg: format!(
                "field `{}` has unresolved cardinality; build a vocabulary first",
                self.fields[n].name
            ),
        })
    }

    /// Total number of feature value slots across all fields (the N of the
    /// parameter-count accounting). Errors if any field is unresolved.
    pub fn total_features(&self) -> Result<usize> {
        let mut total = 0usize;
        for n in 0..self.n_fields() {
            total += self.cardinality(n)?;
        }
        Ok(total)
    }

    pub fn is_resolved(&self) -> bool {
        self.fields.iter().all(|f| f.cardinality.is_some())
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Parse a schema document. See the module docs for the format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut hierarchies: Option<Vec<String>> = None;
        let mut fields: Vec<FieldDef> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }

            if let Some(rest) = line.strip_prefix("@hierarchy") {
                if hierarchies.is_some() {
                    return err(line_no, "duplicate @hierarchy declaration");
                }
                let names: Vec<String> = rest.split_whitespace().map(str::to_owned).collect();
                if names.is_empty() {
                    return err(line_no, "@hierarchy needs at least one name");
                }
                for (i, a) in names.iter().enumerate() {
                    if names[..i].contains(a) {
                        return err(line_no, &format!("duplicate hierarchical field `{a}`"));
                    }
                }
                hierarchies = Some(names);
                continue;
            }

            let hier = match &hierarchies {
                Some(h) => h,
                None => return err(
                    line_no,
                    "field declared before the @hierarchy line; declare hierarchical fields first",
                ),
            };

            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 5 {
                return err(
                    line_no,
                    &format!(
                        "expected 5 comma-separated columns (name, cardinality, encoding, hierarchy, source), got {}",
                        parts.len()
                    ),
                );
            }

            let name = parts[0];
            if name.is_empty() {
                return err(line_no, "empty field name");
            }
            if fields.iter().any(|f| f.name == name) {
                return err(line_no, &format!("duplicate field name `{name}`"));
            }

            let declared: Option<usize> = if parts[1] == "auto" {
                None
            } else {
                match parts[1].parse::<usize>() {
                    Ok(k) if k >= 1 => Some(k),
                    _ => return err(line_no, &format!("bad cardinality `{}`", parts[1])),
                }
            };

            let encoding = match parts[2] {
                "one-hot" => Encoding::OneHot,
                "multi-hot" => Encoding::MultiHot,
                other => return err(line_no, &format!("unknown encoding `{other}`")),
            };

            let hierarchy = match hier.iter().position(|h| h == parts[3]) {
                Some(m) => m,
                None => {
                    return err(
                        line_no,
                        &format!("hierarchical field `{}` not declared in @hierarchy", parts[3]),
                    )
                }
            };

            let (source, cardinality) = match parts[4] {
                "dict" => (IndexSource::Dict, declared),
                spec if spec.starts_with("hash:") => {
                    let buckets = match spec["hash:".len()..].parse::<usize>() {
                        Ok(b) if b >= 1 => b,
                        _ => return err(line_no, &format!("bad bucket count in `{spec}`")),
                    };
                    if let Some(k) = declared {
                        if k != buckets {
                            return err(
                                line_no,
                                &format!(
                                    "cardinality {k} disagrees with hash bucket count {buckets}"
                                ),
                            );
                        }
                    }
                    (IndexSource::Hash { buckets }, Some(buckets))
                }
                other => return err(line_no, &format!("unknown index source `{other}`")),
            };

            fields.push(FieldDef {
                name: name.to_owned(),
                cardinality,
                encoding,
                hierarchy,
                source,
            });
        }

        let hierarchies = match hierarchies {
            Some(h) => h,
            None => return err(0, "missing @hierarchy declaration"),
        };
        if fields.is_empty() {
            return err(0, "schema declares no feature fields");
        }
        for (m, h) in hierarchies.iter().enumerate() {
            if !fields.iter().any(|f| f.hierarchy == m) {
                return err(0, &format!("hierarchical field `{h}` has no feature fields"));
            }
        }

        Ok(FieldSchema { hierarchies, fields })
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

fn err<T>(line: usize, msg: &str) -> Result<T> {
    Err(Error::Schema { line, msg: msg.to_owned() })
}

// ============================================================
// Instances
// ============================================================

/// One encoded example: a binary label plus, per feature field, the sorted
/// active value indices. One-hot fields carry exactly one index; multi-hot
/// fields carry zero or more and may repeat an index when the raw cell does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub label: u8,
    pub actives: Vec<Vec<u32>>,
}

/// Read access to the active indices of one example. Implemented both by the
/// owned [`Instance`] and by the packed views a [`crate::data::Dataset`] hands
/// out, so the model kernels never care how rows are stored.
pub trait Features {
    fn n_fields(&self) -> usize;
    fn actives(&self, field: usize) -> &[u32];
}

impl Features for Instance {
    fn n_fields(&self) -> usize {
        self.actives.len()
    }

    fn actives(&self, field: usize) -> &[u32] {
        &self.actives[field]
    }
}

impl<F: Features + ?Sized> Features for &F {
    fn n_fields(&self) -> usize {
        (**self).n_fields()
    }

    fn actives(&self, field: usize) -> &[u32] {
        (**self).actives(field)
    }
}

// ============================================================
// Stable hashing
// ============================================================

/// 64-bit FNV-1a. Spelled out here rather than borrowed from the standard
/// library because hashed feature indices must stay identical across builds,
/// platforms, and toolchain upgrades once a model has shipped.
pub fn stable_hash64(value: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in value.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Bucketed index for hash-sourced fields.
pub fn hash_index(value: &str, buckets: usize) -> u32 {
    (stable_hash64(value) % buckets as u64) as u32
}

// ============================================================
// Tests
// ============================================================
