//! Reading delimited training data and packing it for the trainer.
//!
//! Input files are header-bearing delimited text (comma by default). Every
//! schema field must match a header column by name; the label column is named
//! by the caller. Multi-hot cells pack several values into one cell separated
//! by `|`; an empty multi-hot cell means "no active values".

use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{hash_index, Encoding, Features, FieldSchema, IndexSource, Instance};
use crate::vocab::Vocabulary;

/// Separator inside a multi-hot cell. Fixed, unlike the record delimiter.
pub const MULTI_HOT_SEP: char = '|';

#[derive(Debug, Clone)]
pub struct ReadOptions {
    /// Record delimiter for the input file.
    pub delimiter: u8,
    /// Header name of the label column.
    pub label_col: String,
    /// When false (scoring unlabeled data), a missing label column is fine
    /// and labels default to 0.
    pub require_label: bool,
    /// Stop after this many data rows; None reads the whole file.
    pub max_rows: Option<usize>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            delimiter: b',',
            label_col: "label".to_owned(),
            require_label: true,
            max_rows: None,
        }
    }
}

// ============================================================
// Row encoding
// ============================================================

/// One raw record, cells aligned with `schema.fields` order.
#[derive(Debug, Clone)]
pub struct RawRow<'a> {
    pub label: Option<&'a str>,
    pub cells: Vec<&'a str>,
}

/// Map a raw record to sparse indices under a frozen vocabulary.
///
/// Unknown dictionary values map to the reserved index 0. Active indices come
/// out sorted per field; repeated values in a multi-hot cell are kept, so a
/// cell `a|a` contributes its index twice.
pub fn encode_row(
    schema: &FieldSchema,
    vocab: &Vocabulary,
    row: &RawRow,
    record_no: usize,
    require_label: bool,
) -> Result<Instance> {
    if row.cells.len() != schema.n_fields() {
        return Err(Error::Encode {
            record: record_no,
            msg: format!("expected {} field cells, got {}", schema.n_fields(), row.cells.len()),
        });
    }

    let label = match row.label {
        Some(raw) => parse_label(raw).ok_or_else(|| Error::Encode {
            record: record_no,
            msg: format!("label `{raw}` is not 0 or 1"),
        })?,
        None if require_label => {
            return Err(Error::Encode { record: record_no, msg: "missing label".to_owned() })
        }
        None => 0,
    };

    let mut actives = Vec::with_capacity(schema.n_fields());
    for (n, field) in schema.fields.iter().enumerate() {
        let cell = row.cells[n];
        let mut idxs: Vec<u32> = Vec::new();
        let mut push = |value: &str| {
            let idx = match field.source {
                IndexSource::Dict => vocab.field(n).map_or(0, |v| v.lookup(value)),
                IndexSource::Hash { buckets } => hash_index(value, buckets),
            };
            idxs.push(idx);
        };
        match field.encoding {
            Encoding::OneHot => push(cell),
            Encoding::MultiHot => {
                for part in cell.split(MULTI_HOT_SEP) {
                    if !part.is_empty() {
                        push(part);
                    }
                }
            }
        }
        idxs.sort_unstable();
        actives.push(idxs);
    }

    Ok(Instance { label, actives })
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" | "0.0" => Some(0),
        "1" | "1.0" => Some(1),
        _ => None,
    }
}

// ============================================================
// File access
// ============================================================

/// Column positions of the schema fields (and label) inside a delimited file.
struct ColumnMap {
    field_cols: Vec<usize>,
    label_col: Option<usize>,
}

fn map_columns(
    headers: &csv::StringRecord,
    schema: &FieldSchema,
    opts: &ReadOptions,
) -> Result<ColumnMap> {
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut field_cols = Vec::with_capacity(schema.n_fields());
    for f in &schema.fields {
        match position(&f.name) {
            Some(c) => field_cols.push(c),
            None => {
                return Err(Error::Encode {
                    record: 0,
                    msg: format!("data file has no column `{}` required by the schema", f.name),
                })
            }
        }
    }
    let label_col = position(&opts.label_col);
    if label_col.is_none() && opts.require_label {
        return Err(Error::Encode {
            record: 0,
            msg: format!("data file has no label column `{}`", opts.label_col),
        });
    }
    Ok(ColumnMap { field_cols, label_col })
}

fn open_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)?)
}

/// Single pass over a file, calling `visit` with each raw row.
fn for_each_row(
    path: &Path,
    schema: &FieldSchema,
    opts: &ReadOptions,
    mut visit: impl FnMut(usize, &RawRow) -> Result<()>,
) -> Result<()> {
    let mut rdr = open_reader(path, opts.delimiter)?;
    let cols = map_columns(rdr.headers()?, schema, opts)?;
    let mut record = csv::StringRecord::new();
    let mut record_no = 0usize;
    while rdr.read_record(&mut record)? {
        if opts.max_rows.is_some_and(|cap| record_no >= cap) {
            break;
        }
        record_no += 1;
        let get = |c: usize| {
            record.get(c).ok_or_else(|| Error::Encode {
                record: record_no,
                msg: format!("record is too short (missing column {c})"),
            })
        };
        let mut cells = Vec::with_capacity(cols.field_cols.len());
        for &c in &cols.field_cols {
            cells.push(get(c)?);
        }
        let label = match cols.label_col {
            Some(c) => Some(get(c)?),
            None => None,
        };
        visit(record_no, &RawRow { label, cells })?;
    }
    Ok(())
}

/// First pass: build dictionaries for every `dict` field.
pub fn build_vocabulary(
    path: &Path,
    schema: &FieldSchema,
    opts: &ReadOptions,
    max_cardinality: usize,
) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::new(schema);
    for_each_row(path, schema, opts, |_, row| {
        for (n, field) in schema.fields.iter().enumerate() {
            match field.encoding {
                Encoding::OneHot => vocab.observe(schema, n, row.cells[n], max_cardinality)?,
                Encoding::MultiHot => {
                    for part in row.cells[n].split(MULTI_HOT_SEP) {
                        if !part.is_empty() {
                            vocab.observe(schema, n, part, max_cardinality)?;
                        }
                    }
                }
            }
        }
        Ok(())
    })?;
    Ok(vocab)
}

/// Second pass: encode the whole file into a packed [`Dataset`].
pub fn read_dataset(
    path: &Path,
    schema: &FieldSchema,
    vocab: &Vocabulary,
    opts: &ReadOptions,
) -> Result<Dataset> {
    let mut data = Dataset::new(schema.n_fields());
    for_each_row(path, schema, opts, |record_no, row| {
        let inst = encode_row(schema, vocab, row, record_no, opts.require_label)?;
        data.push(&inst);
        Ok(())
    })?;
    Ok(data)
}

// ============================================================
// Packed dataset
// ============================================================

/// All encoded rows of a file in three flat arrays. A 40M-row log with ~25
/// active indices per row stays around a few hundred bytes per example, which
/// an `Instance`-per-row representation would not.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    n_fields: usize,
    labels: Vec<u8>,
    /// Offsets into `idx`; row i, field f spans
    /// `idx[cuts[i * n_fields + f] .. cuts[i * n_fields + f + 1]]`.
    cuts: Vec<u32>,
    idx: Vec<u32>,
}

impl Dataset {
    pub fn new(n_fields: usize) -> Self {
        Dataset { n_fields, labels: Vec::new(), cuts: vec![0], idx: Vec::new() }
    }

    pub fn push(&mut self, inst: &Instance) {
        assert_eq!(inst.actives.len(), self.n_fields, "field count mismatch");
        self.labels.push(inst.label);
        for f in &inst.actives {
            self.idx.extend_from_slice(f);
            self.cuts.push(self.idx.len() as u32);
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> InstanceView<'_> {
        let base = i * self.n_fields;
        InstanceView {
            label: self.labels[i],
            cuts: &self.cuts[base..base + self.n_fields + 1],
            idx: &self.idx,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = InstanceView<'_>> {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// Cheap borrowed view of one packed row.
#[derive(Debug, Clone, Copy)]
pub struct InstanceView<'a> {
    pub label: u8,
    cuts: &'a [u32],
    idx: &'a [u32],
}

impl Features for InstanceView<'_> {
    fn n_fields(&self) -> usize {
        self.cuts.len() - 1
    }

    fn actives(&self, field: usize) -> &[u32] {
        &self.idx[self.cuts[field] as usize..self.cuts[field + 1] as usize]
    }
}
