//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian u32 header length, a one-line
//! JSON header (format version, numeric dtype, schema, vocabulary, model
//! configuration, optimizer step), then every tensor as raw little-endian
//! scalars in a fixed order: embedding tables, linear weights, bias, pair
//! weights, projection, tower layers (weights then biases), head, followed
//! by the squared-gradient accumulators in the same order. Fixed byte-level
//! encoding on every platform makes round trips bit-exact, which the
//! determinism guarantees rely on.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{HeadParams, MlpLayer, MlpParams, ModelConfig, ModelParams};
use crate::real::Real;
use crate::schema::FieldSchema;
use crate::trainer::TrainState;
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"CTRCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    schema: FieldSchema,
    vocab: Vocabulary,
    config: ModelConfig,
    step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelParams<T>,
    pub state: TrainState<T>,
    pub vocab: Vocabulary,
}

fn write_slice<T: Real, W: Write>(out: &mut W, xs: &[T]) -> Result<()> {
    for &x in xs {
        x.write_le(out)?;
    }
    Ok(())
}

fn read_into<T: Real, R: Read>(input: &mut R, xs: &mut [T]) -> Result<()> {
    for x in xs {
        *x = T::read_le(input)?;
    }
    Ok(())
}

/// Serializes model, optimizer state, and vocabulary without taking
/// ownership; `Checkpoint::save` delegates here.
pub fn save_parts<T: Real>(
    model: &ModelParams<T>,
    state: &TrainState<T>,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        schema: model.schema.clone(),
        vocab: vocab.clone(),
        config: model.config.clone(),
        step: state.step,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode failed: {e}")))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;

    for table in &model.embeddings.tables {
        write_slice(&mut out, table)?;
    }
    for w in &model.fwbi.w {
        write_slice(&mut out, w)?;
    }
    model.fwbi.w0.write_le(&mut out)?;
    write_slice(&mut out, &model.fwbi.r)?;
    write_slice(&mut out, &model.fwbi.w_proj)?;
    for layer in &model.mlp.layers {
        write_slice(&mut out, &layer.w)?;
        write_slice(&mut out, &layer.b)?;
    }
    write_slice(&mut out, &model.head.w)?;

    for table in &state.embed {
        write_slice(&mut out, table)?;
    }
    for w in &state.w {
        write_slice(&mut out, w)?;
    }
    state.w0.write_le(&mut out)?;
    write_slice(&mut out, &state.r)?;
    write_slice(&mut out, &state.w_proj)?;
    for (lw, lb) in &state.mlp {
        write_slice(&mut out, lw)?;
        write_slice(&mut out, lb)?;
    }
    write_slice(&mut out, &state.head)?;
    out.flush()?;
    Ok(())
}

impl<T: Real> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_parts(&self.model, &self.state, &self.vocab, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let mut len_bytes = [0u8; 4];
        input.read_exact(&mut len_bytes)?;
        let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
        input.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Checkpoint(format!("header decode failed: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "dtype mismatch: file holds {}, loader expects {}",
                header.dtype,
                T::DTYPE
            )));
        }

        // Allocate exact shapes from the header, then stream scalars in.
        let schema = header.schema;
        let config = header.config;
        let dim = config.embed_dim;
        let embeddings = crate::embedding::EmbeddingTable::zeros(&schema, dim)?;
        let fwbi = crate::fwbi::FwbiParams::zeros(&schema, dim)?;
        let mut layers = Vec::with_capacity(config.mlp_widths.len());
        let mut d_in = schema.n_hierarchies() * dim;
        for &d_out in &config.mlp_widths {
            layers.push(MlpLayer {
                w: vec![T::zero(); d_out * d_in],
                b: vec![T::zero(); d_out],
                d_in,
                d_out,
            });
            d_in = d_out;
        }
        let head_len = (dim + 1) + config.mlp_widths.last().copied().unwrap_or(0);
        let mut model = ModelParams {
            schema,
            config,
            embeddings,
            fwbi,
            mlp: MlpParams { layers },
            head: HeadParams { w: vec![T::zero(); head_len] },
        };
        let mut state = TrainState::new(&model);
        state.step = header.step;

        for table in &mut model.embeddings.tables {
            read_into(&mut input, table)?;
        }
        for w in &mut model.fwbi.w {
            read_into(&mut input, w)?;
        }
        model.fwbi.w0 = T::read_le(&mut input)?;
        read_into(&mut input, &mut model.fwbi.r)?;
        read_into(&mut input, &mut model.fwbi.w_proj)?;
        for layer in &mut model.mlp.layers {
            read_into(&mut input, &mut layer.w)?;
            read_into(&mut input, &mut layer.b)?;
        }
        read_into(&mut input, &mut model.head.w)?;

        for table in &mut state.embed {
            read_into(&mut input, table)?;
        }
        for w in &mut state.w {
            read_into(&mut input, w)?;
        }
        state.w0 = T::read_le(&mut input)?;
        read_into(&mut input, &mut state.r)?;
        read_into(&mut input, &mut state.w_proj)?;
        for (lw, lb) in &mut state.mlp {
            read_into(&mut input, lw)?;
            read_into(&mut input, lb)?;
        }
        read_into(&mut input, &mut state.head)?;

        let mut probe = [0u8; 1];
        if input.read(&mut probe)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tensor payload".into()));
        }
        Ok(Checkpoint { model, state, vocab: header.vocab })
    }
}

// ============================================================
// Tests
// ============================================================
