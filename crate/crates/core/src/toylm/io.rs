//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic "TLM1" | u32 version | u8 kind (0 encoder, 1 decoder)
//!   vocabulary: u32 count, then per token u32 byte length + UTF-8 bytes
//!   architecture: u32 d_model, n_layers, n_heads, d_ff, max_len
//!   parameters: u32 group count, then per group
//!     u32 name length + bytes | u32 rows | u32 cols | rows*cols f64
//!   article head: u8 present; if 1: u32 n_pool | d_model*6 f64 | 6 f64

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::head::ArticleHead;
use super::params::{Mat, ModelParams};
use super::{Arch, ModelCore, ModelError, ModelKind, TinyClm, TinyMlm, Vocabulary};

const MAGIC: &[u8; 4] = b"TLM1";
const VERSION: u32 = 1;

#[derive(Debug)]
pub enum LoadedModel {
    Mlm(TinyMlm),
    Clm(TinyClm),
}

impl LoadedModel {
    pub fn core(&self) -> &ModelCore {
        match self {
            LoadedModel::Mlm(m) => &m.core,
            LoadedModel::Clm(m) => &m.core,
        }
    }

    pub fn into_mlm(self) -> Result<TinyMlm, ModelError> {
        match self {
            LoadedModel::Mlm(m) => Ok(m),
            LoadedModel::Clm(_) => Err(ModelError::BadCheckpoint(
                "expected an encoder checkpoint".to_string(),
            )),
        }
    }
}

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    w_u32(w, b.len() as u32)?;
    w.write_all(b)
}

fn w_f64s(w: &mut impl Write, data: &[f64]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn r_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u8(r: &mut impl Read) -> Result<u8, ModelError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn r_string(r: &mut impl Read) -> Result<String, ModelError> {
    let len = r_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(ModelError::BadCheckpoint(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| ModelError::BadCheckpoint(e.to_string()))
}

fn r_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, ModelError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_core(w: &mut impl Write, core: &ModelCore, head: Option<&ArticleHead>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w_u32(w, VERSION)?;
    w.write_all(&[match core.kind {
        ModelKind::Encoder => 0u8,
        ModelKind::Decoder => 1u8,
    }])?;
    w_u32(w, core.vocab.len() as u32)?;
    for tok in core.vocab.tokens() {
        w_bytes(w, tok.as_bytes())?;
    }
    for v in [
        core.arch.d_model,
        core.arch.n_layers,
        core.arch.n_heads,
        core.arch.d_ff,
        core.arch.max_len,
    ] {
        w_u32(w, v as u32)?;
    }
    let entries = core.params.entries();
    w_u32(w, entries.len() as u32)?;
    for (name, data, (rows, cols)) in entries {
        w_bytes(w, name.as_bytes())?;
        w_u32(w, rows as u32)?;
        w_u32(w, cols as u32)?;
        w_f64s(w, data)?;
    }
    match head {
        None => w.write_all(&[0u8])?,
        Some(h) => {
            w.write_all(&[1u8])?;
            w_u32(w, h.n_pool as u32)?;
            w_f64s(w, &h.w.data)?;
            w_f64s(w, &h.b)?;
        }
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, model: &LoadedModel) -> Result<(), ModelError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    match model {
        LoadedModel::Mlm(m) => write_core(&mut w, &m.core, None)?,
        LoadedModel::Clm(m) => write_core(&mut w, &m.core, m.head.as_ref())?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<LoadedModel, ModelError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::BadCheckpoint(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let kind = match r_u8(&mut r)? {
        0 => ModelKind::Encoder,
        1 => ModelKind::Decoder,
        other => {
            return Err(ModelError::BadCheckpoint(format!("bad model kind {other}")));
        }
    };
    let n_tokens = r_u32(&mut r)? as usize;
    let mut tokens = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        tokens.push(r_string(&mut r)?);
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(ModelError::BadCheckpoint)?;
    let arch = Arch {
        d_model: r_u32(&mut r)? as usize,
        n_layers: r_u32(&mut r)? as usize,
        n_heads: r_u32(&mut r)? as usize,
        d_ff: r_u32(&mut r)? as usize,
        max_len: r_u32(&mut r)? as usize,
    };
    let mut params = ModelParams::zeros(arch, vocab.len());
    let n_groups = r_u32(&mut r)? as usize;
    let expected = params.entries().len();
    if n_groups != expected {
        return Err(ModelError::BadCheckpoint(format!(
            "expected {expected} parameter groups, found {n_groups}"
        )));
    }
    for _ in 0..n_groups {
        let name = r_string(&mut r)?;
        let rows = r_u32(&mut r)? as usize;
        let cols = r_u32(&mut r)? as usize;
        let data = r_f64s(&mut r, rows * cols)?;
        let shape = params
            .param_shape(&name)
            .ok_or_else(|| ModelError::BadCheckpoint(format!("unknown group {name:?}")))?;
        if shape != (rows, cols) {
            return Err(ModelError::BadCheckpoint(format!(
                "group {name:?} has shape {rows}x{cols}, expected {}x{}",
                shape.0, shape.1
            )));
        }
        params.param_mut(&name).unwrap().copy_from_slice(&data);
    }
    let head = match r_u8(&mut r)? {
        0 => None,
        1 => {
            let n_pool = r_u32(&mut r)? as usize;
            let w = Mat {
                rows: arch.d_model,
                cols: 6,
                data: r_f64s(&mut r, arch.d_model * 6)?,
            };
            let b_vec = r_f64s(&mut r, 6)?;
            let mut b = [0.0; 6];
            b.copy_from_slice(&b_vec);
            Some(ArticleHead { n_pool, w, b })
        }
        other => {
            return Err(ModelError::BadCheckpoint(format!("bad head marker {other}")));
        }
    };
    let core = ModelCore {
        arch,
        vocab,
        params,
        kind,
    };
    Ok(match kind {
        ModelKind::Encoder => LoadedModel::Mlm(TinyMlm { core }),
        ModelKind::Decoder => LoadedModel::Clm(TinyClm { core, head }),
    })
}
