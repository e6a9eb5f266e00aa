//! Checkpoint layout: `ADATCKPT <config line>\n`, u32 LE parameter count,
//! then per parameter a u32 LE name length, UTF-8 name, and an ADT1 tensor
//! (always 32-bit floats).

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::{ByteCursor, Real, Tensor};

pub const CHECKPOINT_MAGIC: &str = "ADATCKPT";

pub fn checkpoint_bytes<T: Real>(model: &Model<T>) -> Vec<u8> {
    let mut out = format!("{CHECKPOINT_MAGIC} {}\n", model.config().to_line()).into_bytes();
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&t.cast::<f32>().to_adt1_bytes());
    }
    out
}

pub fn parse_checkpoint<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            msg: "missing checkpoint header line".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        msg: "header is not UTF-8".into(),
    })?;
    let config_line = header
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|s| s.strip_prefix(' '))
        .ok_or_else(|| Error::Parse {
            offset: 0,
            msg: format!("expected {CHECKPOINT_MAGIC} header"),
        })?;
    let config = ModelConfig::from_line(config_line)?;
    let mut cur = ByteCursor::new(&bytes[newline + 1..], newline + 1);
    let count = cur.u32("parameter count")? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32("name length")? as usize;
        let at = cur.offset();
        let raw = cur.take(len, "parameter name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Parse {
                offset: at,
                msg: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let t: Tensor<T> = cur.tensor()?;
        named.push((name, t));
    }
    if !cur.is_done() {
        return Err(Error::Parse {
            offset: cur.offset(),
            msg: "trailing bytes after last parameter".into(),
        });
    }
    let mut model = Model::build(config, 0)?;
    model.load_params(named)?;
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    parse_checkpoint(&fs::read(path)?)
}
