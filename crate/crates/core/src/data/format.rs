//! ADSL dataset container.
//!
//! `"ADSL"`, version byte, u32 LE header length, UTF-8 `key=value` header
//! lines, then one block per record: u32 index, ADT1 frame tensor, and the
//! gloss ids, text ids and alignment as u32 arrays with a u32 length prefix.
//! All integers little-endian.

use std::fs;
use std::path::Path;

use super::dataset::{Dataset, SampleRecord};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::features::FrameStack;
use crate::tensor::{ByteCursor, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"ADSL";
pub const DATASET_VERSION: u8 = 0x01;

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_ids(out: &mut Vec<u8>, ids: &[usize]) {
    push_u32(out, ids.len());
    for &id in ids {
        push_u32(out, id);
    }
}

fn header(ds: &Dataset) -> String {
    let mut h = String::new();
    h.push_str(&format!("records={}\n", ds.records.len()));
    h.push_str(&format!("gloss_vocab={}\n", ds.gloss_vocab.entries().join(" ")));
    h.push_str(&format!("text_vocab={}\n", ds.text_vocab.entries().join(" ")));
    h.push_str(&format!("max_video_len={}\n", ds.max_video_len));
    h.push_str(&format!("max_gloss_len={}\n", ds.max_gloss_len));
    h.push_str(&format!("max_text_len={}\n", ds.max_text_len));
    h.push_str(&format!("fps={}\n", ds.fps));
    h.push_str(&format!("provenance={}\n", ds.provenance));
    h
}

pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = DATASET_MAGIC.to_vec();
    out.push(DATASET_VERSION);
    let h = header(ds);
    push_u32(&mut out, h.len());
    out.extend_from_slice(h.as_bytes());
    for r in &ds.records {
        push_u32(&mut out, r.index as usize);
        out.extend_from_slice(&r.frames.frames().to_adt1_bytes());
        push_ids(&mut out, &r.gloss_ids);
        push_ids(&mut out, &r.text_ids);
        push_ids(&mut out, &r.alignment);
    }
    out
}

struct Header {
    records: usize,
    gloss_vocab: Vocab,
    text_vocab: Vocab,
    max_video_len: usize,
    max_gloss_len: usize,
    max_text_len: usize,
    fps: f32,
    provenance: String,
}

fn parse_header(text: &str, base: usize) -> Result<Header> {
    let mut fields = std::collections::HashMap::new();
    let mut at = base;
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            offset: at,
            msg: format!("header line {line:?} is not key=value"),
        })?;
        fields.insert(k, (v, at));
        at += line.len() + 1;
    }
    let get = |k: &str| {
        fields.get(k).copied().ok_or_else(|| Error::Parse {
            offset: base,
            msg: format!("header lacks {k}"),
        })
    };
    let num = |k: &str| -> Result<usize> {
        let (v, off) = get(k)?;
        v.parse().map_err(|_| Error::Parse {
            offset: off,
            msg: format!("{k}: bad number {v:?}"),
        })
    };
    let vocab = |k: &str| -> Result<Vocab> {
        let (v, off) = get(k)?;
        let tokens: Vec<&str> = v.split_whitespace().collect();
        Vocab::from_tokens(&tokens).map_err(|e| Error::Parse {
            offset: off,
            msg: e.to_string(),
        })
    };
    let (fps, fps_at) = get("fps")?;
    Ok(Header {
        records: num("records")?,
        gloss_vocab: vocab("gloss_vocab")?,
        text_vocab: vocab("text_vocab")?,
        max_video_len: num("max_video_len")?,
        max_gloss_len: num("max_gloss_len")?,
        max_text_len: num("max_text_len")?,
        fps: fps.parse().map_err(|_| Error::Parse {
            offset: fps_at,
            msg: format!("fps: bad number {fps:?}"),
        })?,
        provenance: get("provenance")?.0.to_string(),
    })
}

fn ids(cur: &mut ByteCursor, what: &str) -> Result<Vec<usize>> {
    Ok(cur.u32_array(what)?.into_iter().map(|v| v as usize).collect())
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = ByteCursor::new(bytes, 0);
    if cur.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: "not an ADSL dataset".into(),
        });
    }
    let version = cur.u8("version")?;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let hlen = cur.u32("header length")? as usize;
    let hstart = cur.offset();
    let raw = cur.take(hlen, "header")?;
    let text = std::str::from_utf8(raw).map_err(|e| Error::Parse {
        offset: hstart + e.valid_up_to(),
        msg: "header is not UTF-8".into(),
    })?;
    let h = parse_header(text, hstart)?;
    let mut records = Vec::with_capacity(h.records.min(1 << 16));
    for _ in 0..h.records {
        let start = cur.offset();
        let index = cur.u32("record index")?;
        let frames: Tensor<f32> = cur.tensor()?;
        let gloss_ids = ids(&mut cur, "gloss ids")?;
        let text_ids = ids(&mut cur, "text ids")?;
        let alignment = ids(&mut cur, "alignment")?;
        let frames = FrameStack::new(frames, h.fps).map_err(|e| Error::Parse {
            offset: start,
            msg: e.to_string(),
        })?;
        records.push(SampleRecord {
            index,
            frames,
            gloss_ids,
            text_ids,
            alignment,
        });
    }
    if !cur.is_done() {
        return Err(Error::Parse {
            offset: cur.offset(),
            msg: "trailing bytes after last record".into(),
        });
    }
    let ds = Dataset {
        records,
        gloss_vocab: h.gloss_vocab,
        text_vocab: h.text_vocab,
        max_video_len: h.max_video_len,
        max_gloss_len: h.max_gloss_len,
        max_text_len: h.max_text_len,
        fps: h.fps,
        provenance: h.provenance,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_bytes(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&fs::read(path)?)
}
