use super::vocab::{content_ids, Vocab, PAD_ID};
use crate::error::{Error, Result};
use crate::features::FrameStack;

/// One clip with its gloss and text annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub index: u32,
    pub frames: FrameStack,
    /// `[<sos>, ids.., <eos>, <pad>..]`, padded to the dataset max length.
    pub gloss_ids: Vec<usize>,
    pub text_ids: Vec<usize>,
    /// Gloss id per frame, or the blank id (`gloss vocab size`) for
    /// transition frames. Empty for external data without alignments.
    pub alignment: Vec<usize>,
}

impl SampleRecord {
    pub fn gloss(&self) -> &[usize] {
        content_ids(&self.gloss_ids)
    }

    pub fn text(&self) -> &[usize] {
        content_ids(&self.text_ids)
    }

    pub fn gloss_len(&self) -> usize {
        self.gloss().len()
    }

    pub fn text_len(&self) -> usize {
        self.text().len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub gloss_vocab: Vocab,
    pub text_vocab: Vocab,
    pub max_video_len: usize,
    pub max_gloss_len: usize,
    pub max_text_len: usize,
    pub fps: f32,
    /// Single line describing where the data came from.
    pub provenance: String,
}

fn check_padded(ids: &[usize], max_len: usize, vocab: usize, what: &str, i: u32) -> Result<()> {
    let bad = |msg: String| Err(Error::invalid("dataset", format!("record {i} {what}: {msg}")));
    if ids.len() != max_len {
        return bad(format!("length {} != {max_len}", ids.len()));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
        return bad(format!("id {id} outside vocabulary of {vocab}"));
    }
    let used = content_ids(ids).len() + 2;
    if used > ids.len() || ids[used..].iter().any(|&id| id != PAD_ID) {
        return bad("padding before <eos>".into());
    }
    Ok(())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Blank class id used in alignments.
    pub fn gloss_blank(&self) -> usize {
        self.gloss_vocab.len()
    }

    /// `(C, H, W)` shared by all clips.
    pub fn frame_dims(&self) -> Option<(usize, usize, usize)> {
        self.records.first().map(|r| r.frames.frame_dims())
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.frame_dims();
        for r in &self.records {
            check_padded(&r.gloss_ids, self.max_gloss_len, self.gloss_vocab.len(), "gloss", r.index)?;
            check_padded(&r.text_ids, self.max_text_len, self.text_vocab.len(), "text", r.index)?;
            let m = r.frames.len();
            if m == 0 || m > self.max_video_len {
                return Err(Error::invalid(
                    "dataset",
                    format!("record {} has {m} frames (max {})", r.index, self.max_video_len),
                ));
            }
            if Some(r.frames.frame_dims()) != dims {
                return Err(Error::invalid("dataset", format!("record {} frame size differs", r.index)));
            }
            if !r.alignment.is_empty() {
                if r.alignment.len() != m {
                    return Err(Error::invalid(
                        "dataset",
                        format!("record {} alignment {} for {m} frames", r.index, r.alignment.len()),
                    ));
                }
                if r.alignment.iter().any(|&a| a > self.gloss_blank()) {
                    return Err(Error::invalid("dataset", format!("record {} alignment id out of range", r.index)));
                }
            }
        }
        if self.provenance.contains('\n') {
            return Err(Error::invalid("dataset", "provenance must be one line"));
        }
        Ok(())
    }

    /// Records at `indices`, in that order, sharing vocabularies and limits.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            records: Vec::new(),
            gloss_vocab: self.gloss_vocab.clone(),
            text_vocab: self.text_vocab.clone(),
            max_video_len: self.max_video_len,
            max_gloss_len: self.max_gloss_len,
            max_text_len: self.max_text_len,
            fps: self.fps,
            provenance: self.provenance.clone(),
        }
    }
}
