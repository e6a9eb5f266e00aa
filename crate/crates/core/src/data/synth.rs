//! Seeded synthetic sign-language corpus with exact frame alignments.
//!
//! Each gloss owns a blocky template image. A clip shows the templates of
//! its gloss sequence, each held for a random number of frames, with
//! uniform pixel noise. Text follows from the glosses by a fixed grammar:
//! every gloss maps to a content word, adjacent content words swap in
//! pairs, and after every `function_every` content words a function word
//! chosen by the preceding word is inserted.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, SampleRecord};
use super::vocab::{build_vocab, encode_sequence, Vocab};
use crate::error::{Error, Result};
use crate::features::FrameStack;
use crate::tensor::Tensor;

/// Upper bound on glosses per clip.
pub const MAX_GLOSSES: usize = 10;
const TEMPLATE_BLOCK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    /// Distinct gloss tokens.
    pub gloss_vocab_size: usize,
    /// Distinct text tokens: one content word per gloss plus function words.
    pub text_vocab_size: usize,
    pub gloss_len: (usize, usize),
    pub frames_per_gloss: (usize, usize),
    /// Blank-labelled frames between consecutive glosses.
    pub transition_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Half-width of the uniform pixel noise.
    pub noise: f32,
    pub function_every: usize,
    pub fps: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 300,
            gloss_vocab_size: 30,
            text_vocab_size: 60,
            gloss_len: (3, 8),
            frames_per_gloss: (3, 6),
            transition_frames: 0,
            channels: 1,
            height: 16,
            width: 16,
            noise: 0.1,
            function_every: 3,
            fps: 30.0,
        }
    }
}

impl SynthSpec {
    pub fn function_words(&self) -> usize {
        self.text_vocab_size.saturating_sub(self.gloss_vocab_size)
    }

    /// Longest clip these settings can produce.
    pub fn max_frames(&self) -> usize {
        let g = self.gloss_len.1;
        g * self.frames_per_gloss.1 + g.saturating_sub(1) * self.transition_frames
    }

    /// Longest text the grammar can produce.
    pub fn max_text_tokens(&self) -> usize {
        let g = self.gloss_len.1;
        g + g.saturating_sub(1) / self.function_every.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("synth_spec", msg));
        if self.n_samples == 0 || self.gloss_vocab_size < 2 {
            return bad("need at least one sample and two glosses".into());
        }
        if self.function_words() == 0 {
            return bad(format!(
                "text vocabulary {} leaves no function words after {} content words",
                self.text_vocab_size, self.gloss_vocab_size
            ));
        }
        let (lo, hi) = self.gloss_len;
        if lo == 0 || lo > hi || hi > MAX_GLOSSES {
            return bad(format!("gloss length range {lo}..={hi} must lie in 1..={MAX_GLOSSES}"));
        }
        let (flo, fhi) = self.frames_per_gloss;
        if flo == 0 || flo > fhi {
            return bad(format!("frames per gloss range {flo}..={fhi} is empty"));
        }
        if self.channels == 0 || self.height < 4 || self.width < 4 {
            return bad(format!("frame {}x{}x{} too small", self.channels, self.height, self.width));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        if self.function_every == 0 {
            return bad("function_every must be at least 1".into());
        }
        Ok(())
    }

    /// One-line description used as dataset provenance.
    pub fn describe(&self, seed: u64) -> String {
        format!(
            "synthetic n_samples={} gloss_vocab_size={} text_vocab_size={} gloss_len={}..{} frames_per_gloss={}..{} transition_frames={} frame={}x{}x{} noise={} function_every={} seed={seed}",
            self.n_samples,
            self.gloss_vocab_size,
            self.text_vocab_size,
            self.gloss_len.0,
            self.gloss_len.1,
            self.frames_per_gloss.0,
            self.frames_per_gloss.1,
            self.transition_frames,
            self.channels,
            self.height,
            self.width,
            self.noise,
            self.function_every,
        )
    }
}

fn gloss_name(i: usize) -> String {
    format!("G{i:03}")
}

/// Deterministic gloss-to-text mapping.
#[derive(Clone, Debug)]
pub struct Grammar {
    content: Vec<String>,
    function: Vec<String>,
    every: usize,
}

impl Grammar {
    pub fn new(spec: &SynthSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut perm: Vec<usize> = (0..spec.gloss_vocab_size).collect();
        perm.shuffle(&mut rng);
        Self {
            content: perm.iter().map(|&p| format!("w{p:03}")).collect(),
            function: (0..spec.function_words()).map(|i| format!("f{i:03}")).collect(),
            every: spec.function_every,
        }
    }

    /// Text tokens for a gloss index sequence.
    pub fn translate(&self, glosses: &[usize]) -> Vec<String> {
        let mut words: Vec<usize> = glosses.to_vec();
        for pair in words.chunks_mut(2) {
            pair.reverse();
        }
        let mut out = Vec::with_capacity(words.len() + words.len() / self.every);
        for (i, &w) in words.iter().enumerate() {
            out.push(self.content[w].clone());
            if (i + 1) % self.every == 0 && i + 1 < words.len() {
                out.push(self.function[w % self.function.len()].clone());
            }
        }
        out
    }
}

fn templates(spec: &SynthSpec, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let (bh, bw) = (h.div_ceil(TEMPLATE_BLOCK), w.div_ceil(TEMPLATE_BLOCK));
    (0..spec.gloss_vocab_size)
        .map(|_| {
            let blocks: Vec<f32> = (0..c * bh * bw).map(|_| rng.random_range(0.0..=1.0)).collect();
            let mut img = vec![0.0f32; c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        img[(ch * h + y) * w + x] =
                            blocks[(ch * bh + y / TEMPLATE_BLOCK) * bw + x / TEMPLATE_BLOCK];
                    }
                }
            }
            img
        })
        .collect()
}

struct RawSample {
    glosses: Vec<usize>,
    pixels: Vec<f32>,
    /// Gloss index per frame, `None` for transitions.
    alignment: Vec<Option<usize>>,
}

fn draw_sample(spec: &SynthSpec, seed: u64, index: usize, templates: &[Vec<f32>]) -> RawSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
    let n = rng.random_range(spec.gloss_len.0..=spec.gloss_len.1);
    let mut glosses: Vec<usize> = Vec::with_capacity(n);
    while glosses.len() < n {
        let gl = rng.random_range(0..spec.gloss_vocab_size);
        if glosses.last() != Some(&gl) {
            glosses.push(gl);
        }
    }
    let per = spec.channels * spec.height * spec.width;
    let mut pixels = Vec::new();
    let mut alignment = Vec::new();
    for (k, &gl) in glosses.iter().enumerate() {
        if k > 0 {
            for _ in 0..spec.transition_frames {
                pixels.extend((0..per).map(|_| rng.random_range(0.0..=1.0f32)));
                alignment.push(None);
            }
        }
        let hold = rng.random_range(spec.frames_per_gloss.0..=spec.frames_per_gloss.1);
        for _ in 0..hold {
            for &v in &templates[gl] {
                let jitter = if spec.noise > 0.0 {
                    rng.random_range(-spec.noise..=spec.noise)
                } else {
                    0.0
                };
                pixels.push((v + jitter).clamp(0.0, 1.0));
            }
            alignment.push(Some(gl));
        }
    }
    RawSample {
        glosses,
        pixels,
        alignment,
    }
}

/// Generates a dataset; identical `(spec, seed)` give bit-identical output.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let grammar = Grammar::new(spec, seed);
    let templates = templates(spec, seed);
    let raw: Vec<RawSample> = (0..spec.n_samples)
        .map(|i| draw_sample(spec, seed, i, &templates))
        .collect();
    let gloss_tokens: Vec<Vec<String>> = raw
        .iter()
        .map(|r| r.glosses.iter().map(|&g| gloss_name(g)).collect())
        .collect();
    let text_tokens: Vec<Vec<String>> = raw.iter().map(|r| grammar.translate(&r.glosses)).collect();
    let gloss_vocab: Vocab = build_vocab(&gloss_tokens)?;
    let text_vocab: Vocab = build_vocab(&text_tokens)?;
    let max_gloss_len = spec.gloss_len.1 + 2;
    let max_text_len = spec.max_text_tokens() + 2;
    let blank = gloss_vocab.len();
    let (c, h, w) = (spec.channels, spec.height, spec.width);

    let mut records = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        let m = r.alignment.len();
        let frames = FrameStack::new(Tensor::new(vec![m, c, h, w], r.pixels)?, spec.fps)?;
        let alignment = r
            .alignment
            .iter()
            .map(|a| a.map_or(blank, |g| gloss_vocab.id(&gloss_name(g))))
            .collect();
        records.push(SampleRecord {
            index: i as u32,
            frames,
            gloss_ids: encode_sequence(&gloss_vocab, &gloss_tokens[i], max_gloss_len)?.0,
            text_ids: encode_sequence(&text_vocab, &text_tokens[i], max_text_len)?.0,
            alignment,
        });
    }
    let ds = Dataset {
        records,
        gloss_vocab,
        text_vocab,
        max_video_len: spec.max_frames(),
        max_gloss_len,
        max_text_len,
        fps: spec.fps,
        provenance: spec.describe(seed),
    };
    ds.validate()?;
    Ok(ds)
}
