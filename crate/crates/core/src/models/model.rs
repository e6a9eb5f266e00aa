use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, ModelConfig, Variant};
use super::layers::{add_positional, AdatBlock, AdatTrace, Ctx, DecoderLayer, Embedding, EncoderLayer, Linear};
use crate::data::vocab::{EOS_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::graph::{Graph, Var};
use crate::params::{uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Encoder result: `m x d_model` memory and, in S2G2T mode, frame-wise
/// gloss logits `m x (gloss_vocab + 1)`.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub memory: Var,
    pub gloss_logits: Option<Var>,
    /// One entry per ADAT block; empty for canonical encoders.
    pub adat_trace: Vec<AdatTrace>,
}

/// One training example as the model sees it. Token sequences hold content
/// ids only (no `<sos>`, `<eos>` or padding).
#[derive(Clone, Copy, Debug)]
pub struct Example<'a, T> {
    /// `m x C x H x W`
    pub frames: &'a Tensor<T>,
    pub gloss: &'a [usize],
    /// Per-frame gloss id, or the blank class.
    pub alignment: &'a [usize],
    pub text: &'a [usize],
}

/// Logits paired with their class targets, one per row.
#[derive(Clone, Debug)]
pub struct Head {
    pub logits: Var,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Outputs {
    pub gloss: Option<Head>,
    pub text: Head,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Translation {
    pub gloss: Option<Vec<usize>>,
    pub text: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub embed: Embedding,
    pub layers: Vec<DecoderLayer>,
    pub out: Linear,
}

#[derive(Clone, Debug)]
enum Body {
    Adat {
        blocks: Vec<AdatBlock>,
        gloss: Option<(Linear, Embedding)>,
        decoder: Decoder,
    },
    EncoderDecoder {
        layers: Vec<EncoderLayer>,
        gloss: Option<(Linear, Embedding)>,
        decoder: Decoder,
    },
    EncoderOnly {
        layers: Vec<EncoderLayer>,
        text_head: Linear,
    },
    DecoderOnly {
        separator: ParamId,
        embed: Embedding,
        layers: Vec<EncoderLayer>,
        out: Linear,
    },
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    features: FeatureExtractor,
    input_proj: Linear,
    body: Body,
}

/// Removes consecutive duplicates, then blanks.
pub fn collapse_decode(frames: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in frames {
        if Some(c) != prev && c != blank {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Frame labels for the encoder-only baseline: tokens stretched uniformly
/// over `m` frames, with a blank on the first frame of a token that repeats
/// its predecessor.
pub fn stretch_labels(tokens: &[usize], m: usize, blank: usize) -> Vec<usize> {
    let n = tokens.len();
    if n == 0 {
        return vec![blank; m];
    }
    let slot = |i: usize| i * n / m;
    (0..m)
        .map(|i| {
            let s = slot(i);
            if i > 0 && slot(i - 1) != s && tokens[slot(i - 1)] == tokens[s] {
                blank
            } else {
                tokens[s]
            }
        })
        .collect()
}

fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    let n = *t.shape().last().expect("matrix");
    t.data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn decoder_new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, c: &ModelConfig) -> Result<Decoder> {
    Ok(Decoder {
        embed: Embedding::new(store, rng, "decoder.embed", c.text_vocab, c.d_model),
        layers: (0..c.num_decoders)
            .map(|i| DecoderLayer::new(store, rng, &format!("decoder.{i}"), c.d_model, c.heads, c.ff_size))
            .collect::<Result<_>>()?,
        out: Linear::new(store, rng, "decoder.out", c.d_model, c.text_vocab),
    })
}

fn gloss_parts<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, c: &ModelConfig) -> Option<(Linear, Embedding)> {
    (c.mode == Mode::S2G2T).then(|| {
        (
            Linear::new(store, rng, "gloss.head", c.d_model, c.gloss_vocab + 1),
            Embedding::new(store, rng, "gloss.embed", c.gloss_vocab, c.d_model),
        )
    })
}

fn encoder_layers<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, c: &ModelConfig, prefix: &str, n: usize) -> Result<Vec<EncoderLayer>> {
    (0..n)
        .map(|i| EncoderLayer::new(store, rng, &format!("{prefix}.{i}"), c.d_model, c.heads, c.ff_size))
        .collect()
}

impl<T: Real> Model<T> {
    /// Builds a freshly initialized model; all randomness comes from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let features = FeatureExtractor::new(&mut store, &mut rng, (c.frame_channels, c.frame_height, c.frame_width))?;
        let input_proj = Linear::new(&mut store, &mut rng, "input_proj", features.layout.dim(), c.d_model);
        let body = match c.variant {
            Variant::Adat => Body::Adat {
                blocks: (0..c.num_encoders)
                    .map(|i| AdatBlock::new(&mut store, &mut rng, &format!("adat.{i}"), c.d_model, c.heads, c.stack_depth))
                    .collect::<Result<_>>()?,
                gloss: gloss_parts(&mut store, &mut rng, c),
                decoder: decoder_new(&mut store, &mut rng, c)?,
            },
            Variant::EncoderDecoder => Body::EncoderDecoder {
                layers: encoder_layers(&mut store, &mut rng, c, "encoder", c.num_encoders)?,
                gloss: gloss_parts(&mut store, &mut rng, c),
                decoder: decoder_new(&mut store, &mut rng, c)?,
            },
            Variant::EncoderOnly => Body::EncoderOnly {
                layers: encoder_layers(&mut store, &mut rng, c, "encoder", c.num_encoders)?,
                text_head: Linear::new(&mut store, &mut rng, "frame_text.head", c.d_model, c.text_vocab + 1),
            },
            Variant::DecoderOnly => Body::DecoderOnly {
                separator: store.add("stream.separator", uniform(&mut rng, &[1, c.d_model], 1.0)),
                embed: Embedding::new(&mut store, &mut rng, "stream.embed", c.text_vocab, c.d_model),
                layers: encoder_layers(&mut store, &mut rng, c, "stream", c.num_decoders)?,
                out: Linear::new(&mut store, &mut rng, "stream.out", c.d_model, c.text_vocab),
            },
        };
        Ok(Self {
            config,
            params: store,
            features,
            input_proj,
            body,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Whether the encoder adds positional encodings.
    pub fn encoder_uses_positional_encoding(&self) -> bool {
        matches!(self.body, Body::EncoderDecoder { .. } | Body::EncoderOnly { .. })
    }

    /// Frames to projected `m x d_model` rows.
    pub fn embed_frames(&self, g: &mut Graph<T>, p: &Bound, frames: Var) -> Result<Var> {
        let fm = self.features.forward(g, p, frames)?;
        self.input_proj.forward(g, p, fm.x_e)
    }

    /// Runs the encoder on a clip. Not available for the decoder-only variant.
    pub fn encode(&self, g: &mut Graph<T>, p: &Bound, frames: Var, ctx: &mut Ctx) -> Result<EncoderOutput> {
        let x = self.embed_frames(g, p, frames)?;
        self.encode_projected(g, p, x, ctx)
    }

    pub fn encode_projected(&self, g: &mut Graph<T>, p: &Bound, x: Var, ctx: &mut Ctx) -> Result<EncoderOutput> {
        let (memory, gloss, adat_trace) = match &self.body {
            Body::Adat { blocks, gloss, .. } => {
                let mut h = x;
                let mut trace = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let (out, t) = b.forward(g, p, h)?;
                    h = out;
                    trace.push(t);
                }
                (h, gloss.as_ref(), trace)
            }
            Body::EncoderDecoder { layers, gloss, .. } => (self.canonical_encoder(g, p, x, layers, ctx)?, gloss.as_ref(), Vec::new()),
            Body::EncoderOnly { layers, .. } => (self.canonical_encoder(g, p, x, layers, ctx)?, None, Vec::new()),
            Body::DecoderOnly { .. } => {
                return Err(Error::Mismatch("decoder_only has no separate encoder".into()))
            }
        };
        let gloss_logits = match gloss {
            Some((head, _)) => Some(head.forward(g, p, memory)?),
            None => None,
        };
        Ok(EncoderOutput {
            memory,
            gloss_logits,
            adat_trace,
        })
    }

    fn canonical_encoder(&self, g: &mut Graph<T>, p: &Bound, x: Var, layers: &[EncoderLayer], ctx: &mut Ctx) -> Result<Var> {
        let mut h = add_positional(g, x)?;
        h = ctx.dropout(g, h)?;
        for l in layers {
            h = l.forward(g, p, h, false, ctx)?;
        }
        Ok(h)
    }

    /// Frame-wise gloss logits `m x (gloss_vocab + 1)`.
    pub fn gloss_head(&self, g: &mut Graph<T>, p: &Bound, memory: Var) -> Result<Var> {
        match &self.body {
            Body::Adat { gloss: Some((head, _)), .. } | Body::EncoderDecoder { gloss: Some((head, _)), .. } => {
                head.forward(g, p, memory)
            }
            _ => Err(Error::Mismatch(format!(
                "gloss head requires s2g2t mode (model is {} {})",
                self.config.variant, self.config.mode
            ))),
        }
    }

    /// Decoder memory built from gloss ids: scaled embedding plus
    /// positional encoding.
    pub fn gloss_memory(&self, g: &mut Graph<T>, p: &Bound, glosses: &[usize]) -> Result<Var> {
        let embed = match &self.body {
            Body::Adat { gloss: Some((_, e)), .. } | Body::EncoderDecoder { gloss: Some((_, e)), .. } => e,
            _ => return Err(Error::Mismatch("gloss memory requires s2g2t mode".into())),
        };
        if glosses.is_empty() {
            return Err(Error::invalid("gloss_memory", "empty gloss sequence"));
        }
        let x = embed.forward(g, p, glosses)?;
        add_positional(g, x)
    }

    /// Decoder memory from S2T encoder output. The ADAT encoder carries no
    /// positional encoding, so it is added here on the decoder side.
    pub fn video_memory(&self, g: &mut Graph<T>, encoded: Var) -> Result<Var> {
        match &self.body {
            Body::Adat { .. } => add_positional(g, encoded),
            _ => Ok(encoded),
        }
    }

    fn decoder(&self) -> Result<&Decoder> {
        match &self.body {
            Body::Adat { decoder, .. } | Body::EncoderDecoder { decoder, .. } => Ok(decoder),
            _ => Err(Error::Mismatch(format!("{} has no encoder-decoder stack", self.config.variant))),
        }
    }

    /// Next-token logits `len(prefix) x text_vocab` given decoder memory.
    pub fn decoder_logits(&self, g: &mut Graph<T>, p: &Bound, memory: Var, prefix: &[usize], ctx: &mut Ctx) -> Result<Var> {
        let dec = self.decoder()?;
        if g.shape(memory).first().is_none_or(|&m| m == 0) {
            return Err(Error::invalid("decode", "empty memory"));
        }
        let x = dec.embed.forward(g, p, prefix)?;
        let mut h = add_positional(g, x)?;
        h = ctx.dropout(g, h)?;
        for l in &dec.layers {
            h = l.forward(g, p, h, memory, ctx)?;
        }
        dec.out.forward(g, p, h)
    }

    /// Decoder-only logits for the text positions of
    /// `[frames || separator || prefix]`, one row per prefix token.
    pub fn stream_logits(&self, g: &mut Graph<T>, p: &Bound, projected: Var, prefix: &[usize], ctx: &mut Ctx) -> Result<Var> {
        let Body::DecoderOnly { separator, embed, layers, out } = &self.body else {
            return Err(Error::Mismatch(format!("{} is not decoder_only", self.config.variant)));
        };
        let t = embed.forward(g, p, prefix)?;
        let stream = g.concat_rows(&[projected, p[*separator], t])?;
        let mut h = add_positional(g, stream)?;
        h = ctx.dropout(g, h)?;
        for l in layers {
            h = l.forward(g, p, h, true, ctx)?;
        }
        let total = g.shape(h)[0];
        let tail = g.slice_rows(h, total - prefix.len(), prefix.len())?;
        out.forward(g, p, tail)
    }

    /// Teacher-forced logits and targets for one example.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, ex: &Example<T>, ctx: &mut Ctx) -> Result<Outputs> {
        let frames = g.constant(ex.frames.clone());
        let m = ex.frames.shape()[0];
        let mut prefix = Vec::with_capacity(ex.text.len() + 1);
        prefix.push(SOS_ID);
        prefix.extend_from_slice(ex.text);
        let mut targets = ex.text.to_vec();
        targets.push(EOS_ID);

        match &self.body {
            Body::DecoderOnly { .. } => {
                let x = self.embed_frames(g, p, frames)?;
                let logits = self.stream_logits(g, p, x, &prefix, ctx)?;
                Ok(Outputs {
                    gloss: None,
                    text: Head { logits, targets },
                })
            }
            Body::EncoderOnly { text_head, .. } => {
                let enc = self.encode(g, p, frames, ctx)?;
                let logits = text_head.forward(g, p, enc.memory)?;
                Ok(Outputs {
                    gloss: None,
                    text: Head {
                        logits,
                        targets: stretch_labels(ex.text, m, self.config.text_blank()),
                    },
                })
            }
            Body::Adat { .. } | Body::EncoderDecoder { .. } => {
                let enc = self.encode(g, p, frames, ctx)?;
                let (gloss, memory) = match enc.gloss_logits {
                    Some(logits) => {
                        if ex.alignment.len() != m {
                            return Err(Error::invalid(
                                "forward",
                                format!("alignment length {} for {m} frames", ex.alignment.len()),
                            ));
                        }
                        let head = Head {
                            logits,
                            targets: ex.alignment.to_vec(),
                        };
                        (Some(head), self.gloss_memory(g, p, ex.gloss)?)
                    }
                    None => (None, self.video_memory(g, enc.memory)?),
                };
                let logits = self.decoder_logits(g, p, memory, &prefix, ctx)?;
                Ok(Outputs {
                    gloss,
                    text: Head { logits, targets },
                })
            }
        }
    }

    /// Greedy autoregressive decoding over `memory`, at most `max_text_len`
    /// tokens, stopping at `<eos>`.
    pub fn decode_greedy(&self, g: &mut Graph<T>, p: &Bound, memory: Var) -> Result<Vec<usize>> {
        self.greedy(|g, prefix| self.decoder_logits(g, p, memory, prefix, &mut Ctx::eval()), g)
    }

    fn greedy(&self, mut step: impl FnMut(&mut Graph<T>, &[usize]) -> Result<Var>, g: &mut Graph<T>) -> Result<Vec<usize>> {
        let mut prefix = vec![SOS_ID];
        for _ in 0..self.config.max_text_len {
            let logits = step(g, &prefix)?;
            let rows = argmax_rows(g.value(logits));
            let next = *rows.last().expect("non-empty prefix");
            if next == EOS_ID {
                break;
            }
            prefix.push(next);
        }
        Ok(prefix.split_off(1))
    }

    /// Inference on one clip `m x C x H x W` with frozen parameters.
    pub fn translate(&self, frames: &Tensor<T>) -> Result<Translation> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let fv = g.constant(frames.clone());
        let mut ctx = Ctx::eval();
        match &self.body {
            Body::DecoderOnly { .. } => {
                let x = self.embed_frames(&mut g, &p, fv)?;
                let text = self.greedy(|g, prefix| self.stream_logits(g, &p, x, prefix, &mut Ctx::eval()), &mut g)?;
                Ok(Translation { gloss: None, text })
            }
            Body::EncoderOnly { text_head, .. } => {
                let enc = self.encode(&mut g, &p, fv, &mut ctx)?;
                let logits = text_head.forward(&mut g, &p, enc.memory)?;
                let frames = argmax_rows(g.value(logits));
                let mut text = collapse_decode(&frames, self.config.text_blank());
                text.truncate(self.config.max_text_len);
                Ok(Translation { gloss: None, text })
            }
            Body::Adat { .. } | Body::EncoderDecoder { .. } => {
                let enc = self.encode(&mut g, &p, fv, &mut ctx)?;
                match enc.gloss_logits {
                    Some(logits) => {
                        let frames = argmax_rows(g.value(logits));
                        let mut gloss = collapse_decode(&frames, self.config.gloss_blank());
                        gloss.truncate(self.config.max_gloss_len);
                        let text = if gloss.is_empty() {
                            Vec::new()
                        } else {
                            let memory = self.gloss_memory(&mut g, &p, &gloss)?;
                            self.decode_greedy(&mut g, &p, memory)?
                        };
                        Ok(Translation {
                            gloss: Some(gloss),
                            text,
                        })
                    }
                    None => {
                        let memory = self.video_memory(&mut g, enc.memory)?;
                        Ok(Translation {
                            gloss: None,
                            text: self.decode_greedy(&mut g, &p, memory)?,
                        })
                    }
                }
            }
        }
    }

    /// Replaces every parameter, matching by name and shape.
    pub fn load_params(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::invalid(
                "load_params",
                format!("{} tensors for {} parameters", named.len(), self.params.len()),
            ));
        }
        for (name, t) in named {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| Error::invalid("load_params", format!("unknown parameter {name:?}")))?;
            if self.params.get(id).shape() != t.shape() {
                return Err(Error::shape("load_params", self.params.get(id).shape(), t.shape()));
            }
            *self.params.get_mut(id) = t;
        }
        Ok(())
    }
}
