use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Sign to gloss to text.
    S2G2T,
    /// Sign to text.
    S2T,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::S2G2T => "s2g2t",
            Mode::S2T => "s2t",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2g2t" => Ok(Mode::S2G2T),
            "s2t" => Ok(Mode::S2T),
            _ => Err(Error::invalid("mode", format!("unknown mode {s:?} (s2g2t | s2t)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Adat,
    EncoderDecoder,
    EncoderOnly,
    DecoderOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::EncoderDecoder,
        Variant::EncoderOnly,
        Variant::DecoderOnly,
        Variant::Adat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Adat => "adat",
            Variant::EncoderDecoder => "encoder_decoder",
            Variant::EncoderOnly => "encoder_only",
            Variant::DecoderOnly => "decoder_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "variant",
                    format!("unknown variant {s:?} (adat | encoder_decoder | encoder_only | decoder_only)"),
                )
            })
    }
}

/// Architecture and optimizer hyperparameters. Vocabulary sizes include the
/// four reserved ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_encoders: usize,
    pub num_decoders: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub stack_depth: usize,
    pub gloss_vocab: usize,
    pub text_vocab: usize,
    pub max_video_len: usize,
    pub max_gloss_len: usize,
    pub max_text_len: usize,
    pub mode: Mode,
    pub variant: Variant,
    pub frame_channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk_small()
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 19] = [
        "num_encoders",
        "num_decoders",
        "d_model",
        "heads",
        "ff_size",
        "dropout",
        "learning_rate",
        "weight_decay",
        "stack_depth",
        "gloss_vocab",
        "text_vocab",
        "max_video_len",
        "max_gloss_len",
        "max_text_len",
        "mode",
        "variant",
        "frame_channels",
        "frame_height",
        "frame_width",
    ];

    /// Small configuration that trains in minutes on one core.
    pub fn desk_small() -> Self {
        Self {
            num_encoders: 1,
            num_decoders: 1,
            d_model: 64,
            heads: 4,
            ff_size: 128,
            dropout: 0.0,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            stack_depth: 2,
            gloss_vocab: 34,
            text_vocab: 64,
            max_video_len: 64,
            max_gloss_len: 12,
            max_text_len: 16,
            mode: Mode::S2T,
            variant: Variant::Adat,
            frame_channels: 1,
            frame_height: 16,
            frame_width: 16,
        }
    }

    pub fn table3_s2g2t() -> Self {
        Self {
            num_encoders: 12,
            num_decoders: 12,
            d_model: 1024,
            heads: 16,
            ff_size: 1024,
            dropout: 0.0,
            learning_rate: 5e-5,
            weight_decay: 0.0,
            mode: Mode::S2G2T,
            ..Self::desk_small()
        }
    }

    pub fn table3_s2t() -> Self {
        Self {
            num_encoders: 1,
            num_decoders: 1,
            d_model: 512,
            heads: 8,
            ff_size: 1024,
            dropout: 0.1,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            mode: Mode::S2T,
            ..Self::desk_small()
        }
    }

    /// Controlled FLOPs comparison setup: one encoder, one decoder, 512
    /// hidden units, 2048 feed-forward, 371 frames at 3x52x65.
    pub fn table5() -> Self {
        Self {
            num_encoders: 1,
            num_decoders: 1,
            d_model: 512,
            heads: 8,
            ff_size: 2048,
            gloss_vocab: 1115,
            text_vocab: 3000,
            max_video_len: 371,
            max_gloss_len: 27,
            max_text_len: 52,
            frame_channels: 3,
            frame_height: 52,
            frame_width: 65,
            ..Self::table3_s2t()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table3-s2g2t" => Ok(Self::table3_s2g2t()),
            "table3-s2t" => Ok(Self::table3_s2t()),
            "table5" => Ok(Self::table5()),
            "desk-small" => Ok(Self::desk_small()),
            _ => Err(Error::invalid(
                "preset",
                format!("unknown preset {name:?} (table3-s2g2t | table3-s2t | table5 | desk-small)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model_config", msg));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        for (name, v) in [
            ("max_video_len", self.max_video_len),
            ("max_gloss_len", self.max_gloss_len),
            ("max_text_len", self.max_text_len),
            ("ff_size", self.ff_size),
            ("stack_depth", self.stack_depth),
            ("frame_channels", self.frame_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.gloss_vocab <= 4 || self.text_vocab <= 4 {
            return bad("vocabularies need at least one token beyond the reserved ids".into());
        }
        if self.frame_height < 4 || self.frame_width < 4 {
            return bad(format!("frame {}x{} too small", self.frame_height, self.frame_width));
        }
        match (self.variant, self.mode) {
            (Variant::EncoderOnly | Variant::DecoderOnly, Mode::S2G2T) => Err(Error::Mismatch(format!(
                "variant {} supports only s2t",
                self.variant
            ))),
            (Variant::Adat | Variant::EncoderDecoder, _) if self.num_decoders == 0 => {
                bad("num_decoders must be at least 1".into())
            }
            (Variant::DecoderOnly, _) if self.num_decoders == 0 => bad("num_decoders must be at least 1".into()),
            (Variant::Adat | Variant::EncoderDecoder | Variant::EncoderOnly, _) if self.num_encoders == 0 => {
                bad("num_encoders must be at least 1".into())
            }
            _ => Ok(()),
        }
    }

    /// Sets one field from its textual value. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid("model_config", format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "num_encoders" => self.num_encoders = num(key, value)?,
            "num_decoders" => self.num_decoders = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ff_size" => self.ff_size = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "stack_depth" => self.stack_depth = num(key, value)?,
            "gloss_vocab" => self.gloss_vocab = num(key, value)?,
            "text_vocab" => self.text_vocab = num(key, value)?,
            "max_video_len" => self.max_video_len = num(key, value)?,
            "max_gloss_len" => self.max_gloss_len = num(key, value)?,
            "max_text_len" => self.max_text_len = num(key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "variant" => self.variant = value.trim().parse()?,
            "frame_channels" => self.frame_channels = num(key, value)?,
            "frame_height" => self.frame_height = num(key, value)?,
            "frame_width" => self.frame_width = num(key, value)?,
            _ => return Err(Error::invalid("model_config", format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`ModelConfig::KEYS`] order; floats use the
    /// shortest round-trip representation.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.num_encoders.to_string(),
            self.num_decoders.to_string(),
            self.d_model.to_string(),
            self.heads.to_string(),
            self.ff_size.to_string(),
            self.dropout.to_string(),
            self.learning_rate.to_string(),
            self.weight_decay.to_string(),
            self.stack_depth.to_string(),
            self.gloss_vocab.to_string(),
            self.text_vocab.to_string(),
            self.max_video_len.to_string(),
            self.max_gloss_len.to_string(),
            self.max_text_len.to_string(),
            self.mode.to_string(),
            self.variant.to_string(),
            self.frame_channels.to_string(),
            self.frame_height.to_string(),
            self.frame_width.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// Single-line `key=value key=value ...` form.
    pub fn to_line(&self) -> String {
        self.to_pairs()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let mut cfg = Self::desk_small();
        for item in line.split_whitespace() {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid("model_config", format!("expected key=value, got {item:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Blank class id of the frame-wise gloss head.
    pub fn gloss_blank(&self) -> usize {
        self.gloss_vocab
    }

    /// Blank class id of the encoder-only frame-wise text head.
    pub fn text_blank(&self) -> usize {
        self.text_vocab
    }

    /// Copies vocabulary sizes, length limits and frame size from a dataset.
    pub fn fit_dataset(&mut self, ds: &Dataset) {
        self.gloss_vocab = ds.gloss_vocab.len();
        self.text_vocab = ds.text_vocab.len();
        self.max_video_len = ds.max_video_len;
        self.max_gloss_len = ds.max_gloss_len;
        self.max_text_len = ds.max_text_len;
        if let Some((c, h, w)) = ds.frame_dims() {
            self.frame_channels = c;
            self.frame_height = h;
            self.frame_width = w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let mut c = ModelConfig::table3_s2t();
        c.learning_rate = 3.3e-4;
        c.variant = Variant::DecoderOnly;
        assert_eq!(ModelConfig::from_line(&c.to_line()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::table3_s2t();
        c.set("heads", "5").unwrap();
        assert!(c.validate().is_err());
        assert!(c.set("colour", "red").is_err());
        assert!(c.set("d_model", "big").is_err());
        let mut c = ModelConfig::desk_small();
        c.variant = Variant::EncoderOnly;
        c.mode = Mode::S2G2T;
        assert!(matches!(c.validate(), Err(Error::Mismatch(_))));
    }
}
