//! `key=value` run configuration: built-in defaults, then a config file,
//! then `--set` overrides.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adat_core::data::SynthSpec;
use adat_core::models::ModelConfig;
use adat_core::train_eval::TrainSchedule;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("expected f32 or f64, got {s:?}")),
        }
    }
}

/// Which records `eval` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
            EvalSplit::All => "all",
        })
    }
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            _ => Err(format!("expected train, val, test or all, got {s:?}")),
        }
    }
}

/// Test hold-out and cross-validation fold used by `train`, `eval` and
/// `compare`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub folds: usize,
    pub fold: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 50.0 / 300.0,
            folds: 5,
            fold: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub synth: SynthSpec,
    pub split: SplitSpec,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub gloss_tokens: Option<PathBuf>,
    pub text_tokens: Option<PathBuf>,
    pub eval_split: EvalSplit,
    pub seed: u64,
    pub precision: Precision,
    /// Keys given by a file or override rather than by defaults.
    pub explicit: BTreeSet<String>,
}

const SCHEDULE_KEYS: [&str; 7] = [
    "max_epochs",
    "batch_size",
    "label_smoothing",
    "plateau_factor",
    "min_lr",
    "plateau_patience",
    "stop_patience",
];

const SYNTH_KEYS: [&str; 14] = [
    "synth.n_samples",
    "synth.gloss_vocab_size",
    "synth.text_vocab_size",
    "synth.gloss_len_min",
    "synth.gloss_len_max",
    "synth.frames_per_gloss_min",
    "synth.frames_per_gloss_max",
    "synth.transition_frames",
    "synth.channels",
    "synth.height",
    "synth.width",
    "synth.noise",
    "synth.function_every",
    "synth.fps",
];

const RUN_KEYS: [&str; 10] = [
    "test_fraction",
    "folds",
    "fold",
    "dataset",
    "checkpoint",
    "gloss_tokens",
    "text_tokens",
    "eval_split",
    "seed",
    "precision",
];

fn parse<V: FromStr>(value: &str) -> Result<V, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Defaults from a named preset (or the small desk configuration).
    pub fn defaults(preset: Option<&str>) -> Result<Self, CliError> {
        let model = match preset {
            Some(name) => ModelConfig::preset(name).map_err(|e| CliError::Usage(e.to_string()))?,
            None => ModelConfig::desk_small(),
        };
        Ok(Self {
            model,
            schedule: TrainSchedule::default(),
            synth: SynthSpec::default(),
            split: SplitSpec::default(),
            dataset: None,
            checkpoint: None,
            gloss_tokens: None,
            text_tokens: None,
            eval_split: EvalSplit::Test,
            seed: 0,
            precision: Precision::F32,
            explicit: BTreeSet::new(),
        })
    }

    /// Every key this configuration understands.
    pub fn keys() -> Vec<&'static str> {
        ModelConfig::KEYS
            .iter()
            .chain(&SCHEDULE_KEYS)
            .chain(&SYNTH_KEYS)
            .chain(&RUN_KEYS)
            .copied()
            .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        if ModelConfig::KEYS.contains(&key) {
            self.model.set(key, value).map_err(|e| e.to_string())?;
        } else {
            let s = &mut self.schedule;
            let y = &mut self.synth;
            match key {
                "max_epochs" => s.max_epochs = parse(value)?,
                "batch_size" => s.batch_size = parse(value)?,
                "label_smoothing" => s.label_smoothing = parse(value)?,
                "plateau_factor" => s.plateau_factor = parse(value)?,
                "min_lr" => s.min_lr = parse(value)?,
                "plateau_patience" => s.plateau_patience = parse(value)?,
                "stop_patience" => s.stop_patience = parse(value)?,
                "synth.n_samples" => y.n_samples = parse(value)?,
                "synth.gloss_vocab_size" => y.gloss_vocab_size = parse(value)?,
                "synth.text_vocab_size" => y.text_vocab_size = parse(value)?,
                "synth.gloss_len_min" => y.gloss_len.0 = parse(value)?,
                "synth.gloss_len_max" => y.gloss_len.1 = parse(value)?,
                "synth.frames_per_gloss_min" => y.frames_per_gloss.0 = parse(value)?,
                "synth.frames_per_gloss_max" => y.frames_per_gloss.1 = parse(value)?,
                "synth.transition_frames" => y.transition_frames = parse(value)?,
                "synth.channels" => y.channels = parse(value)?,
                "synth.height" => y.height = parse(value)?,
                "synth.width" => y.width = parse(value)?,
                "synth.noise" => y.noise = parse(value)?,
                "synth.function_every" => y.function_every = parse(value)?,
                "synth.fps" => y.fps = parse(value)?,
                "test_fraction" => self.split.test_fraction = parse(value)?,
                "folds" => self.split.folds = parse(value)?,
                "fold" => self.split.fold = parse(value)?,
                "dataset" => self.dataset = path(value),
                "checkpoint" => self.checkpoint = path(value),
                "gloss_tokens" => self.gloss_tokens = path(value),
                "text_tokens" => self.text_tokens = path(value),
                "eval_split" => self.eval_split = value.parse()?,
                "seed" => {
                    self.seed = parse(value)?;
                    self.schedule.seed = self.seed;
                }
                "precision" => self.precision = value.parse()?,
                _ => return Err(format!("unknown key {key:?}")),
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config {
                origin: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            self.set(key.trim(), value).map_err(err)?;
        }
        Ok(())
    }

    /// Resolves defaults, then `file`, then `overrides`, then `seed`.
    pub fn resolve(
        preset: Option<&str>,
        file: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut cfg = Self::defaults(preset)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for (i, o) in overrides.iter().enumerate() {
            cfg.apply_text(o, &format!("--set #{}", i + 1))?;
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
            cfg.schedule.seed = seed;
            cfg.explicit.insert("seed".into());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: adat_core::Error| CliError::Usage(e.to_string());
        self.model.validate().map_err(usage)?;
        self.schedule.validate().map_err(usage)?;
        self.synth.validate().map_err(usage)?;
        let s = &self.split;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) || s.folds < 2 || s.fold >= s.folds {
            return Err(CliError::Usage(format!(
                "split: test_fraction {} must lie in (0, 1), folds {} must be at least 2, fold {} below folds",
                s.test_fraction, s.folds, s.fold
            )));
        }
        Ok(())
    }

    /// Fully resolved configuration as `key=value` lines, readable by
    /// [`RunConfig::apply_text`].
    pub fn echo(&self) -> String {
        let mut lines: Vec<String> = self.model.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        let s = &self.schedule;
        let y = &self.synth;
        let rest: [(&str, String); 31] = [
            ("max_epochs", s.max_epochs.to_string()),
            ("batch_size", s.batch_size.to_string()),
            ("label_smoothing", s.label_smoothing.to_string()),
            ("plateau_factor", s.plateau_factor.to_string()),
            ("min_lr", s.min_lr.to_string()),
            ("plateau_patience", s.plateau_patience.to_string()),
            ("stop_patience", s.stop_patience.to_string()),
            ("synth.n_samples", y.n_samples.to_string()),
            ("synth.gloss_vocab_size", y.gloss_vocab_size.to_string()),
            ("synth.text_vocab_size", y.text_vocab_size.to_string()),
            ("synth.gloss_len_min", y.gloss_len.0.to_string()),
            ("synth.gloss_len_max", y.gloss_len.1.to_string()),
            ("synth.frames_per_gloss_min", y.frames_per_gloss.0.to_string()),
            ("synth.frames_per_gloss_max", y.frames_per_gloss.1.to_string()),
            ("synth.transition_frames", y.transition_frames.to_string()),
            ("synth.channels", y.channels.to_string()),
            ("synth.height", y.height.to_string()),
            ("synth.width", y.width.to_string()),
            ("synth.noise", y.noise.to_string()),
            ("synth.function_every", y.function_every.to_string()),
            ("synth.fps", y.fps.to_string()),
            ("test_fraction", self.split.test_fraction.to_string()),
            ("folds", self.split.folds.to_string()),
            ("fold", self.split.fold.to_string()),
            ("dataset", show(&self.dataset)),
            ("checkpoint", show(&self.checkpoint)),
            ("gloss_tokens", show(&self.gloss_tokens)),
            ("text_tokens", show(&self.text_tokens)),
            ("eval_split", self.eval_split.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
        ];
        lines.extend(rest.into_iter().map(|(k, v)| format!("{k}={v}")));
        lines.push(String::new());
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_covers_every_key_once() {
        let cfg = RunConfig::defaults(None).unwrap();
        let echoed: Vec<String> = cfg
            .echo()
            .lines()
            .map(|l| l.split_once('=').unwrap().0.to_string())
            .collect();
        let mut keys: Vec<String> = RunConfig::keys().into_iter().map(String::from).collect();
        assert_eq!(echoed, keys);
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), echoed.len());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let mut cfg = RunConfig::defaults(None).unwrap();
        cfg.apply_text("# heading\n\nheads = 2  # trailing\n", "t").unwrap();
        assert_eq!(cfg.model.heads, 2);
        assert!(cfg.explicit.contains("heads"));
    }
}
