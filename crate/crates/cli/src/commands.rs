use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adat_core::data::{build_vocab, load_dataset, save_dataset, split_dataset, synth_generate, Dataset};
use adat_core::flops::{default_probe_lengths, scaling_probe, table5_report};
use adat_core::models::{load_checkpoint, save_checkpoint, Mode, Model, ModelConfig, Variant};
use adat_core::train_eval::{
    bleu_csv, evaluate, history_csv, timing_csv, train, translations_csv, Evaluation, StopReason, TrainHistory,
};
use adat_core::{Error, Real};
use clap::ValueEnum;

use crate::config::{EvalSplit, Precision, RunConfig};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Build vocabularies and statistics from gloss and text token files.
    Preprocess,
    /// Train one model and write its checkpoint and history.
    Train,
    /// Translate a split with a checkpoint and score BLEU.
    Eval,
    /// Count FLOPs for the controlled comparison.
    Flops,
    /// Train and score all four variants in sign-to-text mode.
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Flops => "flops",
            Command::Compare => "compare",
        }
    }
}

/// Creates `{out}/{command}-{timestamp}-{seed}`, adding `-2`, `-3`, ... on
/// collision.
pub fn create_run_dir(out: &Path, command: Command, seed: u64) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{}-{stamp}-{seed}", command.name());
    for n in 1.. {
        let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!()
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

/// Creates the run directory, echoes the config into it and runs
/// `command`. Returns the run directory.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let dir = create_run_dir(out, command, cfg.seed)?;
    write(&dir, "config.txt", cfg.echo())?;
    log::info!("{} run in {}", command.name(), dir.display());
    match command {
        Command::Synth => synth(cfg, &dir),
        Command::Preprocess => preprocess(cfg, &dir),
        Command::Train => match cfg.precision {
            Precision::F32 => train_cmd::<f32>(cfg, &dir),
            Precision::F64 => train_cmd::<f64>(cfg, &dir),
        },
        Command::Eval => match cfg.precision {
            Precision::F32 => eval_cmd::<f32>(cfg, &dir),
            Precision::F64 => eval_cmd::<f64>(cfg, &dir),
        },
        Command::Flops => flops(cfg, &dir),
        Command::Compare => match cfg.precision {
            Precision::F32 => compare::<f32>(cfg, &dir),
            Precision::F64 => compare::<f64>(cfg, &dir),
        },
    }?;
    Ok(dir)
}

fn dataset_summary(ds: &Dataset) -> String {
    let frames: usize = ds.records.iter().map(|r| r.frames.len()).sum();
    let mean = frames as f64 / ds.len().max(1) as f64;
    format!(
        "records,gloss_vocab,text_vocab,max_video_len,max_gloss_len,max_text_len,mean_frames\n{},{},{},{},{},{},{mean:.3}\n",
        ds.len(),
        ds.gloss_vocab.len(),
        ds.text_vocab.len(),
        ds.max_video_len,
        ds.max_gloss_len,
        ds.max_text_len,
    )
}

fn synth(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let ds = synth_generate(&cfg.synth, cfg.seed)?;
    save_dataset(&ds, &dir.join("dataset.adsl"))?;
    write(dir, "dataset_summary.csv", dataset_summary(&ds))
}

fn read_token_lines(path: Option<&PathBuf>, key: &str) -> Result<Vec<Vec<String>>, CliError> {
    let path = path.ok_or_else(|| CliError::Usage(format!("preprocess needs {key}=PATH")))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

fn vocab_csv(corpus: &[Vec<String>]) -> Result<(String, usize), CliError> {
    let vocab = build_vocab(corpus)?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in corpus.iter().flatten() {
        *counts.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut s = String::from("id,token,count\n");
    for (id, tok) in vocab.entries().iter().enumerate() {
        let _ = writeln!(s, "{id},{tok},{}", counts.get(tok.as_str()).copied().unwrap_or(0));
    }
    Ok((s, vocab.len()))
}

fn length_stats(corpus: &[Vec<String>]) -> (usize, f64) {
    let max = corpus.iter().map(Vec::len).max().unwrap_or(0);
    let mean = corpus.iter().map(Vec::len).sum::<usize>() as f64 / corpus.len().max(1) as f64;
    (max, mean)
}

fn preprocess(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let gloss = read_token_lines(cfg.gloss_tokens.as_ref(), "gloss_tokens")?;
    let text = read_token_lines(cfg.text_tokens.as_ref(), "text_tokens")?;
    if gloss.len() != text.len() {
        return Err(CliError::Data(format!(
            "{} gloss lines but {} text lines",
            gloss.len(),
            text.len()
        )));
    }
    let (gloss_csv, gloss_vocab) = vocab_csv(&gloss)?;
    let (text_csv, text_vocab) = vocab_csv(&text)?;
    write(dir, "gloss_vocab.csv", gloss_csv)?;
    write(dir, "text_vocab.csv", text_csv)?;
    let (gmax, gmean) = length_stats(&gloss);
    let (tmax, tmean) = length_stats(&text);
    write(
        dir,
        "stats.csv",
        format!(
            "samples,gloss_vocab,text_vocab,max_gloss_len,mean_gloss_len,max_text_len,mean_text_len\n{},{gloss_vocab},{text_vocab},{gmax},{gmean:.3},{tmax},{tmean:.3}\n",
            gloss.len()
        ),
    )
}

fn load_or_generate(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match &cfg.dataset {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage(format!("dataset {} does not exist", path.display())));
            }
            Ok(load_dataset(path)?)
        }
        None => Ok(synth_generate(&cfg.synth, cfg.seed)?),
    }
}

/// `(train, val, test)` for the configured fold.
fn split(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset), CliError> {
    let s = split_dataset(ds.len(), cfg.split.test_fraction, cfg.split.folds, cfg.seed)?;
    let (train, val) = s.fold(cfg.split.fold)?;
    Ok((ds.subset(&train), ds.subset(&val), ds.subset(&s.test)))
}

/// Model configuration sized to `ds`. Explicitly configured sizes that
/// disagree with the data are rejected.
fn fitted_config(cfg: &RunConfig, ds: &Dataset) -> Result<ModelConfig, CliError> {
    let mut model = cfg.model.clone();
    model.fit_dataset(ds);
    let exact = [
        ("gloss_vocab", cfg.model.gloss_vocab, model.gloss_vocab),
        ("text_vocab", cfg.model.text_vocab, model.text_vocab),
        ("frame_channels", cfg.model.frame_channels, model.frame_channels),
        ("frame_height", cfg.model.frame_height, model.frame_height),
        ("frame_width", cfg.model.frame_width, model.frame_width),
    ];
    for (key, asked, found) in exact {
        if cfg.explicit.contains(key) && asked != found {
            return Err(Error::Mismatch(format!("{key}={asked} but the dataset has {found}")).into());
        }
    }
    let bounds = [
        ("max_video_len", cfg.model.max_video_len, &mut model.max_video_len),
        ("max_gloss_len", cfg.model.max_gloss_len, &mut model.max_gloss_len),
        ("max_text_len", cfg.model.max_text_len, &mut model.max_text_len),
    ];
    for (key, asked, found) in bounds {
        if cfg.explicit.contains(key) {
            if asked < *found {
                return Err(Error::Mismatch(format!("{key}={asked} is below the dataset's {found}")).into());
            }
            *found = asked;
        }
    }
    model.validate()?;
    Ok(model)
}

/// Rewrites the config echo with the dataset-fitted model sizes so that
/// reloading it passes the explicit-size checks.
fn echo_fitted(cfg: &RunConfig, model: &ModelConfig, dir: &Path) -> Result<(), CliError> {
    let fitted = RunConfig {
        model: model.clone(),
        ..cfg.clone()
    };
    write(dir, "config.txt", fitted.echo())
}

struct Trained<T> {
    model: Model<T>,
    history: TrainHistory,
    seconds: f64,
}

fn fit<T: Real>(model_cfg: ModelConfig, seed: u64, cfg: &RunConfig, train_ds: &Dataset, val: &Dataset) -> Result<Trained<T>, CliError> {
    let started = Instant::now();
    let mut model = Model::<T>::build(model_cfg, seed)?;
    let history = train(&mut model, train_ds, val, &cfg.schedule)?;
    Ok(Trained {
        model,
        history,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Writes checkpoint and history tables into `dir`; a diverged run still
/// writes its history before reporting the failure.
fn write_training(dir: &Path, t: &Trained<impl Real>) -> Result<(), CliError> {
    write(dir, "history.csv", history_csv(&t.history))?;
    write(dir, "timing.csv", timing_csv(&t.history))?;
    let best_val = t
        .history
        .best_epoch
        .and_then(|b| t.history.epochs.iter().find(|e| e.epoch == b))
        .map(|e| format!("{:.8}", e.val_loss))
        .unwrap_or_default();
    let c = t.model.config();
    write(
        dir,
        "train_summary.csv",
        format!(
            "variant,mode,parameters,epochs,best_epoch,best_val_loss,stop_reason\n{},{},{},{},{},{best_val},{}\n",
            c.variant,
            c.mode,
            t.model.param_count(),
            t.history.epochs.len(),
            t.history.best_epoch.map(|b| b.to_string()).unwrap_or_default(),
            stop_label(&t.history.stop_reason),
        ),
    )?;
    if let StopReason::Diverged { epoch, msg } = &t.history.stop_reason {
        return Err(Error::Diverged {
            epoch: *epoch,
            msg: msg.clone(),
        }
        .into());
    }
    save_checkpoint(&t.model, &dir.join("model.ckpt"))?;
    Ok(())
}

fn stop_label(r: &StopReason) -> &'static str {
    match r {
        StopReason::EarlyStop => "early_stop",
        StopReason::MaxEpochs => "max_epochs",
        StopReason::Diverged { .. } => "diverged",
    }
}

fn train_cmd<T: Real>(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let ds = load_or_generate(cfg)?;
    let (train_ds, val, _) = split(cfg, &ds)?;
    let model_cfg = fitted_config(cfg, &ds)?;
    echo_fitted(cfg, &model_cfg, dir)?;
    let trained = fit::<T>(model_cfg, cfg.seed, cfg, &train_ds, &val)?;
    write_training(dir, &trained)?;
    println!("{}", history_csv(&trained.history).trim_end());
    Ok(())
}

fn eval_subset(cfg: &RunConfig, ds: &Dataset) -> Result<Dataset, CliError> {
    if cfg.eval_split == EvalSplit::All {
        return Ok(ds.clone());
    }
    let (train_ds, val, test) = split(cfg, ds)?;
    Ok(match cfg.eval_split {
        EvalSplit::Train => train_ds,
        EvalSplit::Val => val,
        _ => test,
    })
}

fn write_evaluation(dir: &Path, e: &Evaluation) -> Result<(), CliError> {
    write(dir, "bleu.csv", bleu_csv(&e.report))?;
    write(dir, "translations.csv", translations_csv(&e.translations))
}

fn eval_cmd<T: Real>(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("eval needs checkpoint=PATH".into()))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    let model = load_checkpoint::<T>(path)?;
    let c = model.config();
    if cfg.explicit.contains("mode") && cfg.model.mode != c.mode {
        return Err(Error::Mismatch(format!("mode={} but the checkpoint is {}", cfg.model.mode, c.mode)).into());
    }
    if cfg.explicit.contains("variant") && cfg.model.variant != c.variant {
        return Err(Error::Mismatch(format!("variant={} but the checkpoint is {}", cfg.model.variant, c.variant)).into());
    }
    let ds = load_or_generate(cfg)?;
    let subset = eval_subset(cfg, &ds)?;
    let e = evaluate(&model, &subset)?;
    write_evaluation(dir, &e)?;
    print!("{}", bleu_csv(&e.report));
    Ok(())
}

fn flops(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let report = table5_report(&cfg.model)?;
    let text = report.to_text();
    write(dir, "flops.txt", &text)?;
    write(dir, "flops.csv", report.to_csv())?;
    write(dir, "ratios.csv", report.ratios_csv())?;
    let mut components = String::from("mode,variant,kind,stage,component,flops,formula\n");
    for col in &report.columns {
        for line in col.to_csv().lines().skip(1) {
            let _ = writeln!(components, "{},{},{line}", col.mode, col.variant);
        }
    }
    write(dir, "components.csv", components)?;
    let lengths = default_probe_lengths();
    let mut fits = String::from("variant,exponent,residual\n");
    for variant in [Variant::EncoderDecoder, Variant::Adat] {
        let fit = scaling_probe(variant, &lengths)?;
        write(dir, &format!("scaling_{variant}.csv"), fit.to_csv())?;
        let _ = writeln!(fits, "{variant},{:.6},{:.6}", fit.exponent, fit.residual);
    }
    write(dir, "scaling_fit.csv", fits)?;
    print!("{text}");
    Ok(())
}

fn compare<T: Real>(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    if cfg.explicit.contains("mode") && cfg.model.mode != Mode::S2T {
        return Err(Error::Mismatch("compare runs every variant in s2t mode".into()).into());
    }
    let ds = load_or_generate(cfg)?;
    let (train_ds, val, test) = split(cfg, &ds)?;
    let mut base = fitted_config(cfg, &ds)?;
    base.mode = Mode::S2T;
    echo_fitted(cfg, &base, dir)?;
    let mut table = String::from(
        "variant,parameters,epochs,best_epoch,stop_reason,bleu1,bleu2,bleu3,bleu4,brevity_penalty\n",
    );
    let mut timed = String::from("variant,train_seconds,seconds_per_epoch,eval_seconds\n");
    let mut diverged = None;
    for variant in Variant::ALL {
        let sub = dir.join(variant.name());
        fs::create_dir(&sub).map_err(|e| CliError::io(&sub, e))?;
        let model_cfg = ModelConfig { variant, ..base.clone() };
        let trained = fit::<T>(model_cfg, cfg.seed, cfg, &train_ds, &val)?;
        match write_training(&sub, &trained) {
            Err(e @ CliError::Core(Error::Diverged { .. })) => {
                log::error!("{variant}: {e}");
                let _ = writeln!(table, "{variant},{},{},,diverged,,,,,", trained.model.param_count(), trained.history.epochs.len());
                diverged.get_or_insert(e);
                continue;
            }
            other => other?,
        }
        let started = Instant::now();
        let e = evaluate(&trained.model, &test)?;
        let eval_seconds = started.elapsed().as_secs_f64();
        write_evaluation(&sub, &e)?;
        let b = &e.report.bleu;
        let h = &trained.history;
        let _ = writeln!(
            table,
            "{variant},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            trained.model.param_count(),
            h.epochs.len(),
            h.best_epoch.map(|b| b.to_string()).unwrap_or_default(),
            stop_label(&h.stop_reason),
            b[0],
            b[1],
            b[2],
            b[3],
            e.report.brevity_penalty
        );
        let per_epoch = trained.seconds / h.epochs.len().max(1) as f64;
        let _ = writeln!(timed, "{variant},{:.3},{per_epoch:.4},{eval_seconds:.3}", trained.seconds);
    }
    write(dir, "compare.csv", &table)?;
    write(dir, "compare_timed.csv", timed)?;
    print!("{table}");
    diverged.map_or(Ok(()), Err)
}
