use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::bleu::{bleu, BleuReport};
use super::loss::smoothed_ce;
use super::schedule::{PlateauController, TrainSchedule};
use crate::data::{Dataset, SampleRecord, EOS_ID, PAD_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{Ctx, Example, Mode, Model};
use crate::params::Bound;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Diverged { epoch: usize, msg: String },
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::EarlyStop => f.write_str("early_stop"),
            StopReason::MaxEpochs => f.write_str("max_epochs"),
            StopReason::Diverged { epoch, msg } => write!(f, "diverged at epoch {epoch}: {msg}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: Option<usize>,
}

/// Checks that a dataset fits a model: vocabulary sizes, frame size and,
/// for S2G2T, frame alignments.
pub fn check_compatible<T: Real>(model: &Model<T>, ds: &Dataset) -> Result<()> {
    let c = model.config();
    if ds.gloss_vocab.len() != c.gloss_vocab || ds.text_vocab.len() != c.text_vocab {
        return Err(Error::Mismatch(format!(
            "dataset vocabularies {}/{} but model expects {}/{}",
            ds.gloss_vocab.len(),
            ds.text_vocab.len(),
            c.gloss_vocab,
            c.text_vocab
        )));
    }
    if let Some(dims) = ds.frame_dims() {
        if dims != (c.frame_channels, c.frame_height, c.frame_width) {
            return Err(Error::Mismatch(format!(
                "dataset frames are {dims:?} but model expects {:?}",
                (c.frame_channels, c.frame_height, c.frame_width)
            )));
        }
    }
    if c.mode == Mode::S2G2T && ds.records.iter().any(|r| r.alignment.is_empty()) {
        return Err(Error::Mismatch("s2g2t training needs frame alignments".into()));
    }
    Ok(())
}

/// A record converted to the model's scalar type.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub frames: Tensor<T>,
    pub gloss: Vec<usize>,
    pub alignment: Vec<usize>,
    pub text: Vec<usize>,
}

impl<T: Real> Prepared<T> {
    pub fn new(r: &SampleRecord) -> Self {
        Self {
            frames: r.frames.frames().cast(),
            gloss: r.gloss().to_vec(),
            alignment: r.alignment.clone(),
            text: r.text().to_vec(),
        }
    }

    pub fn example(&self) -> Example<'_, T> {
        Example {
            frames: &self.frames,
            gloss: &self.gloss,
            alignment: &self.alignment,
            text: &self.text,
        }
    }
}

/// Text loss, plus the frame-wise gloss loss in S2G2T mode (weighted 1:1).
pub fn example_loss<T: Real>(
    model: &Model<T>,
    g: &mut Graph<T>,
    p: &Bound,
    ex: &Example<T>,
    smoothing: f64,
    ctx: &mut Ctx,
) -> Result<Var> {
    let out = model.forward(g, p, ex, ctx)?;
    let mut loss = smoothed_ce(g, out.text.logits, &out.text.targets, smoothing, Some(PAD_ID))?;
    if let Some(h) = out.gloss {
        let gl = smoothed_ce(g, h.logits, &h.targets, smoothing, None)?;
        loss = g.add(loss, gl)?;
    }
    Ok(loss)
}

/// Mean loss over a dataset without dropout.
pub fn mean_loss<T: Real>(model: &Model<T>, data: &[Prepared<T>], smoothing: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("mean_loss", "empty dataset"));
    }
    let mut total = 0.0;
    for item in data {
        let mut g = Graph::new();
        let p = model.params().bind_frozen(&mut g);
        let l = example_loss(model, &mut g, &p, &item.example(), smoothing, &mut Ctx::eval())?;
        total += g.value(l).data()[0].as_f64();
    }
    Ok(total / data.len() as f64)
}

fn accumulate<T: Real>(acc: &mut [Option<Tensor<T>>], g: &Graph<T>, p: &Bound) {
    for (slot, &v) in acc.iter_mut().zip(p.vars()) {
        if let Some(grad) = g.grad(v) {
            match slot {
                Some(t) => {
                    for (a, &b) in t.data_mut().iter_mut().zip(grad.data()) {
                        *a = *a + b;
                    }
                }
                None => *slot = Some(grad.clone()),
            }
        }
    }
}

/// Epoch loop with seeded shuffling, mini-batch Adam, plateau halving and
/// early stopping, starting from the model's configured learning rate. On return the model holds the parameters of the best
/// validation epoch.
pub fn train<T: Real>(model: &mut Model<T>, train: &Dataset, val: &Dataset, schedule: &TrainSchedule) -> Result<TrainHistory> {
    schedule.validate()?;
    check_compatible(model, train)?;
    check_compatible(model, val)?;
    if !(model.config().learning_rate > 0.0) {
        return Err(Error::invalid("train", "learning rate must be positive"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("train", "train and validation sets must be non-empty"));
    }
    let train_items: Vec<Prepared<T>> = train.records.iter().map(Prepared::new).collect();
    let val_items: Vec<Prepared<T>> = val.records.iter().map(Prepared::new).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    dropout_rng.set_stream(1);
    let dropout = model.config().dropout;
    let weight_decay = model.config().weight_decay;
    let mut adam = Adam::new(model.params());
    let mut ctl = PlateauController::new(schedule, model.config().learning_rate);
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    let mut epochs = Vec::new();
    let mut best_params = model.params().clone();
    let mut stop_reason = StopReason::MaxEpochs;

    'epochs: for epoch in 0..schedule.max_epochs {
        let started = Instant::now();
        let lr = ctl.lr();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let mut acc: Vec<Option<Tensor<T>>> = vec![None; model.params().len()];
            for &i in batch {
                let mut g = Graph::new();
                let p = model.params().bind(&mut g);
                let mut ctx = Ctx::train(&mut dropout_rng, dropout);
                let step = example_loss(model, &mut g, &p, &train_items[i].example(), schedule.label_smoothing, &mut ctx)
                    .and_then(|l| {
                        let lv = g.value(l).data()[0].as_f64();
                        if !lv.is_finite() {
                            return Err(Error::NonFinite { op: "training loss" });
                        }
                        g.backward(l)?;
                        Ok(lv)
                    });
                match step {
                    Ok(lv) => loss_sum += lv,
                    Err(e @ Error::NonFinite { .. }) => {
                        stop_reason = StopReason::Diverged {
                            epoch,
                            msg: format!("{e} on record {}", train.records[i].index),
                        };
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
                accumulate(&mut acc, &g, &p);
            }
            let inv = T::of(1.0 / batch.len() as f64);
            for t in acc.iter_mut().flatten() {
                for v in t.data_mut() {
                    *v = *v * inv;
                }
            }
            if let Err(e) = adam.step(model.params_mut(), &acc, lr, weight_decay) {
                stop_reason = StopReason::Diverged { epoch, msg: e.to_string() };
                break 'epochs;
            }
        }
        let train_loss = loss_sum / train_items.len() as f64;
        let val_loss = match mean_loss(model, &val_items, schedule.label_smoothing) {
            Err(Error::NonFinite { .. }) => f64::NAN,
            other => other?,
        };
        if !val_loss.is_finite() {
            stop_reason = StopReason::Diverged {
                epoch,
                msg: "non-finite validation loss".into(),
            };
            break;
        }
        let decision = ctl.observe(epoch, val_loss);
        if decision.improved {
            best_params = model.params().clone();
        }
        let seconds = started.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {lr:e} ({seconds:.1}s)");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds,
        });
        if decision.stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    *model.params_mut() = best_params;
    Ok(TrainHistory {
        epochs,
        stop_reason,
        best_epoch: ctl.best_epoch(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTranslation {
    pub index: u32,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub gloss_hypothesis: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: BleuReport,
    pub translations: Vec<SampleTranslation>,
}

fn strip_special(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().filter(|&i| !matches!(i, PAD_ID | SOS_ID | EOS_ID)).collect()
}

/// Greedy translation of every record and corpus BLEU-1..4 against the
/// reference text. Side-effect free.
pub fn evaluate<T: Real>(model: &Model<T>, ds: &Dataset) -> Result<Evaluation> {
    let c = model.config();
    if ds.gloss_vocab.len() != c.gloss_vocab || ds.text_vocab.len() != c.text_vocab {
        return Err(Error::Mismatch("dataset vocabularies do not match the model".into()));
    }
    let mut hyps = Vec::with_capacity(ds.len());
    let mut refs = Vec::with_capacity(ds.len());
    let mut translations = Vec::with_capacity(ds.len());
    for r in &ds.records {
        let out = model.translate(&r.frames.frames().cast::<T>())?;
        let hyp = strip_special(&out.text);
        let reference = r.text().to_vec();
        translations.push(SampleTranslation {
            index: r.index,
            reference: ds.text_vocab.decode(&reference),
            hypothesis: ds.text_vocab.decode(&hyp),
            gloss_hypothesis: out.gloss.map(|gl| {
                gl.iter()
                    .map(|&id| ds.gloss_vocab.token(id).unwrap_or("<blank>").to_string())
                    .collect()
            }),
        });
        hyps.push(hyp);
        refs.push(reference);
    }
    Ok(Evaluation {
        report: bleu(&hyps, &refs, 4)?,
        translations,
    })
}
