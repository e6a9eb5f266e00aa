//! Loss, optimiser, schedule, training loop and BLEU evaluation.

mod adam;
mod bleu;
mod loss;
mod report;
mod schedule;
mod trainer;

pub use adam::Adam;
pub use bleu::{bleu, brevity_penalty, BleuReport};
pub use loss::smoothed_ce;
pub use report::{bleu_csv, history_csv, timing_csv, translations_csv};
pub use schedule::{EpochDecision, PlateauController, TrainSchedule};
pub use trainer::{
    check_compatible, evaluate, example_loss, mean_loss, train, EpochRecord, Evaluation, Prepared, SampleTranslation,
    StopReason, TrainHistory,
};
