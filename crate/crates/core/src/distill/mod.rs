//! Losses, schedules, the optimizer and the three training pipelines.

pub mod adam;
pub mod loss;
pub mod schedule;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use loss::{cm_loss, vanilla_kd_loss};
pub use schedule::{alpha_schedule, lr_schedule, Anneal, LrPlan, LrSettings, SchedulerKind};
pub use train::{
    train_student_cm, train_student_kd, train_student_plain, train_teacher, EpochRecord, Pipeline, TrainPlan,
    TrainedPair, EVAL_CHUNK,
};
