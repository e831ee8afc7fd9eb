mod config;
mod finetune;
mod log;
mod persist;
mod pseudo;
mod stage1;
mod stage2;

#[cfg(test)]
mod tests;

pub use config::{FinetuneConfig, Stage1Config, Stage2Config};
pub use finetune::{finetune, run_finetune, FinetuneState, FINETUNE_COLUMNS};
pub use log::{LossLog, TrainEvent};
pub use pseudo::{build_pseudo_gt, PseudoGroundTruth};
pub use stage1::{code_key, run_stage1, stage1_train, Stage1State, STAGE1_COLUMNS};
pub use stage2::{code_gap, discriminator_loss, run_stage2, stage2_train, Stage2Item, Stage2State, STAGE2_COLUMNS};
