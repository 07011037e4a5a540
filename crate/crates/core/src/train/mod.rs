//! Objectives, optimizer, lifecycle stages and online orchestration.

pub mod adam;
pub mod classifier;
pub mod config;
pub mod loss;
pub mod model;
pub mod online;
pub mod stages;

pub use adam::Adam;
pub use classifier::Classifier;
pub use config::{Stage, TrainConfig};
pub use loss::{classification_loss, contrastive_loss, total_loss};
pub use model::{Model, ModelGrads, Objective};
pub use online::{run_online_sessions, sweep_lambda, RunInputs, SessionMode, SessionSpec};
pub use stages::{contrastive_finetune, evaluate, stage1_post_pretrain, stage2_train, stage3_label_free_update, MetricsRow, StageContext};
