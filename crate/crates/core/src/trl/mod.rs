//! External language model, soft targets, and the TEL/TRL objectives.

mod elm;
mod loss;
mod targets;

pub use elm::{
    apply_temperature, train_elm, ElmConfig, ExternalLanguageModel, Interpolation, NgramElm,
};
pub use loss::{ce_loss, combined_loss, kl_soft_loss, tel_term, trl_term, LossReport, Objective};
pub use targets::{precompute_soft_targets, soft_targets, SoftTargetSet, SoftTargetStore};
