//! Loss, optimizer and the supervised and adversarial training loops.

mod loops;
mod loss;
mod rmsprop;

pub use loops::{
    train_adversarial, train_adversarial_observed, train_supervised, train_supervised_observed, AdversarialRun,
    LossRecord, Phase, PhaseEvent, TrainConfig,
};
pub use loss::{bce_naive, bce_with_logits};
pub use rmsprop::{RmspropConfig, RmspropState, RmspropVariant};
