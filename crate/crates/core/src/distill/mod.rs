//! Toy-scale knowledge distillation with forward-KLD, reverse-KLD and SeqKD
//! objectives, trained in 64-bit with hand-written reverse-mode gradients.

pub mod backprop;
pub mod gradcheck;
pub mod loss;
pub mod params;
pub mod train;

pub use backprop::{backward, batch_loss, forward_logits, Example};
pub use gradcheck::{grad_check, relative_error, ClassCheck, Differentiable, GradCheckReport, LinearSoftmax, ModelObjective};
pub use loss::{cross_entropy_grad, forward_kld_loss, kld_grad, reverse_kld_loss, LossSpec, Objective};
pub use params::{ParamClass, Params, TensorSpec};
pub use train::{
    seqkd_corpus, smoothed, train_language_model, train_student, write_loss_csv, Adam, DistillConfig, Method,
    TrainOutcome,
};
