//! Hand-derived forward/backward passes for the trainable sub-model: the
//! projection head, the linear classifier, and the Adam optimizer, plus a
//! central-difference gradient checker.

mod adam;
mod classifier;
mod gradcheck;
mod head;
mod param;

pub use adam::Adam;
pub use classifier::LinearClassifier;
pub use gradcheck::{grad_check, Evaluation, GradCheckReport};
pub use head::{HeadTrace, ProjectionHead};
pub use param::{Parameter, Parameterized};
