//! Continual, open-set attribution of generated-image features to their
//! source generator.
//!
//! The engine consumes fixed encoder features, projects them through a
//! small trainable head, and classifies them while a two-level taxonomy of
//! generator families shapes the latent space through learnable orthogonal
//! anchors. Old classes are protected with a herding-selected feature
//! replay bank, and open-set rejection is trained on latent mixtures of
//! different classes.

pub mod data_io;
pub mod diffcore;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod losses;
pub mod memory_bank;
pub mod model;
pub mod protocol;

pub use error::{Error, Result};

/// Dense index of a known class in registration order.
pub type ClassId = usize;
/// Dense index of a family in registration order.
pub type FamilyId = usize;
