//! Two-level generator taxonomy, learnable fine/coarse anchors and batch prototypes.

mod anchors;
mod prototypes;
mod taxonomy;

pub use anchors::AnchorSet;
pub use prototypes::{compute_prototypes, CoarseProto, FineProto, PrototypeSet};
pub(crate) use anchors::gram_deviation;
pub use taxonomy::{ModelEntry, NewModel, Registration, Taxonomy};
