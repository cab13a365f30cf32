use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{LinearClassifier, Parameter, Parameterized, ProjectionHead};
use crate::error::Result;
use crate::hierarchy::AnchorSet;
use crate::linalg::{softmax, Matrix};

/// Everything trainable: `G`, `F` and the anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionModel {
    pub head: ProjectionHead,
    pub classifier: LinearClassifier,
    pub anchors: AnchorSet,
}

impl AttributionModel {
    /// Head `d -> hidden -> latent` (a single linear layer when `hidden` is `None`).
    pub fn new<R: Rng>(input_dim: usize, hidden: Option<usize>, latent_dim: usize, rng: &mut R) -> Result<Self> {
        let dims: Vec<usize> = match hidden {
            Some(h) => vec![input_dim, h, latent_dim],
            None => vec![input_dim, latent_dim],
        };
        Ok(Self {
            head: ProjectionHead::new(&dims, rng)?,
            classifier: LinearClassifier::new(latent_dim),
            anchors: AnchorSet::new(latent_dim),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        let z = self.head.project(features)?;
        self.classifier.forward(&z)
    }

    /// Softmax probabilities, one row per feature.
    pub fn probabilities(&self, features: &Matrix) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits(features)?;
        Ok(logits.iter_rows().map(softmax).collect())
    }
}

impl Parameterized for AttributionModel {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.head.params();
        v.extend(self.classifier.params());
        v.extend(self.anchors.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.head.params_mut();
        v.extend(self.classifier.params_mut());
        v.extend(self.anchors.params_mut());
        v
    }
}
