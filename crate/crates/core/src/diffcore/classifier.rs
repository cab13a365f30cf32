use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::param::{Parameter, Parameterized};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `logits = z W^T + b` with one weight row per known class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    weight: Parameter,
    bias: Parameter,
}

impl LinearClassifier {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            weight: Parameter::new("classifier.weight", Matrix::zeros(0, latent_dim)),
            bias: Parameter::new("classifier.bias", Matrix::zeros(0, 1)),
        }
    }

    pub fn from_weights(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::Input(format!(
                "{} weight rows but {} biases",
                weight.rows(),
                bias.len()
            )));
        }
        let n = bias.len();
        Ok(Self {
            weight: Parameter::new("classifier.weight", weight),
            bias: Parameter::new("classifier.bias", Matrix::from_vec(n, 1, bias)?),
        })
    }

    pub(crate) fn from_params(weight: Parameter, bias: Parameter) -> Result<Self> {
        if weight.shape().0 != bias.shape().0 || bias.shape().1 != 1 {
            return Err(Error::Input("classifier weight/bias shapes disagree".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape().0
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.shape().1
    }

    pub fn weight(&self) -> &Parameter {
        &self.weight
    }

    pub fn bias(&self) -> &Parameter {
        &self.bias
    }

    /// Appends `n_new` rows drawn from N(0, 1/d'); biases start at zero.
    pub fn grow<R: Rng>(&mut self, n_new: usize, rng: &mut R) {
        let d = self.latent_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let data = (0..n_new * d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let rows = Matrix::from_vec(n_new, d, data).expect("shape");
        self.weight.append_rows(&rows).expect("matching width");
        self.bias
            .append_rows(&Matrix::zeros(n_new, 1))
            .expect("matching width");
    }

    pub fn forward(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.latent_dim() {
            return Err(Error::Input(format!(
                "latent dim {} does not match classifier dim {}",
                z.cols(),
                self.latent_dim()
            )));
        }
        let mut logits = z.matmul_t(self.weight.values());
        logits.add_row_broadcast(self.bias.values().as_slice());
        Ok(logits)
    }

    /// Accumulates parameter gradients; returns `dL/dz`.
    pub fn backward(&mut self, z: &Matrix, dlogits: &Matrix) -> Matrix {
        self.weight.accumulate(&dlogits.t_matmul(z));
        let db = Matrix::from_vec(dlogits.cols(), 1, dlogits.column_sums()).expect("shape");
        self.bias.accumulate(&db);
        dlogits.matmul(self.weight.values())
    }
}

impl Parameterized for LinearClassifier {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}
