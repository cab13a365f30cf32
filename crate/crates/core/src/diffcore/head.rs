use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::param::{Parameter, Parameterized};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    weight: Parameter,
    bias: Parameter,
}

/// Feed-forward projection `z = G(f)`: affine layers (`x W + b`, weights
/// stored `d_in x d_out`) with `tanh` between consecutive layers. The last
/// layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    layers: Vec<Layer>,
}

/// Intermediates recorded by [`ProjectionHead::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    // input to each layer
    inputs: Vec<Matrix>,
    // tanh outputs feeding layers 1.., kept for the derivative 1 - h^2
    activations: Vec<Matrix>,
}

impl ProjectionHead {
    /// `dims = [d, h_1, ..., d']`. Weights ~ N(0, 1/d_in), biases zero.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid head dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let scale = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Layer {
                    weight: Parameter::new(
                        format!("head.{i}.weight"),
                        Matrix::from_vec(w[0], w[1], data).expect("shape"),
                    ),
                    bias: Parameter::new(format!("head.{i}.bias"), Matrix::zeros(1, w[1])),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a head from explicit `(weight, bias)` pairs.
    pub fn from_layers(layers: Vec<(Matrix, Vec<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("projection head needs at least one layer".into()));
        }
        let mut out = Vec::with_capacity(layers.len());
        let mut prev_out: Option<usize> = None;
        for (i, (w, b)) in layers.into_iter().enumerate() {
            if w.cols() != b.len() {
                return Err(Error::Input(format!(
                    "layer {i}: weight has {} outputs, bias has {}",
                    w.cols(),
                    b.len()
                )));
            }
            if let Some(p) = prev_out {
                if p != w.rows() {
                    return Err(Error::Input(format!(
                        "layer {i}: input width {} does not follow previous output {p}",
                        w.rows()
                    )));
                }
            }
            prev_out = Some(w.cols());
            out.push(Layer {
                weight: Parameter::new(format!("head.{i}.weight"), w),
                bias: Parameter::new(format!("head.{i}.bias"), Matrix::row_vector(&b)),
            });
        }
        Ok(Self { layers: out })
    }

    pub(crate) fn from_params(params: Vec<(Parameter, Parameter)>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Input("projection head needs at least one layer".into()));
        }
        Ok(Self {
            layers: params
                .into_iter()
                .map(|(weight, bias)| Layer { weight, bias })
                .collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape().0
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.shape().1
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Projects a batch of features (one per row).
    pub fn forward(&self, features: &Matrix) -> Result<(Matrix, HeadTrace)> {
        if features.cols() != self.input_dim() {
            return Err(Error::Input(format!(
                "feature dim {} does not match head input dim {}",
                features.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut x = features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = x.matmul(layer.weight.values());
            y.add_row_broadcast(layer.bias.values().as_slice());
            inputs.push(x);
            if i + 1 < self.layers.len() {
                y.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
                activations.push(y.clone());
            }
            x = y;
        }
        Ok((
            x,
            HeadTrace {
                inputs,
                activations,
            },
        ))
    }

    pub fn project(&self, features: &Matrix) -> Result<Matrix> {
        self.forward(features).map(|(z, _)| z)
    }

    /// Accumulates parameter gradients given `dL/dz`; returns `dL/df`.
    pub fn backward(&mut self, trace: &HeadTrace, dz: &Matrix) -> Matrix {
        let mut delta = dz.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &trace.inputs[i];
            let layer = &mut self.layers[i];
            layer.weight.accumulate(&input.t_matmul(&delta));
            layer.bias.accumulate(&Matrix::row_vector(&delta.column_sums()));
            let mut dx = delta.matmul_t(layer.weight.values());
            if i > 0 {
                let h = &trace.activations[i - 1];
                for (g, a) in dx.as_mut_slice().iter_mut().zip(h.as_slice()) {
                    *g *= 1.0 - a * a;
                }
            }
            delta = dx;
        }
        delta
    }
}

impl Parameterized for ProjectionHead {
    fn params(&self) -> Vec<&Parameter> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}
