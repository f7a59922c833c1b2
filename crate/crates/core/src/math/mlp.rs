use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// One affine map; `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Fully-connected network: activations follow every hidden layer, the
/// output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activations: Vec<Activation>,
}

impl MlpParams {
    /// Symmetric uniform fan-in initialisation, `U(-1/√in, 1/√in)`.
    pub fn init(dims: &[usize], activation: Activation, rng: &mut SeededRng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_fn((w[1], w[0]), |_| bound * (2.0 * rng.uniform() - 1.0));
                let bias = Array1::from_shape_fn(w[1], |_| bound * (2.0 * rng.uniform() - 1.0));
                Layer { weight, bias }
            })
            .collect::<Vec<_>>();
        let activations = vec![activation; layers.len() - 1];
        Self { layers, activations }
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Layer { weight: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect::<Vec<_>>();
        let activations = vec![activation; layers.len() - 1];
        Self { layers, activations }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer { weight: Array2::zeros(l.weight.raw_dim()), bias: Array1::zeros(l.bias.len()) })
            .collect();
        Self { layers, activations: self.activations.clone() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.nrows()));
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Checks that consecutive layer dimensions chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.activations.len() + 1 != self.layers.len() {
            return Err(Error::Config("MLP needs one activation per hidden layer".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].weight.nrows() != pair[1].weight.ncols() {
                return Err(Error::Dimension { expected: pair[0].weight.nrows(), got: pair[1].weight.ncols() });
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::Dimension { expected: l.weight.nrows(), got: l.bias.len() });
            }
        }
        Ok(())
    }

    /// Parameters flattened layer by layer: weight (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: flat.len() });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        Ok(self.forward_batch(&row)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass over a `P × in` batch.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.ncols() });
        }
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight.t());
            h += &l.bias.view().insert_axis(Axis(0));
            if let Some(&act) = self.activations.get(i) {
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(h)
    }
}
