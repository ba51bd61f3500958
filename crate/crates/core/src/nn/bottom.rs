use rand::Rng;

use super::layer::{backward_stack, forward_stack, Activation, Dense, DenseGrad, LayerTape};
use crate::error::{Error, Result};

/// A client's local network from its raw features to an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct BottomModel {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottomTape {
    layers: Vec<LayerTape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottomGrad {
    pub layers: Vec<DenseGrad>,
}

impl BottomModel {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("bottom model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    format!("layer input of {}", pair[0].output_dim()),
                    pair[1].input_dim(),
                ));
            }
        }
        let model = BottomModel { layers };
        if model.output_dim() >= model.input_dim() {
            log::warn!(
                "bottom model embedding ({}) is not smaller than its input ({})",
                model.output_dim(),
                model.input_dim()
            );
        }
        Ok(model)
    }

    /// Builds `input -> sizes[0] -> ... ` with the given activations.
    pub fn init<R: Rng + ?Sized>(input: usize, sizes: &[(usize, Activation)], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut prev = input;
        for &(out, act) in sizes {
            layers.push(Dense::init(prev, out, act, rng));
            prev = out;
        }
        BottomModel::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x_masked: &[f64]) -> Result<(Vec<f64>, BottomTape)> {
        if x_masked.len() != self.input_dim() {
            return Err(Error::shape(format!("input of length {}", self.input_dim()), x_masked.len()));
        }
        let (out, layers) = forward_stack(&self.layers, x_masked)?;
        Ok((out, BottomTape { layers }))
    }

    /// Gradient for every layer and with respect to the (masked) input.
    pub fn backward(&self, tape: &BottomTape, grad_embedding: &[f64]) -> Result<(BottomGrad, Vec<f64>)> {
        if grad_embedding.len() != self.output_dim() {
            return Err(Error::shape(
                format!("embedding gradient of length {}", self.output_dim()),
                grad_embedding.len(),
            ));
        }
        let (layers, dx) = backward_stack(&self.layers, &tape.layers, grad_embedding)?;
        Ok((BottomGrad { layers }, dx))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl BottomGrad {
    pub fn zeros_like(model: &BottomModel) -> Self {
        BottomGrad {
            layers: model.layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    pub fn accumulate(&mut self, scale: f64, other: &BottomGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.accumulate(scale, b);
        }
    }

    /// Tensors in the same order as [`BottomModel::params_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weights.data.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::Matrix;
    use crate::rng::{stream, Stream};

    #[test]
    fn identity_linear_layer_is_identity() {
        let layer = Dense::new(Matrix::identity(3), vec![0.0; 3], Activation::Linear).unwrap();
        let model = BottomModel { layers: vec![layer] };
        let (out, _) = model.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_input_relu_zero_bias() {
        let mut rng = stream(1, Stream::Init);
        let model = BottomModel::init(5, &[(4, Activation::Relu), (2, Activation::Relu)], &mut rng).unwrap();
        assert_eq!(model.forward(&[0.0; 5]).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn one_layer_matches_direct_arithmetic() {
        let mut rng = stream(2, Stream::Init);
        let model = BottomModel::init(4, &[(2, Activation::Linear)], &mut rng).unwrap();
        let x = [0.3, -1.2, 2.0, 0.7];
        let (out, _) = model.forward(&x).unwrap();
        let w = &model.layers[0].weights;
        for r in 0..2 {
            let expect: f64 = (0..4).map(|c| w.get(r, c) * x[c]).sum::<f64>() + model.layers[0].bias[r];
            assert!((out[r] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = stream(3, Stream::Init);
        let model = BottomModel::init(3, &[(4, Activation::Tanh), (2, Activation::Linear)], &mut rng).unwrap();
        let (_, tape) = model.forward(&[1.0, 2.0, 3.0]).unwrap();
        let (g, dx) = model.backward(&tape, &[0.0, 0.0]).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert_eq!(dx, vec![0.0; 3]);
        assert!(matches!(model.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_unchained_layers() {
        let mut rng = stream(4, Stream::Init);
        let a = Dense::init(3, 4, Activation::Relu, &mut rng);
        let b = Dense::init(5, 2, Activation::Relu, &mut rng);
        assert!(matches!(BottomModel::new(vec![a, b]), Err(Error::Shape(_))));
    }
}
