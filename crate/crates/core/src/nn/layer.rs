use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Values cached by [`Dense::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTape {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrad {
            weights: Matrix::zeros(layer.weights.rows, layer.weights.cols),
            bias: vec![0.0; layer.bias.len()],
        }
    }

    /// `self += scale * other`
    pub fn accumulate(&mut self, scale: f64, other: &DenseGrad) {
        super::matrix::axpy(&mut self.weights.data, scale, &other.weights.data);
        super::matrix::axpy(&mut self.bias, scale, &other.bias);
    }
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows {
            return Err(Error::shape(format!("bias of length {}", weights.rows), bias.len()));
        }
        Ok(Dense {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights and zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output).map(|_| rng.random_range(-limit..limit)).collect();
        Dense {
            weights: Matrix {
                rows: output,
                cols: input,
                data,
            },
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, LayerTape)> {
        let mut pre = self.weights.matvec(x)?;
        for (p, b) in pre.iter_mut().zip(&self.bias) {
            *p += b;
        }
        let out = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok((
            out,
            LayerTape {
                input: x.to_vec(),
                pre,
            },
        ))
    }

    /// Returns the parameter gradient and the gradient with respect to the input.
    pub fn backward(&self, tape: &LayerTape, upstream: &[f64]) -> Result<(DenseGrad, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape(format!("upstream of length {}", self.output_dim()), upstream.len()));
        }
        let delta: Vec<f64> = upstream
            .iter()
            .zip(&tape.pre)
            .map(|(&u, &z)| u * self.activation.derivative(z))
            .collect();
        let mut weights = Matrix::zeros(self.weights.rows, self.weights.cols);
        weights.add_outer(1.0, &delta, &tape.input);
        let grad_input = self.weights.matvec_t(&delta)?;
        Ok((DenseGrad { weights, bias: delta }, grad_input))
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights.data, &mut self.bias]
    }
}

/// Forward through a stack of layers, keeping every tape.
pub fn forward_stack(layers: &[Dense], x: &[f64]) -> Result<(Vec<f64>, Vec<LayerTape>)> {
    let mut tapes = Vec::with_capacity(layers.len());
    let mut cur = x.to_vec();
    for layer in layers {
        let (out, tape) = layer.forward(&cur)?;
        tapes.push(tape);
        cur = out;
    }
    if cur.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite activation in forward pass".into()));
    }
    Ok((cur, tapes))
}

pub fn backward_stack(layers: &[Dense], tapes: &[LayerTape], upstream: &[f64]) -> Result<(Vec<DenseGrad>, Vec<f64>)> {
    if tapes.len() != layers.len() {
        return Err(Error::shape(format!("{} layer tapes", layers.len()), tapes.len()));
    }
    let mut grads = Vec::with_capacity(layers.len());
    let mut cur = upstream.to_vec();
    for (layer, tape) in layers.iter().zip(tapes).rev() {
        let (g, dx) = layer.backward(tape, &cur)?;
        grads.push(g);
        cur = dx;
    }
    grads.reverse();
    Ok((grads, cur))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations() {
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        for act in [Activation::Sigmoid, Activation::Tanh] {
            let z = 0.3;
            let fd = (act.apply(z + 1e-6) - act.apply(z - 1e-6)) / 2e-6;
            assert!((fd - act.derivative(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let layer = Dense::new(Matrix::from_vec(2, 3, vec![0.1; 6]).unwrap(), vec![0.0; 2], Activation::Linear).unwrap();
        let x = [1.0, -2.0, 3.0];
        let (_, tape) = layer.forward(&x).unwrap();
        let (g, dx) = layer.backward(&tape, &[2.0, -1.0]).unwrap();
        assert_eq!(g.weights.data, vec![2.0, -4.0, 6.0, -1.0, 2.0, -3.0]);
        assert_eq!(g.bias, vec![2.0, -1.0]);
        assert!((dx[0] - 0.1).abs() < 1e-15);
    }
}
