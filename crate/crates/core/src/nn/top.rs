use rand::Rng;

use super::layer::{backward_stack, forward_stack, Activation, Dense, DenseGrad, LayerTape};
use super::loss::{evaluate, LossKind};
use super::matrix::hadamard;
use crate::error::{Error, Result};

/// Server-side model: one interactive weight vector per client, applied
/// elementwise to that client's embedding, followed by the dense stack
/// `alpha0` over the concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct TopModel {
    pub interactive: Vec<Vec<f64>>,
    pub alpha0: Vec<Dense>,
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopTape {
    pub zs: Vec<Vec<f64>>,
    gs: Option<Vec<Vec<f64>>>,
    layers: Vec<LayerTape>,
    pub prediction: Vec<f64>,
}

/// Gradients of one sample's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TopGrads {
    pub loss: f64,
    /// `dL/dz_m` for each client.
    pub dz: Vec<Vec<f64>>,
    /// `dL/dw_m = dL/dz_m * g_m`; empty when the tape was built from `z` directly.
    pub dw: Vec<Vec<f64>>,
    /// `dL/dg_m = dL/dz_m * w_m`, using whatever weights the model holds.
    pub dg: Vec<Vec<f64>>,
    pub alpha0: Vec<DenseGrad>,
}

impl TopModel {
    pub fn new(interactive: Vec<Vec<f64>>, alpha0: Vec<Dense>, loss: LossKind) -> Result<Self> {
        let total: usize = interactive.iter().map(Vec::len).sum();
        if let Some(first) = alpha0.first() {
            if first.input_dim() != total {
                return Err(Error::shape(format!("alpha0 input of {total}"), first.input_dim()));
            }
        }
        for pair in alpha0.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!("layer input of {}", pair[0].output_dim()), pair[1].input_dim()));
            }
        }
        Ok(TopModel {
            interactive,
            alpha0,
            loss,
        })
    }

    /// Interactive weights drawn uniformly from `w_range`, Glorot-initialized
    /// `alpha0` with the given hidden sizes and a linear output layer.
    pub fn init<R: Rng + ?Sized>(
        embedding_dims: &[usize],
        hidden: &[(usize, Activation)],
        outputs: usize,
        loss: LossKind,
        w_range: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        let interactive = embedding_dims
            .iter()
            .map(|&d| {
                (0..d)
                    .map(|_| {
                        if w_range.0 == w_range.1 {
                            w_range.0
                        } else {
                            rng.random_range(w_range.0..w_range.1)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut prev: usize = embedding_dims.iter().sum();
        let mut alpha0 = Vec::new();
        for &(size, act) in hidden {
            alpha0.push(Dense::init(prev, size, act, rng));
            prev = size;
        }
        alpha0.push(Dense::init(prev, outputs, Activation::Linear, rng));
        TopModel::new(interactive, alpha0, loss)
    }

    pub fn clients(&self) -> usize {
        self.interactive.len()
    }

    fn check_inputs(&self, vs: &[Vec<f64>]) -> Result<()> {
        if vs.len() != self.interactive.len() {
            return Err(Error::shape(format!("{} client inputs", self.interactive.len()), vs.len()));
        }
        for (v, w) in vs.iter().zip(&self.interactive) {
            if v.len() != w.len() {
                return Err(Error::shape(format!("embedding of length {}", w.len()), v.len()));
            }
        }
        Ok(())
    }

    /// Runs `alpha0` on already weighted embeddings `z_m`.
    pub fn forward_z(&self, zs: Vec<Vec<f64>>) -> Result<(Vec<f64>, TopTape)> {
        self.check_inputs(&zs)?;
        let concat: Vec<f64> = zs.iter().flatten().copied().collect();
        let (prediction, layers) = forward_stack(&self.alpha0, &concat)?;
        Ok((
            prediction.clone(),
            TopTape {
                zs,
                gs: None,
                layers,
                prediction,
            },
        ))
    }

    /// Computes `z_m = g_m * w_m` and runs `alpha0`.
    pub fn forward(&self, gs: &[Vec<f64>]) -> Result<(Vec<f64>, TopTape)> {
        self.check_inputs(gs)?;
        let zs = gs.iter().zip(&self.interactive).map(|(g, w)| hadamard(g, w)).collect();
        let (pred, mut tape) = self.forward_z(zs)?;
        tape.gs = Some(gs.to_vec());
        Ok((pred, tape))
    }

    pub fn loss_and_grads(&self, tape: &TopTape, y: f64) -> Result<TopGrads> {
        let (loss, dpred) = evaluate(self.loss, &tape.prediction, y)?;
        let (alpha0, dconcat) = backward_stack(&self.alpha0, &tape.layers, &dpred)?;
        let mut dz = Vec::with_capacity(self.interactive.len());
        let mut offset = 0;
        for w in &self.interactive {
            dz.push(dconcat[offset..offset + w.len()].to_vec());
            offset += w.len();
        }
        let dg = dz.iter().zip(&self.interactive).map(|(d, w)| hadamard(d, w)).collect();
        let dw = match &tape.gs {
            Some(gs) => dz.iter().zip(gs).map(|(d, g)| hadamard(d, g)).collect(),
            None => Vec::new(),
        };
        Ok(TopGrads {
            loss,
            dz,
            dw,
            dg,
            alpha0,
        })
    }

    pub fn alpha0_params_mut(&mut self) -> Vec<&mut [f64]> {
        self.alpha0.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

pub fn zero_alpha0_grads(top: &TopModel) -> Vec<DenseGrad> {
    top.alpha0.iter().map(DenseGrad::zeros_like).collect()
}

pub fn alpha0_tensors(grads: &[DenseGrad]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weights.data.as_slice(), g.bias.as_slice()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::Matrix;

    fn summing_top(w: Vec<f64>) -> TopModel {
        let d = w.len();
        let sum = Dense::new(Matrix::from_vec(1, d, vec![1.0; d]).unwrap(), vec![0.0], Activation::Linear).unwrap();
        TopModel::new(vec![w], vec![sum], LossKind::Mse).unwrap()
    }

    #[test]
    fn weighted_sum_hand_example() {
        let top = summing_top(vec![3.0, 4.0]);
        let (pred, _) = top.forward(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(pred, vec![11.0]);
    }

    #[test]
    fn identity_alpha0_concatenates() {
        let ident = Dense::new(Matrix::identity(3), vec![0.0; 3], Activation::Linear).unwrap();
        let top = TopModel::new(vec![vec![1.0; 2], vec![1.0]], vec![ident], LossKind::CrossEntropy).unwrap();
        let (pred, _) = top.forward(&[vec![0.5, -1.0], vec![2.0]]).unwrap();
        assert_eq!(pred, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_weights_annihilate() {
        let top = summing_top(vec![0.0, 0.0]);
        let (pred, _) = top.forward(&[vec![7.0, -3.0]]).unwrap();
        assert_eq!(pred, vec![0.0]);
    }

    #[test]
    fn scalar_gradients_by_hand() {
        // L = (g w - y)^2 / 2 with g = 2, w = 3, y = 0.
        let top = summing_top(vec![3.0]);
        let (_, tape) = top.forward(&[vec![2.0]]).unwrap();
        let g = top.loss_and_grads(&tape, 0.0).unwrap();
        assert_eq!(g.loss, 18.0);
        assert_eq!(g.dw, vec![vec![12.0]]);
        assert_eq!(g.dg, vec![vec![18.0]]);
    }

    #[test]
    fn perfect_prediction_zero_gradients() {
        let top = summing_top(vec![1.0, 1.0]);
        let (_, tape) = top.forward(&[vec![1.0, 2.0]]).unwrap();
        let g = top.loss_and_grads(&tape, 3.0).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.dw[0].iter().chain(&g.dg[0]).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_g() {
        let top = summing_top(vec![0.3, -1.1]);
        let g = vec![0.4, 2.0];
        let (p1, _) = top.forward(&[g.clone()]).unwrap();
        let (p2, _) = top.forward(&[g.iter().map(|v| 2.5 * v).collect()]).unwrap();
        assert!((p2[0] - 2.5 * p1[0]).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_client_count() {
        let top = summing_top(vec![1.0]);
        assert!(matches!(top.forward(&[vec![1.0], vec![1.0]]), Err(Error::Shape(_))));
    }
}
