use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer over an ordered list of parameter tensors. Moment buffers are
/// created on the first step and must keep the same shapes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} gradient tensors", params.len()), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!("gradient {i} of length {}", p.len()), g.len()));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
                    return Err(Error::Shape("parameter shapes changed between Adam steps".into()));
                }
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        p[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
                return Ok(());
            }
        }
        self.t += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        opt.step(vec![&mut p], &[&[2.0]]).unwrap();
        assert_eq!(p, vec![0.0]);
        opt.step(vec![&mut p], &[&[0.0]]).unwrap();
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        for scale in [1e-3, 1.0, 1e3] {
            let mut p = vec![0.0; 3];
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.03);
            opt.step(vec![&mut p], &[&[scale, scale, scale]]).unwrap();
            for v in &p {
                assert!((v + 0.03).abs() < 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![0.7, -0.2];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        opt.step(vec![&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.7, -0.2]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![0.0; 2];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        assert!(matches!(opt.step(vec![&mut p], &[&[1.0]]), Err(Error::Shape(_))));
    }
}
