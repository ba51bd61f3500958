//! Rate check on a strongly convex vertical problem: L2-regularized
//! logistic regression with features split across parties, trained by
//! minibatch SGD with step `1 / (rho (t + t0))`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, Matrix};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub n_samples: usize,
    /// Features held by each party.
    pub party_dims: Vec<usize>,
    pub rho: f64,
    pub batch_size: usize,
    pub horizons: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            n_samples: 500,
            party_dims: vec![3, 3],
            rho: 1.0,
            batch_size: 4,
            horizons: vec![50, 100, 200, 400],
            repetitions: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    /// `(T, mean excess loss)` per horizon.
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of log excess loss against log T.
    pub slope: f64,
    pub optimum: f64,
    pub t0: f64,
}

struct Problem {
    x: Matrix,
    y: Vec<f64>,
    blocks: Vec<(usize, usize)>,
    rho: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Problem {
    fn generate(cfg: &ConvergenceConfig) -> Result<Self> {
        let d: usize = cfg.party_dims.iter().sum();
        if d == 0 || cfg.n_samples == 0 {
            return Err(Error::Config("convergence problem needs samples and features".into()));
        }
        let mut rng = stream(cfg.seed, Stream::Data);
        let truth: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let data: Vec<f64> = (0..cfg.n_samples * d).map(|_| rng.sample(StandardNormal)).collect();
        let x = Matrix::from_vec(cfg.n_samples, d, data)?;
        let y = (0..cfg.n_samples)
            .map(|i| f64::from(rng.random::<f64>() < sigmoid(dot(x.row(i), &truth))))
            .collect();
        let mut blocks = Vec::new();
        let mut start = 0;
        for &w in &cfg.party_dims {
            blocks.push((start, start + w));
            start += w;
        }
        Ok(Problem {
            x,
            y,
            blocks,
            rho: cfg.rho,
        })
    }

    /// Server-side logit: the sum of each party's partial product.
    fn logit(&self, w: &[f64], i: usize) -> f64 {
        let row = self.x.row(i);
        self.blocks.iter().map(|&(a, b)| dot(&row[a..b], &w[a..b])).sum()
    }

    fn objective(&self, w: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let loss: f64 = (0..self.y.len())
            .map(|i| softplus(self.logit(w, i)) - self.y[i] * self.logit(w, i))
            .sum();
        loss / n + 0.5 * self.rho * dot(w, w)
    }

    /// Gradient over `rows`; each party computes its own block from the
    /// shared residual.
    fn gradient(&self, w: &[f64], rows: &[usize]) -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|v| self.rho * v).collect();
        let scale = 1.0 / rows.len() as f64;
        for &i in rows {
            let r = (sigmoid(self.logit(w, i)) - self.y[i]) * scale;
            for &(a, b) in &self.blocks {
                for j in a..b {
                    g[j] += r * self.x.get(i, j);
                }
            }
        }
        g
    }

    /// Upper bound on the smoothness constant.
    fn smoothness(&self) -> f64 {
        let n = self.y.len() as f64;
        let mean_sq: f64 = (0..self.y.len()).map(|i| dot(self.x.row(i), self.x.row(i))).sum::<f64>() / n;
        0.25 * mean_sq + self.rho
    }

    fn minimize(&self) -> f64 {
        let all: Vec<usize> = (0..self.y.len()).collect();
        let step = 1.0 / self.smoothness();
        let mut w = vec![0.0; self.x.cols];
        for _ in 0..20_000 {
            let g = self.gradient(&w, &all);
            if dot(&g, &g).sqrt() < 1e-13 {
                break;
            }
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= step * gj;
            }
        }
        self.objective(&w)
    }
}

fn fit_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceResult> {
    if cfg.horizons.len() < 2 || cfg.repetitions == 0 || cfg.batch_size == 0 || cfg.rho <= 0.0 {
        return Err(Error::Config(
            "convergence study needs two horizons, a repetition, a batch and rho > 0".into(),
        ));
    }
    let problem = Problem::generate(cfg)?;
    let optimum = problem.minimize();
    let t0 = (problem.smoothness() / cfg.rho).ceil();
    let n = problem.y.len();
    let mut points = Vec::with_capacity(cfg.horizons.len());
    for &horizon in &cfg.horizons {
        let mut total = 0.0;
        for rep in 0..cfg.repetitions {
            let mut rng = stream(cfg.seed.wrapping_add(1 + rep as u64), Stream::Batches);
            let mut w = vec![0.0; problem.x.cols];
            for t in 0..horizon {
                let rows: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect();
                let g = problem.gradient(&w, &rows);
                let eta = 1.0 / (cfg.rho * (t as f64 + t0));
                for (wj, gj) in w.iter_mut().zip(&g) {
                    *wj -= eta * gj;
                }
            }
            total += problem.objective(&w) - optimum;
        }
        points.push((horizon, (total / cfg.repetitions as f64).max(f64::MIN_POSITIVE)));
    }
    Ok(ConvergenceResult {
        slope: fit_slope(&points),
        points,
        optimum,
        t0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(usize, f64)> = [50, 100, 200, 400].iter().map(|&t| (t, 3.0 / t as f64)).collect();
        assert!((fit_slope(&pts) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_gradient_descent_reaches_a_stationary_point() {
        let p = Problem::generate(&ConvergenceConfig::default()).unwrap();
        let f = p.minimize();
        assert!(f > 0.0 && f < std::f64::consts::LN_2);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
