//! Clipped-Gaussian stochastic gates for raw features and embedding slots.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateRole {
    Feature,
    Embedding,
}

/// Learnable gate means with a shared noise scale. A pinned vector always
/// yields 1, has no gradient and contributes nothing to the regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector {
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub role: GateRole,
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
}

impl GateVector {
    pub fn new(mu: Vec<f64>, sigma: f64, role: GateRole) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("gate sigma must be positive, got {sigma}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric("non-finite gate mean".into()));
        }
        Ok(GateVector {
            mu,
            sigma,
            role,
            pinned: false,
        })
    }

    pub fn constant(len: usize, mu: f64, sigma: f64, role: GateRole) -> Result<Self> {
        GateVector::new(vec![mu; len], sigma, role)
    }

    pub fn pinned_open(len: usize, sigma: f64, role: GateRole) -> Result<Self> {
        let mut gv = GateVector::new(vec![0.0; len], sigma, role)?;
        gv.pinned = true;
        Ok(gv)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `raw = mu + N(0, sigma^2)`, `values = clip(raw, 0, 1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GateSample {
        if self.pinned {
            return GateSample {
                values: vec![1.0; self.len()],
                raw: vec![f64::INFINITY; self.len()],
            };
        }
        let raw: Vec<f64> = self
            .mu
            .iter()
            .map(|&m| {
                let e: f64 = rng.sample(StandardNormal);
                m + self.sigma * e
            })
            .collect();
        let values = raw.iter().map(|&r| r.clamp(0.0, 1.0)).collect();
        GateSample { values, raw }
    }

    /// Deterministic gate values used outside training: `clip(mu, 0, 1)`.
    pub fn eval_values(&self) -> Vec<f64> {
        if self.pinned {
            return vec![1.0; self.len()];
        }
        self.mu.iter().map(|&m| m.clamp(0.0, 1.0)).collect()
    }

    /// `P(gate > 0) = Phi(mu / sigma)`.
    pub fn open_probability(&self) -> Vec<f64> {
        if self.pinned {
            return vec![1.0; self.len()];
        }
        self.mu.iter().map(|&m| normal_cdf(m / self.sigma)).collect()
    }

    /// `d/dmu Phi(mu / sigma) = phi(mu / sigma) / sigma`.
    pub fn reg_grad(&self) -> Vec<f64> {
        if self.pinned {
            return vec![0.0; self.len()];
        }
        self.mu.iter().map(|&m| normal_pdf(m / self.sigma) / self.sigma).collect()
    }

    fn reg_term(&self) -> f64 {
        if self.pinned {
            0.0
        } else {
            self.open_probability().iter().sum()
        }
    }

    pub fn selected_mask(&self, threshold: f64) -> Vec<bool> {
        self.open_probability().iter().map(|&p| p > threshold).collect()
    }

    pub fn open_count(&self, threshold: f64) -> usize {
        self.selected_mask(threshold).iter().filter(|&&s| s).count()
    }
}

/// Sum of open probabilities over both gate sets of one client.
pub fn reg_value(feature: &GateVector, embedding: &GateVector) -> f64 {
    feature.reg_term() + embedding.reg_term()
}

/// Passes the upstream gradient through the clip only where `0 < raw < 1`.
pub fn gate_chain_grad(sample: &GateSample, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != sample.raw.len() {
        return Err(Error::shape(format!("upstream of length {}", sample.raw.len()), upstream.len()));
    }
    Ok(sample
        .raw
        .iter()
        .zip(upstream)
        .map(|(&r, &u)| if r > 0.0 && r < 1.0 { u } else { 0.0 })
        .collect())
}

/// Mean of `C` per-sample chain-rule terms plus `lambda * reg_grad`.
pub fn mc_grad_mu(gv: &GateVector, chain_grads: &[Vec<f64>], lambda: f64) -> Result<Vec<f64>> {
    if chain_grads.is_empty() {
        return Err(Error::Config("Monte-Carlo estimator needs at least one sample".into()));
    }
    let c = chain_grads.len() as f64;
    let mut out = vec![0.0; gv.len()];
    for g in chain_grads {
        if g.len() != gv.len() {
            return Err(Error::shape(format!("chain gradient of length {}", gv.len()), g.len()));
        }
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    for (o, r) in out.iter_mut().zip(gv.reg_grad()) {
        *o = *o / c + lambda * r;
    }
    Ok(out)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    /// Composite Simpson rule, used as the integration oracle.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn gv(mu: Vec<f64>) -> GateVector {
        GateVector::new(mu, 0.5, GateRole::Feature).unwrap()
    }

    #[test]
    fn degenerate_noise_and_saturation() {
        let mut rng = stream(1, Stream::Gates(0));
        let tiny = GateVector::new(vec![0.5; 4], 1e-12, GateRole::Feature).unwrap();
        for v in tiny.sample(&mut rng).values {
            assert!((v - 0.5).abs() < 1e-9);
        }
        let s = gv(vec![5.0; 100]).sample(&mut rng);
        assert!(s.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn clipped_mean_matches_integral() {
        let g = gv(vec![0.0]);
        let mut rng = stream(2, Stream::Gates(0));
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| g.sample(&mut rng).values[0]).sum::<f64>() / n as f64;
        let pdf = |r: f64| normal_pdf(r / 0.5) / 0.5;
        let expect = simpson(|r| r * pdf(r), 0.0, 1.0, 2000) + (1.0 - normal_cdf(2.0));
        // sigma / sqrt(2 pi) = 0.1995 ignores the clip at 1; the clipped mean is lower.
        assert!((expect - 0.19523).abs() < 1e-4, "{expect}");
        // Standard error of a [0,1]-valued mean over 1e5 draws is below 0.0016.
        assert!((mean - expect).abs() < 0.005, "{mean} vs {expect}");
    }

    #[test]
    fn open_probability_values() {
        let g = gv(vec![0.0, 0.5, -100.0]);
        let p = g.open_probability();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.841344746).abs() < 1e-8);
        assert!(p[2] < 1e-12);
        let scaled = GateVector::new(vec![0.0, 1.0, -100.0], 1.0, GateRole::Feature).unwrap();
        for (a, b) in p.iter().zip(scaled.open_probability()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn regularizer_values() {
        let f = GateVector::constant(4, 0.0, 0.5, GateRole::Feature).unwrap();
        let e = GateVector::constant(2, 0.0, 0.5, GateRole::Embedding).unwrap();
        assert_eq!(reg_value(&f, &e), 3.0);
        let f = GateVector::constant(4, -100.0, 0.5, GateRole::Feature).unwrap();
        let e = GateVector::constant(2, -100.0, 0.5, GateRole::Embedding).unwrap();
        assert!(reg_value(&f, &e) < 1e-12);
        let f = gv(vec![0.0, 0.5]);
        let e = GateVector::new(vec![-0.5], 0.5, GateRole::Embedding).unwrap();
        assert!((reg_value(&f, &e) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradient() {
        let g = gv(vec![0.0, 0.3, -0.3, 1.2]);
        let d = g.reg_grad();
        assert!((d[0] - 0.7978845608).abs() < 1e-10);
        assert_eq!(d[1], d[2]);
        let e = GateVector::constant(0, 0.0, 0.5, GateRole::Embedding).unwrap();
        let h = 1e-6;
        for i in 0..g.len() {
            let mut p = g.clone();
            p.mu[i] += h;
            let mut m = g.clone();
            m.mu[i] -= h;
            let fd = (reg_value(&p, &e) - reg_value(&m, &e)) / (2.0 * h);
            assert!((fd - d[i]).abs() / d[i] < 1e-6);
        }
    }

    #[test]
    fn chain_gradient_only_in_open_region() {
        let s = GateSample {
            values: vec![0.3, 1.0, 0.0, 1.0],
            raw: vec![0.3, 1.7, 0.0, 1.0],
        };
        assert_eq!(gate_chain_grad(&s, &[2.0; 4]).unwrap(), vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn estimator_basics() {
        let g = gv(vec![0.1, 0.2]);
        assert!(matches!(mc_grad_mu(&g, &[], 0.0), Err(Error::Config(_))));
        assert_eq!(mc_grad_mu(&g, &[vec![1.0, 2.0]], 0.0).unwrap(), vec![1.0, 2.0]);
        let same = vec![vec![0.5, -1.0]; 7];
        let got = mc_grad_mu(&g, &same, 0.0).unwrap();
        assert!((got[0] - 0.5).abs() < 1e-15 && (got[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn selection_threshold() {
        assert_eq!(gv(vec![0.4, -0.3]).selected_mask(0.5), vec![true, false]);
        assert_eq!(gv(vec![0.0, 0.0]).selected_mask(0.5), vec![false, false]);
        assert_eq!(gv(vec![-3.0, 0.0]).selected_mask(0.0), vec![true, true]);
    }

    #[test]
    fn pure_regularizer_descent_decreases_every_mean() {
        let mut g = gv(vec![0.8, 0.0, -0.6, 2.0]);
        for _ in 0..20 {
            let before = g.mu.clone();
            let grad = mc_grad_mu(&g, &[vec![0.0; 4]], 0.1).unwrap();
            for (m, d) in g.mu.iter_mut().zip(grad) {
                *m -= 0.5 * d;
            }
            assert!(g.mu.iter().zip(&before).all(|(a, b)| a < b));
        }
    }

    #[test]
    fn pinned_gates_are_open_and_frozen() {
        let p = GateVector::pinned_open(3, 0.5, GateRole::Embedding).unwrap();
        let mut rng = stream(3, Stream::Gates(0));
        let s = p.sample(&mut rng);
        assert_eq!(s.values, vec![1.0; 3]);
        assert_eq!(gate_chain_grad(&s, &[1.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(p.reg_grad(), vec![0.0; 3]);
        assert_eq!(p.open_count(0.5), 3);
        assert!(GateVector::new(vec![0.0], 0.0, GateRole::Feature).is_err());
    }
}
