//! Model state and per-round math shared by the secure sessions and the
//! plaintext oracle. Both call the same functions with the same random
//! streams, so they differ only by fixed-point rounding.

use crate::error::{Error, Result};
use crate::gates::{gate_chain_grad, mc_grad_mu, reg_value, GateRole, GateSample, GateVector};
use crate::nn::{
    alpha0_tensors, argmax, class_index, hadamard, zero_alpha0_grads, BottomGrad, BottomModel, BottomTape,
    Dense, DenseGrad, LossKind, Optimizer, TopModel,
};
use crate::par;
use crate::rng::{stream, Stream, StreamRng};

use super::config::TrainConfig;

/// One client's local model: bottom network, both gate vectors and their
/// optimizers.
#[derive(Debug, Clone)]
pub struct ClientModel {
    pub bottom: BottomModel,
    pub features: GateVector,
    pub embedding: GateVector,
    opt_theta: Optimizer,
    opt_mu: Optimizer,
    opt_omega: Optimizer,
    gate_rng: StreamRng,
}

/// Forward state for one sample under one gate draw.
#[derive(Debug, Clone)]
pub struct EntryTape {
    pub sample: usize,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    tape: BottomTape,
}

/// Everything a client keeps between its forward pass and its update.
/// Entries are ordered gate draw major: `e = c * batch + n`.
#[derive(Debug, Clone)]
pub struct ClientPass {
    pub samples: Vec<(GateSample, GateSample)>,
    pub entries: Vec<EntryTape>,
    pub reg: f64,
}

impl ClientPass {
    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.g.clone()).collect()
    }
}

impl ClientModel {
    pub fn new(m: usize, bottom: BottomModel, features: GateVector, embedding: GateVector, cfg: &TrainConfig) -> Self {
        ClientModel {
            bottom,
            features,
            embedding,
            opt_theta: Optimizer::new(cfg.optimizer, cfg.lr_client),
            opt_mu: Optimizer::new(cfg.optimizer, cfg.lr_client),
            opt_omega: Optimizer::new(cfg.optimizer, cfg.lr_client),
            gate_rng: stream(cfg.seed, Stream::Gates(m)),
        }
    }

    pub fn reg(&self) -> f64 {
        reg_value(&self.features, &self.embedding)
    }

    /// Draws `mc` gate pairs and runs every row under every draw.
    pub fn forward(&mut self, rows: &[Vec<f64>], mc: usize) -> Result<ClientPass> {
        let samples: Vec<(GateSample, GateSample)> = (0..mc)
            .map(|_| {
                let s = self.features.sample(&mut self.gate_rng);
                let q = self.embedding.sample(&mut self.gate_rng);
                (s, q)
            })
            .collect();
        let b = rows.len();
        let bottom = &self.bottom;
        let entries = par::map_range(mc * b, |e| {
            let (c, n) = (e / b, e % b);
            let (s, q) = &samples[c];
            let (h, tape) = bottom.forward(&hadamard(&rows[n], &s.values))?;
            if h.len() != q.values.len() {
                return Err(Error::shape(format!("embedding of length {}", q.values.len()), h.len()));
            }
            Ok(EntryTape {
                sample: c,
                x: rows[n].clone(),
                g: hadamard(&h, &q.values),
                h,
                tape,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(ClientPass {
            samples,
            entries,
            reg: self.reg(),
        })
    }

    /// Embeddings under the deterministic evaluation gates.
    pub fn embed_eval(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let s = self.features.eval_values();
        let q = self.embedding.eval_values();
        let bottom = &self.bottom;
        par::try_map(rows, |x| Ok(hadamard(&bottom.forward(&hadamard(x, &s))?.0, &q)))
    }

    /// Backpropagates `dL/dg` for every entry and applies one optimizer step
    /// to the bottom model and both gate vectors.
    pub fn backward_update(&mut self, pass: &ClientPass, dg: &[Vec<f64>], lambda: f64) -> Result<()> {
        if dg.len() != pass.entries.len() {
            return Err(Error::shape(format!("{} embedding gradients", pass.entries.len()), dg.len()));
        }
        let bottom = &self.bottom;
        let per_entry = par::map_range(dg.len(), |e| {
            let entry = &pass.entries[e];
            let (s, q) = &pass.samples[entry.sample];
            let chain_omega = gate_chain_grad(q, &hadamard(&dg[e], &entry.h))?;
            let (grad, dxs) = bottom.backward(&entry.tape, &hadamard(&dg[e], &q.values))?;
            let chain_mu = gate_chain_grad(s, &hadamard(&dxs, &entry.x))?;
            Ok::<_, Error>((grad, chain_mu, chain_omega))
        });
        let mc = pass.samples.len();
        let mut theta = BottomGrad::zeros_like(bottom);
        let mut mu_chains = vec![vec![0.0; self.features.len()]; mc];
        let mut omega_chains = vec![vec![0.0; self.embedding.len()]; mc];
        // The per-entry gradients already carry the 1/(bC) loss weight, so
        // each draw's chain term is scaled by C before the estimator averages.
        for (entry, r) in pass.entries.iter().zip(per_entry) {
            let (grad, chain_mu, chain_omega) = r?;
            theta.accumulate(1.0, &grad);
            for (a, v) in mu_chains[entry.sample].iter_mut().zip(&chain_mu) {
                *a += mc as f64 * v;
            }
            for (a, v) in omega_chains[entry.sample].iter_mut().zip(&chain_omega) {
                *a += mc as f64 * v;
            }
        }
        if !self.features.pinned {
            let g = mc_grad_mu(&self.features, &mu_chains, lambda)?;
            self.opt_mu.step(vec![&mut self.features.mu], &[&g])?;
        }
        if !self.embedding.pinned {
            let g = mc_grad_mu(&self.embedding, &omega_chains, lambda)?;
            self.opt_omega.step(vec![&mut self.embedding.mu], &[&g])?;
        }
        let tensors = theta.tensors();
        self.opt_theta.step(self.bottom.params_mut(), &tensors)?;
        Ok(())
    }
}

/// Server-side plaintext model: interactive weights (as the server holds
/// them) and the top stack.
#[derive(Debug, Clone)]
pub struct ServerModel {
    pub top: TopModel,
    opt_alpha: Optimizer,
    pub lr_w: f64,
}

/// Result of the server's forward and loss over one batch.
#[derive(Debug, Clone)]
pub struct ServerPass {
    /// Mean loss over the batch entries.
    pub loss: f64,
    /// Correct predictions among the entries, classification only.
    pub correct: Option<usize>,
    /// `dL/dz`, indexed `[entry][client]`, already weighted by `1/entries`.
    pub dz: Vec<Vec<Vec<f64>>>,
    pub alpha: Vec<DenseGrad>,
}

impl ServerModel {
    pub fn new(top: TopModel, cfg: &TrainConfig) -> Self {
        ServerModel {
            top,
            opt_alpha: Optimizer::new(cfg.optimizer, cfg.lr_server),
            lr_w: cfg.lr_server,
        }
    }

    /// `zs[e][m]` are the weighted embeddings, `ys[e]` the entry targets.
    pub fn forward_loss(&self, zs: Vec<Vec<Vec<f64>>>, ys: &[f64], classes: Option<usize>) -> Result<ServerPass> {
        if zs.len() != ys.len() {
            return Err(Error::shape(format!("{} targets", zs.len()), ys.len()));
        }
        let weight = 1.0 / zs.len().max(1) as f64;
        let top = &self.top;
        let per_entry = par::zip_map(&zs, ys, |z, &y| {
            let (pred, tape) = top.forward_z(z.clone())?;
            let grads = top.loss_and_grads(&tape, y)?;
            let hit = match classes {
                Some(c) => Some(argmax(&pred) == class_index(y, c)?),
                None => None,
            };
            Ok::<_, Error>((grads, hit))
        });
        let mut loss = 0.0;
        let mut correct = classes.map(|_| 0);
        let mut dz = Vec::with_capacity(zs.len());
        let mut alpha = zero_alpha0_grads(top);
        for r in per_entry {
            let (grads, hit) = r?;
            loss += weight * grads.loss;
            if let (Some(c), Some(true)) = (correct.as_mut(), hit) {
                *c += 1;
            }
            for (a, g) in alpha.iter_mut().zip(&grads.alpha0) {
                a.accumulate(weight, g);
            }
            dz.push(
                grads
                    .dz
                    .into_iter()
                    .map(|d| d.into_iter().map(|v| v * weight).collect())
                    .collect(),
            );
        }
        Ok(ServerPass {
            loss,
            correct,
            dz,
            alpha,
        })
    }

    pub fn step_alpha(&mut self, grads: &[DenseGrad]) -> Result<()> {
        let tensors = alpha0_tensors(grads);
        self.opt_alpha.step(self.top.alpha0_params_mut(), &tensors)
    }

    /// Plain SGD on one client's interactive weights.
    pub fn step_w(&mut self, m: usize, grad: &[f64]) -> Result<()> {
        let w = &mut self.top.interactive[m];
        if w.len() != grad.len() {
            return Err(Error::shape(format!("weight gradient of length {}", w.len()), grad.len()));
        }
        for (wi, gi) in w.iter_mut().zip(grad) {
            *wi -= self.lr_w * gi;
        }
        Ok(())
    }

    pub fn predict_z(&self, zs: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
        let top = &self.top;
        par::try_map(zs, |z| Ok(top.forward_z(z.clone())?.0))
    }
}

/// Initial models for every party, drawn from the `Init` stream in client
/// order and then the top model.
pub fn init_models(
    cfg: &TrainConfig,
    input_dims: &[usize],
    outputs: usize,
    loss: LossKind,
) -> Result<(Vec<ClientModel>, ServerModel)> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Init);
    let mut clients = Vec::with_capacity(input_dims.len());
    for (m, &d) in input_dims.iter().enumerate() {
        let bottom = BottomModel::init(d, &cfg.bottom_sizes(), &mut rng)?;
        let features = if cfg.pin_feature_gates {
            GateVector::pinned_open(d, cfg.sigma, GateRole::Feature)?
        } else {
            GateVector::constant(d, cfg.constant_mu, cfg.sigma, GateRole::Feature)?
        };
        let e = cfg.embedding_dim();
        let embedding = if cfg.pin_embedding_gates {
            GateVector::pinned_open(e, cfg.sigma, GateRole::Embedding)?
        } else {
            GateVector::constant(e, cfg.omega_init, cfg.sigma, GateRole::Embedding)?
        };
        clients.push(ClientModel::new(m, bottom, features, embedding, cfg));
    }
    let dims = vec![cfg.embedding_dim(); input_dims.len()];
    let top = TopModel::init(&dims, &cfg.top_sizes(), outputs, loss, cfg.w_init, &mut rng)?;
    Ok((clients, ServerModel::new(top, cfg)))
}

/// Every trainable tensor of a run, with interactive weights in their true
/// (unmasked) form.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub bottoms: Vec<BottomModel>,
    pub mu: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub alpha0: Vec<Dense>,
}

impl Snapshot {
    /// Named flat tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (m, b) in self.bottoms.iter().enumerate() {
            for (i, l) in b.layers.iter().enumerate() {
                out.push((format!("theta{m}.{i}.weights"), l.weights.data.clone()));
                out.push((format!("theta{m}.{i}.bias"), l.bias.clone()));
            }
            out.push((format!("mu{m}"), self.mu[m].clone()));
            out.push((format!("omega{m}"), self.omega[m].clone()));
            out.push((format!("w{m}"), self.w[m].clone()));
        }
        for (i, l) in self.alpha0.iter().enumerate() {
            out.push((format!("alpha0.{i}.weights"), l.weights.data.clone()));
            out.push((format!("alpha0.{i}.bias"), l.bias.clone()));
        }
        out
    }

    /// Largest elementwise difference and the tensor it occurs in.
    pub fn max_abs_diff(&self, other: &Snapshot) -> Result<(f64, String)> {
        let (a, b) = (self.tensors(), other.tensors());
        if a.len() != b.len() {
            return Err(Error::shape(format!("{} tensors", a.len()), b.len()));
        }
        let mut worst = (0.0, String::new());
        for ((name, x), (_, y)) in a.iter().zip(&b) {
            if x.len() != y.len() {
                return Err(Error::shape(format!("{name} of length {}", x.len()), y.len()));
            }
            let d = crate::nn::max_abs_diff(x, y);
            if d > worst.0 || worst.1.is_empty() {
                worst = (d, name.clone());
            }
        }
        Ok(worst)
    }
}

/// Snapshot of plaintext models; `w` overrides the interactive weights.
pub fn snapshot(clients: &[ClientModel], server: &ServerModel, w: Vec<Vec<f64>>) -> Snapshot {
    Snapshot {
        bottoms: clients.iter().map(|c| c.bottom.clone()).collect(),
        mu: clients.iter().map(|c| c.features.mu.clone()).collect(),
        omega: clients.iter().map(|c| c.embedding.mu.clone()).collect(),
        w,
        alpha0: server.top.alpha0.clone(),
    }
}
