//! Plaintext reference trainer: the same model math as the secure protocol
//! with no encryption and no masks.

use crate::data::{VerticalPartition, VflDataset};
use crate::error::{Error, Result};
use crate::gini::{init_mu_from_gini, partition_all, plaintext_gini, GiniReport};
use crate::nn::{hadamard, LossKind, Matrix};

use super::config::TrainConfig;
use super::history::{client_kinds, gini_labels, task_shape, BatchSampler, Engine, RoundRecord};
use super::model::{init_models, snapshot, ClientModel, ServerModel, Snapshot};

pub struct OracleTrainer {
    pub cfg: TrainConfig,
    pub clients: Vec<ClientModel>,
    pub server: ServerModel,
    views: Vec<Matrix>,
    y: Vec<f64>,
    classes: Option<usize>,
    sampler: BatchSampler,
    round: u64,
}

impl OracleTrainer {
    pub fn new(cfg: &TrainConfig, train: &VflDataset, partition: &VerticalPartition) -> Result<Self> {
        let views = partition.views(train);
        let dims: Vec<usize> = views.iter().map(|v| v.cols).collect();
        let (outputs, loss, classes) = task_shape(train.task);
        let (clients, server) = init_models(cfg, &dims, outputs, loss)?;
        Ok(OracleTrainer {
            cfg: cfg.clone(),
            clients,
            server,
            sampler: BatchSampler::new(train.n_samples(), cfg.seed),
            views,
            y: train.y.clone(),
            classes,
            round: 0,
        })
    }

    /// Plaintext Gini scores per client, mapped onto the feature-gate means.
    pub fn gini_init(&mut self, train: &VflDataset, partition: &VerticalPartition) -> Result<Vec<GiniReport>> {
        let (labels, c) = gini_labels(&train.y, train.task, self.cfg.gini_bins)?;
        let kinds = client_kinds(train, &partition.features);
        let mut reports = Vec::with_capacity(self.clients.len());
        for (m, client) in self.clients.iter_mut().enumerate() {
            let parts = partition_all(&self.views[m], &kinds[m], self.cfg.gini_bins)?;
            let scores: Vec<f64> = parts.iter().map(|p| plaintext_gini(&labels, c, p)).collect();
            if !client.features.pinned {
                client.features.mu = init_mu_from_gini(&scores, self.cfg.mu_range.0, self.cfg.mu_range.1);
            }
            reports.push(GiniReport {
                scores,
                constant: parts.iter().map(|p| p.constant).collect(),
            });
        }
        Ok(reports)
    }
}

impl Engine for OracleTrainer {
    fn round(&self) -> u64 {
        self.round
    }

    fn step(&mut self) -> Result<RoundRecord> {
        self.round += 1;
        let batch = self.sampler.next_batch(self.cfg.batch_size);
        let mut passes = Vec::with_capacity(self.clients.len());
        for (client, view) in self.clients.iter_mut().zip(&self.views) {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| view.row(i).to_vec()).collect();
            passes.push(client.forward(&rows, self.cfg.mc_samples)?);
        }
        let entries = passes[0].entries.len();
        let zs: Vec<Vec<Vec<f64>>> = (0..entries)
            .map(|e| {
                passes
                    .iter()
                    .zip(&self.server.top.interactive)
                    .map(|(p, w)| hadamard(&p.entries[e].g, w))
                    .collect()
            })
            .collect();
        let ys: Vec<f64> = (0..entries).map(|e| self.y[batch[e % batch.len()]]).collect();
        let sp = self.server.forward_loss(zs, &ys, self.classes)?;
        let mut dgs = Vec::with_capacity(self.clients.len());
        for (m, pass) in passes.iter().enumerate() {
            let w = &self.server.top.interactive[m];
            let mut dw = vec![0.0; w.len()];
            let mut dg = Vec::with_capacity(entries);
            for (e, entry) in pass.entries.iter().enumerate() {
                let dz = &sp.dz[e][m];
                for ((a, d), g) in dw.iter_mut().zip(dz).zip(&entry.g) {
                    *a += d * g;
                }
                dg.push(hadamard(dz, w));
            }
            self.server.step_w(m, &dw)?;
            dgs.push(dg);
        }
        self.server.step_alpha(&sp.alpha)?;
        for ((client, pass), dg) in self.clients.iter_mut().zip(&passes).zip(&dgs) {
            client.backward_update(pass, dg, self.cfg.lambda)?;
        }
        Ok(record(self.round, sp.loss, sp.correct, entries, &self.clients, self.cfg.threshold))
    }

    fn predict(&mut self, views: &[Matrix], _gated: bool) -> Result<Vec<Vec<f64>>> {
        if views.len() != self.clients.len() {
            return Err(Error::shape(format!("{} client views", self.clients.len()), views.len()));
        }
        let n = views[0].rows;
        let mut gs = Vec::with_capacity(views.len());
        for (client, view) in self.clients.iter().zip(views) {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| view.row(i).to_vec()).collect();
            gs.push(client.embed_eval(&rows)?);
        }
        let zs: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| {
                gs.iter()
                    .zip(&self.server.top.interactive)
                    .map(|(g, w)| hadamard(&g[i], w))
                    .collect()
            })
            .collect();
        self.server.predict_z(&zs)
    }

    fn snapshot(&self) -> Snapshot {
        snapshot(&self.clients, &self.server, self.server.top.interactive.clone())
    }

    fn client_models(&self) -> Vec<&ClientModel> {
        self.clients.iter().collect()
    }

    fn loss_kind(&self) -> LossKind {
        self.server.top.loss
    }

    fn threshold(&self) -> f64 {
        self.cfg.threshold
    }
}

/// Record fields both engines fill the same way; byte counts are added by
/// the secure engine.
pub(crate) fn record(
    round: u64,
    loss: f64,
    correct: Option<usize>,
    entries: usize,
    clients: &[ClientModel],
    threshold: f64,
) -> RoundRecord {
    RoundRecord {
        round,
        loss,
        train_acc: correct.map(|c| c as f64 / entries.max(1) as f64),
        open_feature_gates: clients.iter().map(|c| c.features.open_count(threshold)).sum(),
        open_embedding_gates: clients.iter().map(|c| c.embedding.open_count(threshold)).sum(),
        bytes_up: 0,
        bytes_down: 0,
        reg: clients.iter().map(ClientModel::reg).collect(),
        bytes_by_type: Default::default(),
        val_loss: None,
        metrics: Default::default(),
    }
}
