//! The encrypted trainer: one server session and one session per client,
//! exchanging every message through a metered [`Wire`].

use crate::data::{VerticalPartition, VflDataset};
use crate::error::{Error, Party, Result};
use crate::gini::{init_mu_from_gini, partition_all, run_gini_protocol, GiniClient, GiniReport, GiniServer};
use crate::nn::{LossKind, Matrix};
use crate::phe::keygen;
use crate::rng::{stream, Stream};

use super::config::TrainConfig;
use super::history::{client_kinds, gini_indicator, task_shape, BatchSampler, Engine, RoundRecord};
use super::message::Message;
use super::meter::{Bucket, Direction};
use super::model::{init_models, snapshot, ClientModel, Snapshot};
use super::oracle::record;
use super::session::{ClientSession, ServerSession};
use super::transport::Wire;
use crate::data::{FeatureKind, Task};

pub struct SecureTrainer {
    pub cfg: TrainConfig,
    pub server: ServerSession,
    pub clients: Vec<ClientSession>,
    pub wire: Wire,
    sampler: BatchSampler,
    kinds: Vec<Vec<FeatureKind>>,
    task: Task,
    round: u64,
}

impl SecureTrainer {
    /// Generates the server key pair and the clients' shared key pair (in
    /// that order, from the `Keys` stream) and builds every session with the
    /// same initial models the oracle would use.
    pub fn new(cfg: &TrainConfig, train: &VflDataset, partition: &VerticalPartition, wire: Wire) -> Result<Self> {
        cfg.validate()?;
        let views = partition.views(train);
        let dims: Vec<usize> = views.iter().map(|v| v.cols).collect();
        let (outputs, loss, classes) = task_shape(train.task);
        let (models, server_model) = init_models(cfg, &dims, outputs, loss)?;
        let mut key_rng = stream(cfg.seed, Stream::Keys);
        let (server_pk, server_sk) = keygen(cfg.key_bits, &mut key_rng)?;
        let (client_pk, client_sk) = keygen(cfg.key_bits, &mut key_rng)?;
        let clients = models
            .into_iter()
            .zip(views)
            .enumerate()
            .map(|(m, (model, x))| {
                ClientSession::new(
                    m,
                    model,
                    x,
                    (client_pk.clone(), client_sk.clone()),
                    server_pk.clone(),
                    cfg,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let server = ServerSession::new(server_model, train.y.clone(), classes, client_pk, server_sk, cfg)?;
        Ok(SecureTrainer {
            cfg: cfg.clone(),
            server,
            clients,
            wire,
            sampler: BatchSampler::new(train.n_samples(), cfg.seed),
            kinds: client_kinds(train, &partition.features),
            task: train.task,
            round: 0,
        })
    }

    /// Runs the encrypted Gini exchange and maps each client's scores onto
    /// its feature-gate means.
    pub fn gini_init(&mut self) -> Result<Vec<GiniReport>> {
        let bins = self.cfg.gini_bins;
        let (_, indicator) = gini_indicator(self.server.labels(), self.task, bins)?;
        let mut gini_server = GiniServer::new(
            self.server.secret_key(),
            stream(self.cfg.seed, Stream::GiniServer),
            stream(self.cfg.seed, Stream::ServerEnc),
        )?;
        let mut parties = Vec::with_capacity(self.clients.len());
        for (m, c) in self.clients.iter().enumerate() {
            let gc = GiniClient::new(c.server_public_key().clone(), stream(self.cfg.seed, Stream::Gini(m)))?;
            parties.push((gc, partition_all(c.features(), &self.kinds[m], bins)?));
        }
        let reports = run_gini_protocol(&mut self.wire, &mut gini_server, &indicator, &mut parties)?;
        for (c, r) in self.clients.iter_mut().zip(&reports) {
            if !c.model.features.pinned {
                c.model.features.mu = init_mu_from_gini(&r.scores, self.cfg.mu_range.0, self.cfg.mu_range.1);
            }
        }
        Ok(reports)
    }

    fn broadcast(&mut self, msgs: Vec<Message>) -> Result<Vec<Message>> {
        for (m, msg) in msgs.iter().enumerate() {
            self.wire.send(Party::Server, Party::Client(m), msg)?;
        }
        (0..self.clients.len())
            .map(|m| self.wire.recv(Party::Client(m), Party::Server))
            .collect()
    }

    fn gather(&mut self, msgs: Vec<Message>) -> Result<Vec<Message>> {
        for (m, msg) in msgs.iter().enumerate() {
            self.wire.send(Party::Client(m), Party::Server, msg)?;
        }
        (0..self.clients.len())
            .map(|m| self.wire.recv(Party::Server, Party::Client(m)))
            .collect()
    }

    fn train_round(&mut self, round: u64, batch: &[usize]) -> Result<(f64, Option<usize>, usize)> {
        let embeds = self
            .clients
            .iter_mut()
            .map(|c| c.forward(round, batch))
            .collect::<Result<Vec<_>>>()?;
        let embeds = self.gather(embeds)?;
        let entries = match &embeds[0] {
            Message::EncEmbedding(r) => r.rows.len(),
            _ => 0,
        };
        let weighted = self.server.forward(round, batch, embeds)?;
        let weighted = self.broadcast(weighted)?;
        let unmasked = self
            .clients
            .iter_mut()
            .zip(weighted)
            .map(|(c, msg)| c.unmask_forward(msg))
            .collect::<Result<Vec<_>>>()?;
        let unmasked = self.gather(unmasked)?;
        let (loss, correct) = self.server.finish_forward(round, unmasked)?;
        let grads = self.server.backward_start(round)?;
        let grads = self.broadcast(grads)?;
        let masked = self
            .clients
            .iter_mut()
            .zip(grads)
            .map(|(c, msg)| c.backward_mask(msg))
            .collect::<Result<Vec<_>>>()?;
        let masked = self.gather(masked)?;
        let emb_grads = self.server.update(round, masked)?;
        let emb_grads = self.broadcast(emb_grads)?;
        for (c, msg) in self.clients.iter_mut().zip(emb_grads) {
            c.update(msg)?;
        }
        Ok((loss, correct, entries))
    }
}

/// Attaches round context to errors that lack it.
fn in_round(round: u64, e: Error) -> Error {
    match e {
        Error::ProtocolOrder { party, msg } => Error::Protocol { round, party, msg },
        other => other,
    }
}

impl Engine for SecureTrainer {
    fn round(&self) -> u64 {
        self.round
    }

    fn step(&mut self) -> Result<RoundRecord> {
        self.round += 1;
        let round = self.round;
        let bucket = Bucket::Train(round);
        self.wire.set_bucket(bucket);
        let batch = self.sampler.next_batch(self.cfg.batch_size);
        let (loss, correct, entries) = self.train_round(round, &batch).map_err(|e| in_round(round, e))?;
        let models: Vec<ClientModel> = self.clients.iter().map(|c| c.model.clone()).collect();
        let mut rec = record(round, loss, correct, entries, &models, self.cfg.threshold);
        rec.bytes_up = self.wire.meter.bytes(bucket, Direction::Up);
        rec.bytes_down = self.wire.meter.bytes(bucket, Direction::Down);
        for ((ty, _), counter) in self.wire.meter.bucket(bucket) {
            *rec.bytes_by_type.entry(ty.name().to_string()).or_default() += counter.bytes;
        }
        Ok(rec)
    }

    fn predict(&mut self, views: &[Matrix], gated: bool) -> Result<Vec<Vec<f64>>> {
        if views.len() != self.clients.len() {
            return Err(Error::shape(format!("{} client views", self.clients.len()), views.len()));
        }
        let previous = self.wire.bucket();
        self.wire.set_bucket(Bucket::Predict);
        let result = (|| {
            let mut embeds = Vec::with_capacity(views.len());
            for (c, view) in self.clients.iter_mut().zip(views) {
                let rows: Vec<Vec<f64>> = (0..view.rows).map(|i| view.row(i).to_vec()).collect();
                embeds.push(c.predict_forward(&rows, gated)?);
            }
            let embeds = self.gather(embeds)?;
            let weighted = self.server.predict_forward(embeds)?;
            let weighted = self.broadcast(weighted)?;
            let unmasked = self
                .clients
                .iter_mut()
                .zip(weighted)
                .map(|(c, msg)| c.predict_unmask(msg))
                .collect::<Result<Vec<_>>>()?;
            let unmasked = self.gather(unmasked)?;
            self.server.predict_finish(unmasked)
        })();
        self.wire.set_bucket(previous);
        result
    }

    fn snapshot(&self) -> Snapshot {
        let models: Vec<ClientModel> = self.clients.iter().map(|c| c.model.clone()).collect();
        let w = self
            .server
            .noisy_weights()
            .iter()
            .zip(&self.clients)
            .map(|(wt, c)| wt.iter().zip(c.eps_acc()).map(|(a, b)| a - b).collect())
            .collect();
        snapshot(&models, &self.server.model, w)
    }

    fn client_models(&self) -> Vec<&ClientModel> {
        self.clients.iter().map(|c| &c.model).collect()
    }

    fn loss_kind(&self) -> LossKind {
        self.server.model.top.loss
    }

    fn threshold(&self) -> f64 {
        self.cfg.threshold
    }
}
