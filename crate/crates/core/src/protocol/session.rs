//! Per-party state machines for the masked training exchange.
//!
//! Each round runs, per client:
//! `ENC_EMBEDDING -> NOISY_WEIGHTED_ENC -> UNMASKED_WEIGHTED -> ENC_WEIGHT_GRAD
//! -> MASKED_WEIGHT_GRAD_PLUS_ENC_NOISE -> ENC_EMBEDDING_GRAD`.
//! Embeddings and gradients towards the clients travel under the clients'
//! shared key; the server only ever holds plaintexts it has masked itself.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Party, Result};
use crate::gini::unexpected;
use crate::nn::{hadamard, Matrix};
use crate::par;
use crate::phe::{self, Ciphertext, FixedPointCodec, PrivateKey, PublicKey};
use crate::rng::{stream, Stream, StreamRng};

use super::config::TrainConfig;
use super::message::{CipherRows, EncVec, Message, PlainRows};
use super::model::{ClientModel, ClientPass, ServerModel, ServerPass};

fn mask_vec(rng: &mut StreamRng, len: usize, sigma: f64, zero: bool) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            if zero {
                0.0
            } else {
                sigma * e
            }
        })
        .collect()
}

fn reshape<T>(flat: Vec<T>, widths: &[usize]) -> Vec<Vec<T>> {
    let mut it = flat.into_iter();
    widths.iter().map(|&w| it.by_ref().take(w).collect()).collect()
}

fn open_indices(slots: &Option<Vec<bool>>, width: usize) -> Vec<usize> {
    match slots {
        Some(s) => s.iter().enumerate().filter(|(_, &o)| o).map(|(j, _)| j).collect(),
        None => (0..width).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Embedded,
    Unmasked,
    GradMasked,
}

#[derive(Debug, Clone)]
struct InFlight {
    round: u64,
    stage: Stage,
    pass: ClientPass,
}

#[derive(Debug, Clone)]
struct PendingPrediction {
    slots: Option<Vec<bool>>,
    gs: Vec<Vec<f64>>,
}

/// A passive party: holds its feature columns, its local model and the
/// running sum `eps_acc` of the weight masks it has injected.
pub struct ClientSession {
    pub id: usize,
    pub model: ClientModel,
    x: Matrix,
    pk: PublicKey,
    sk: PrivateKey,
    server_pk: PublicKey,
    codec: FixedPointCodec,
    lambda: f64,
    lr_server: f64,
    mc: usize,
    mask_sigma: f64,
    eps_acc: Vec<f64>,
    eps_history: Vec<Vec<f64>>,
    mask_rng: StreamRng,
    enc_rng: StreamRng,
    inflight: Option<InFlight>,
    predicting: Option<PendingPrediction>,
    /// Forces every `eps_m` to zero (the draws are still consumed).
    pub zero_masks: bool,
    decrypted: Option<Vec<f64>>,
}

impl ClientSession {
    pub fn new(
        id: usize,
        model: ClientModel,
        x: Matrix,
        keys: (PublicKey, PrivateKey),
        server_pk: PublicKey,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let (pk, sk) = keys;
        let codec = FixedPointCodec::new(&pk, cfg.scale_bits)?;
        if x.cols != model.bottom.input_dim() {
            return Err(Error::shape(format!("{} feature columns", model.bottom.input_dim()), x.cols));
        }
        let width = model.embedding.len();
        Ok(ClientSession {
            id,
            model,
            x,
            pk,
            sk,
            server_pk,
            codec,
            lambda: cfg.lambda,
            lr_server: cfg.lr_server,
            mc: cfg.mc_samples,
            mask_sigma: cfg.mask_sigma,
            eps_acc: vec![0.0; width],
            eps_history: Vec::new(),
            mask_rng: stream(cfg.seed, Stream::ClientMask(id)),
            enc_rng: stream(cfg.seed, Stream::ClientEnc(id)),
            inflight: None,
            predicting: None,
            zero_masks: false,
            decrypted: None,
        })
    }

    fn me(&self) -> Party {
        Party::Client(self.id)
    }

    /// Keep a copy of every plaintext this client decrypts.
    pub fn record_decrypted(&mut self) {
        self.decrypted.get_or_insert_with(Vec::new);
    }

    pub fn decrypted(&self) -> &[f64] {
        self.decrypted.as_deref().unwrap_or(&[])
    }

    pub fn eps_acc(&self) -> &[f64] {
        &self.eps_acc
    }

    /// Every `eps_m` drawn so far, in order.
    pub fn eps_history(&self) -> &[Vec<f64>] {
        &self.eps_history
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    pub fn server_public_key(&self) -> &PublicKey {
        &self.server_pk
    }

    /// The clients' shared private key, for white-box checks.
    pub fn secret_key(&self) -> &PrivateKey {
        &self.sk
    }

    pub fn in_flight(&self) -> bool {
        self.inflight.is_some()
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    fn encrypt_rows(&mut self, rows: &[Vec<f64>]) -> Result<Vec<Vec<Ciphertext>>> {
        let widths: Vec<usize> = rows.iter().map(Vec::len).collect();
        let ms = rows
            .iter()
            .flatten()
            .map(|&v| self.codec.encode(v))
            .collect::<Result<Vec<BigUint>>>()?;
        let cts = phe::encrypt_many(&self.pk, &ms, &mut self.enc_rng)?;
        Ok(reshape(cts, &widths))
    }

    fn decrypt_flat(&mut self, cts: &[Ciphertext], scale_bits: u32) -> Result<Vec<f64>> {
        let ms = phe::decrypt_many(&self.sk, cts)?;
        let vals: Vec<f64> = ms.iter().map(|m| self.codec.decode_at(m, scale_bits)).collect();
        if let Some(log) = &mut self.decrypted {
            log.extend(&vals);
        }
        Ok(vals)
    }

    fn decrypt_rows(&mut self, rows: &[Vec<Ciphertext>], scale_bits: u32) -> Result<Vec<Vec<f64>>> {
        let widths: Vec<usize> = rows.iter().map(Vec::len).collect();
        let flat: Vec<Ciphertext> = rows.iter().flatten().cloned().collect();
        Ok(reshape(self.decrypt_flat(&flat, scale_bits)?, &widths))
    }

    /// Round and entry count of the in-flight round, if it is at `want`.
    fn stage(&self, want: Stage, what: &str) -> Result<(u64, usize)> {
        match &self.inflight {
            Some(f) if f.stage == want => Ok((f.round, f.pass.entries.len())),
            Some(f) => Err(Error::protocol(f.round, self.me(), format!("{what} arrived out of order"))),
            None => Err(Error::order(self.me(), format!("{what} with no round in flight"))),
        }
    }

    fn check_rows(&self, round: u64, rows: &[Vec<impl Sized>], entries: usize, width: usize) -> Result<()> {
        if rows.len() != entries || rows.iter().any(|r| r.len() != width) {
            return Err(Error::protocol(
                round,
                self.me(),
                format!("expected {entries} rows of {width} values"),
            ));
        }
        Ok(())
    }

    /// Samples gates, runs the bottom model on the batch rows and sends
    /// `[[g]]` for every entry.
    pub fn forward(&mut self, round: u64, batch: &[usize]) -> Result<Message> {
        if self.inflight.is_some() || self.predicting.is_some() {
            return Err(Error::order(self.me(), "forward already in flight"));
        }
        let rows = batch
            .iter()
            .map(|&i| {
                if i < self.x.rows {
                    Ok(self.x.row(i).to_vec())
                } else {
                    Err(Error::shape(format!("sample index below {}", self.x.rows), i))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let pass = self.model.forward(&rows, self.mc)?;
        let cts = self.encrypt_rows(&pass.embeddings())?;
        self.inflight = Some(InFlight {
            round,
            stage: Stage::Embedded,
            pass,
        });
        Ok(Message::EncEmbedding(CipherRows {
            scale_bits: self.codec.scale_bits,
            slots: None,
            rows: cts,
        }))
    }

    /// Decrypts `g * w~ + eps_s` and removes this client's `eps_acc * g`.
    pub fn unmask_forward(&mut self, msg: Message) -> Result<Message> {
        let me = self.me();
        let rows = match msg {
            Message::NoisyWeightedEnc(r) => r,
            other => return Err(unexpected(me, "NOISY_WEIGHTED_ENC", &other)),
        };
        let (round, entries) = self.stage(Stage::Embedded, "NOISY_WEIGHTED_ENC")?;
        self.check_rows(round, &rows.rows, entries, self.eps_acc.len())?;
        let vals = self.decrypt_rows(&rows.rows, rows.scale_bits)?;
        let f = self.inflight.as_mut().expect("checked above");
        let out = vals
            .into_iter()
            .zip(&f.pass.entries)
            .map(|(v, e)| {
                v.iter()
                    .zip(&e.g)
                    .zip(&self.eps_acc)
                    .map(|((vi, gi), ai)| vi - ai * gi)
                    .collect()
            })
            .collect();
        f.stage = Stage::Unmasked;
        Ok(Message::UnmaskedWeighted(PlainRows { slots: None, rows: out }))
    }

    /// Masks the weight gradient with a fresh `eps_m / lr_server`, sends the
    /// pre-accumulation `[[eps_acc]]` alongside, then folds `eps_m` in.
    pub fn backward_mask(&mut self, msg: Message) -> Result<Message> {
        let me = self.me();
        let v = match msg {
            Message::EncWeightGrad(v) => v,
            other => return Err(unexpected(me, "ENC_WEIGHT_GRAD", &other)),
        };
        let (round, _) = self.stage(Stage::Unmasked, "ENC_WEIGHT_GRAD")?;
        let d = self.eps_acc.len();
        if v.cts.len() != d {
            return Err(Error::protocol(round, me, format!("weight gradient of {} values, expected {d}", v.cts.len())));
        }
        let grad = self.decrypt_flat(&v.cts, v.scale_bits)?;
        let eps_m = mask_vec(&mut self.mask_rng, d, self.mask_sigma, self.zero_masks);
        let sent: Vec<f64> = grad.iter().zip(&eps_m).map(|(g, e)| g - e / self.lr_server).collect();
        let acc = self.eps_acc.clone();
        let noise = self.encrypt_rows(&[acc])?.remove(0);
        for (a, e) in self.eps_acc.iter_mut().zip(&eps_m) {
            *a += e;
        }
        self.eps_history.push(eps_m);
        self.inflight.as_mut().expect("checked above").stage = Stage::GradMasked;
        Ok(Message::MaskedWeightGradPlusEncNoise {
            grad: sent,
            noise: EncVec {
                scale_bits: self.codec.scale_bits,
                cts: noise,
            },
        })
    }

    /// Decrypts `dL/dg` and updates the bottom model and both gate vectors.
    pub fn update(&mut self, msg: Message) -> Result<()> {
        let me = self.me();
        let rows = match msg {
            Message::EncEmbeddingGrad(r) => r,
            other => return Err(unexpected(me, "ENC_EMBEDDING_GRAD", &other)),
        };
        let (round, entries) = self.stage(Stage::GradMasked, "ENC_EMBEDDING_GRAD")?;
        self.check_rows(round, &rows.rows, entries, self.eps_acc.len())?;
        let dg = self.decrypt_rows(&rows.rows, rows.scale_bits)?;
        let f = self.inflight.take().expect("checked above");
        self.model.backward_update(&f.pass, &dg, self.lambda)
    }

    /// Embeds `rows` under the evaluation gates. When `gated`, only slots
    /// whose embedding gate is open are encrypted and sent.
    pub fn predict_forward(&mut self, rows: &[Vec<f64>], gated: bool) -> Result<Message> {
        if self.inflight.is_some() || self.predicting.is_some() {
            return Err(Error::order(self.me(), "prediction requested while a round is in flight"));
        }
        let gs = self.model.embed_eval(rows)?;
        let slots = gated.then(|| self.model.embedding.eval_values().iter().map(|&q| q > 0.0).collect::<Vec<bool>>());
        let open = open_indices(&slots, self.eps_acc.len());
        let sent: Vec<Vec<f64>> = gs.iter().map(|g| open.iter().map(|&j| g[j]).collect()).collect();
        let cts = self.encrypt_rows(&sent)?;
        self.predicting = Some(PendingPrediction { slots: slots.clone(), gs });
        Ok(Message::EncEmbedding(CipherRows {
            scale_bits: self.codec.scale_bits,
            slots,
            rows: cts,
        }))
    }

    pub fn predict_unmask(&mut self, msg: Message) -> Result<Message> {
        let me = self.me();
        let rows = match msg {
            Message::NoisyWeightedEnc(r) => r,
            other => return Err(unexpected(me, "NOISY_WEIGHTED_ENC", &other)),
        };
        let pending = self
            .predicting
            .take()
            .ok_or_else(|| Error::order(me, "prediction response with no request in flight"))?;
        if rows.slots != pending.slots {
            return Err(Error::order(me, "prediction response for a different slot set"));
        }
        let open = open_indices(&pending.slots, self.eps_acc.len());
        if rows.rows.len() != pending.gs.len() || rows.rows.iter().any(|r| r.len() != open.len()) {
            return Err(Error::order(me, "prediction response has the wrong shape"));
        }
        let vals = self.decrypt_rows(&rows.rows, rows.scale_bits)?;
        let out = vals
            .into_iter()
            .zip(&pending.gs)
            .map(|(v, g)| open.iter().zip(v).map(|(&j, vj)| vj - self.eps_acc[j] * g[j]).collect())
            .collect();
        Ok(Message::UnmaskedWeighted(PlainRows {
            slots: pending.slots,
            rows: out,
        }))
    }
}

/// Direction an `eps_s` mask was issued for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MaskDir {
    Forward,
    Backward,
    Predict,
}

struct ServerRound {
    round: u64,
    batch: Vec<usize>,
    enc_g: Vec<Vec<Vec<Ciphertext>>>,
    pass: Option<ServerPass>,
    /// `dL~/dg = dL/dz * w~` per client and entry, fixed before the update.
    dgt: Option<Vec<Vec<Vec<f64>>>>,
}

/// The active party: labels, noisy interactive weights `w~`, the top stack
/// and the registry of outstanding `eps_s` masks.
pub struct ServerSession {
    pub model: ServerModel,
    y: Vec<f64>,
    classes: Option<usize>,
    clients: usize,
    pk_clients: PublicKey,
    codec: FixedPointCodec,
    sk: PrivateKey,
    mask_sigma: f64,
    mask_rng: StreamRng,
    registry: BTreeMap<(u64, usize, MaskDir), Vec<f64>>,
    issued: u64,
    current: Option<ServerRound>,
    predict_seq: u64,
    /// Forces every `eps_s` to zero (the draws are still consumed).
    pub zero_masks: bool,
}

impl ServerSession {
    pub fn new(
        model: ServerModel,
        y: Vec<f64>,
        classes: Option<usize>,
        pk_clients: PublicKey,
        keys: PrivateKey,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let codec = FixedPointCodec::new(&pk_clients, cfg.scale_bits)?;
        Ok(ServerSession {
            clients: model.top.clients(),
            model,
            y,
            classes,
            pk_clients,
            codec,
            sk: keys,
            mask_sigma: cfg.mask_sigma,
            mask_rng: stream(cfg.seed, Stream::ServerMask),
            registry: BTreeMap::new(),
            issued: 0,
            current: None,
            predict_seq: 0,
            zero_masks: false,
        })
    }

    /// The server's own key pair, used for the Gini exchange.
    pub fn secret_key(&self) -> &PrivateKey {
        &self.sk
    }

    pub fn public_key(&self) -> &PublicKey {
        self.sk.public_key()
    }

    /// Interactive weights as the server holds them (`w + eps_acc`).
    pub fn noisy_weights(&self) -> &[Vec<f64>] {
        &self.model.top.interactive
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn outstanding_masks(&self) -> usize {
        self.registry.len()
    }

    /// An outstanding `eps_s`, for white-box checks.
    pub fn mask(&self, round: u64, client: usize, dir: MaskDir) -> Option<&[f64]> {
        self.registry.get(&(round, client, dir)).map(Vec::as_slice)
    }

    /// `dL/dz[entry][client]` of the round in flight.
    pub fn cached_dz(&self) -> Option<&[Vec<Vec<f64>>]> {
        self.current.as_ref()?.pass.as_ref().map(|p| p.dz.as_slice())
    }

    /// `dL~/dg = dL/dz * w~` per client and entry, once backward started.
    pub fn noisy_embedding_grads(&self) -> Option<&[Vec<Vec<f64>>]> {
        self.current.as_ref()?.dgt.as_deref()
    }

    pub fn masks_issued(&self) -> u64 {
        self.issued
    }

    fn issue(&mut self, key: (u64, usize, MaskDir), len: usize) -> Vec<f64> {
        let eps = mask_vec(&mut self.mask_rng, len, self.mask_sigma, self.zero_masks);
        self.registry.insert(key, eps.clone());
        self.issued += 1;
        eps
    }

    fn consume(&mut self, key: (u64, usize, MaskDir)) -> Result<Vec<f64>> {
        self.registry.remove(&key).ok_or_else(|| {
            Error::protocol(
                key.0,
                Party::Server,
                format!("{:?} mask for client {} already consumed or never issued", key.2, key.1),
            )
        })
    }

    fn check_count<T>(&self, round: u64, msgs: &[T]) -> Result<()> {
        if msgs.len() != self.clients {
            return Err(Error::protocol(
                round,
                Party::Server,
                format!("missing client message: {} of {} received", msgs.len(), self.clients),
            ));
        }
        Ok(())
    }

    fn scale2(&self) -> u32 {
        2 * self.codec.scale_bits
    }

    /// `[[g]] * w~ + eps_s` for one client's rows, restricted to `open`.
    fn weigh(&mut self, key: (u64, usize, MaskDir), rows: &[Vec<Ciphertext>], open: &[usize]) -> Result<Vec<Vec<Ciphertext>>> {
        let m = key.1;
        let wk = open
            .iter()
            .map(|&j| self.codec.encode(self.model.top.interactive[m][j]))
            .collect::<Result<Vec<_>>>()?;
        let eps = self.issue(key, rows.len() * open.len());
        let s2 = self.scale2();
        let (pk, codec) = (&self.pk_clients, &self.codec);
        let width = open.len();
        par::map_range(rows.len(), |e| {
            rows[e]
                .iter()
                .zip(&wk)
                .enumerate()
                .map(|(j, (ct, k))| {
                    let noise = codec.encode_at(eps[e * width + j], s2)?;
                    phe::add_plain(pk, &phe::mul_plain(pk, ct, k)?, &noise)
                })
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect()
    }

    /// Weighs every client's encrypted embeddings and masks them with fresh
    /// `eps_s`. Messages are taken in client-id order.
    pub fn forward(&mut self, round: u64, batch: &[usize], msgs: Vec<Message>) -> Result<Vec<Message>> {
        self.check_count(round, &msgs)?;
        if self.current.is_some() {
            return Err(Error::order(Party::Server, "forward started while a round is in flight"));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.y.len()) {
            return Err(Error::shape(format!("sample index below {}", self.y.len()), bad));
        }
        let mut enc_g = Vec::with_capacity(self.clients);
        let mut out = Vec::with_capacity(self.clients);
        let mut entries = None;
        for (m, msg) in msgs.into_iter().enumerate() {
            let rows = match msg {
                Message::EncEmbedding(r) => r,
                other => return Err(unexpected(Party::Server, "ENC_EMBEDDING", &other)),
            };
            let width = self.model.top.interactive[m].len();
            let n = rows.rows.len();
            if rows.slots.is_some()
                || rows.scale_bits != self.codec.scale_bits
                || n == 0
                || n % batch.len().max(1) != 0
                || *entries.get_or_insert(n) != n
                || rows.rows.iter().any(|r| r.len() != width)
            {
                return Err(Error::protocol(round, Party::Client(m), "malformed ENC_EMBEDDING"));
            }
            let open: Vec<usize> = (0..width).collect();
            let weighted = self.weigh((round, m, MaskDir::Forward), &rows.rows, &open)?;
            out.push(Message::NoisyWeightedEnc(CipherRows {
                scale_bits: self.scale2(),
                slots: None,
                rows: weighted,
            }));
            enc_g.push(rows.rows);
        }
        self.current = Some(ServerRound {
            round,
            batch: batch.to_vec(),
            enc_g,
            pass: None,
            dgt: None,
        });
        Ok(out)
    }

    fn current(&mut self, round: u64, what: &str) -> Result<&mut ServerRound> {
        match &mut self.current {
            Some(r) if r.round == round => Ok(r),
            _ => Err(Error::order(Party::Server, format!("{what} with no forward for round {round}"))),
        }
    }

    /// Strips `eps_s`, runs the top model and caches `dL/dz`. Returns the
    /// mean batch loss and the number of correct predictions.
    pub fn finish_forward(&mut self, round: u64, msgs: Vec<Message>) -> Result<(f64, Option<usize>)> {
        self.check_count(round, &msgs)?;
        let (batch, entries) = {
            let cur = self.current(round, "UNMASKED_WEIGHTED")?;
            (cur.batch.clone(), cur.enc_g[0].len())
        };
        let mut zs = vec![Vec::with_capacity(self.clients); entries];
        for (m, msg) in msgs.into_iter().enumerate() {
            let rows = match msg {
                Message::UnmaskedWeighted(r) => r,
                other => return Err(unexpected(Party::Server, "UNMASKED_WEIGHTED", &other)),
            };
            let eps = self.consume((round, m, MaskDir::Forward))?;
            let width = self.model.top.interactive[m].len();
            if rows.slots.is_some() || rows.rows.len() != entries || rows.rows.iter().any(|r| r.len() != width) {
                return Err(Error::protocol(round, Party::Client(m), "malformed UNMASKED_WEIGHTED"));
            }
            for (e, row) in rows.rows.into_iter().enumerate() {
                zs[e].push(row.iter().zip(&eps[e * width..]).map(|(v, s)| v - s).collect());
            }
        }
        let b = batch.len();
        let ys: Vec<f64> = (0..entries).map(|e| self.y[batch[e % b]]).collect();
        let pass = self.model.forward_loss(zs, &ys, self.classes)?;
        let result = (pass.loss, pass.correct);
        self.current(round, "UNMASKED_WEIGHTED")?.pass = Some(pass);
        Ok(result)
    }

    /// `sum_e dL/dz_e * [[g_e]] + eps_s` per client.
    pub fn backward_start(&mut self, round: u64) -> Result<Vec<Message>> {
        let cur = self
            .current
            .take()
            .filter(|c| c.round == round && c.pass.is_some() && c.dgt.is_none());
        let Some(mut cur) = cur else {
            return Err(Error::order(Party::Server, format!("backward before forward completed in round {round}")));
        };
        let pass = cur.pass.as_ref().expect("filtered above");
        let mut out = Vec::with_capacity(self.clients);
        let mut dgt = Vec::with_capacity(self.clients);
        for m in 0..self.clients {
            let width = self.model.top.interactive[m].len();
            let dz_m: Vec<&Vec<f64>> = pass.dz.iter().map(|d| &d[m]).collect();
            let ks = dz_m
                .iter()
                .map(|d| d.iter().map(|&v| self.codec.encode(v)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let eps = self.issue((round, m, MaskDir::Backward), width);
            let s2 = self.scale2();
            let (pk, codec, enc_g) = (&self.pk_clients, &self.codec, &cur.enc_g[m]);
            let cts = par::map_range(width, |j| {
                let column: Vec<Ciphertext> = enc_g.iter().map(|row| row[j].clone()).collect();
                let column_k: Vec<BigUint> = ks.iter().map(|k| k[j].clone()).collect();
                let sum = phe::dot_plain(pk, &column, &column_k)?;
                phe::add_plain(pk, &sum, &codec.encode_at(eps[j], s2)?)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            out.push(Message::EncWeightGrad(EncVec { scale_bits: s2, cts }));
            let w = &self.model.top.interactive[m];
            dgt.push(dz_m.iter().map(|d| hadamard(d, w)).collect());
        }
        cur.dgt = Some(dgt);
        self.current = Some(cur);
        Ok(out)
    }

    /// Removes `eps_s` from the masked weight gradients, steps `w~` and
    /// `alpha0`, and returns `[[dL/dg]] = dL~/dg - [[eps_acc]] * dL/dz`.
    pub fn update(&mut self, round: u64, msgs: Vec<Message>) -> Result<Vec<Message>> {
        self.check_count(round, &msgs)?;
        let cur = self.current.take().filter(|c| c.round == round && c.dgt.is_some());
        let Some(cur) = cur else {
            return Err(Error::order(Party::Server, format!("update before backward in round {round}")));
        };
        let pass = cur.pass.expect("backward implies forward");
        let dgt = cur.dgt.expect("filtered above");
        let mut out = Vec::with_capacity(self.clients);
        for (m, msg) in msgs.into_iter().enumerate() {
            let (grad, noise) = match msg {
                Message::MaskedWeightGradPlusEncNoise { grad, noise } => (grad, noise),
                other => return Err(unexpected(Party::Server, "MASKED_WEIGHT_GRAD_PLUS_ENC_NOISE", &other)),
            };
            let eps = self.consume((round, m, MaskDir::Backward))?;
            let width = self.model.top.interactive[m].len();
            if grad.len() != width || noise.cts.len() != width || noise.scale_bits != self.codec.scale_bits {
                return Err(Error::protocol(round, Party::Client(m), "malformed masked weight gradient"));
            }
            let gw: Vec<f64> = grad.iter().zip(&eps).map(|(g, e)| g - e).collect();
            self.model.step_w(m, &gw)?;
            let s2 = self.scale2();
            let (pk, codec) = (&self.pk_clients, &self.codec);
            let dz = &pass.dz;
            let dgt_m = &dgt[m];
            let rows = par::map_range(dz.len(), |e| {
                (0..width)
                    .map(|j| {
                        let k = codec.encode(-dz[e][m][j])?;
                        let shifted = phe::mul_plain(pk, &noise.cts[j], &k)?;
                        phe::add_plain(pk, &shifted, &codec.encode_at(dgt_m[e][j], s2)?)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            out.push(Message::EncEmbeddingGrad(CipherRows {
                scale_bits: s2,
                slots: None,
                rows,
            }));
        }
        self.model.step_alpha(&pass.alpha)?;
        Ok(out)
    }

    /// Prediction-mode forward: weighs only the slots each client sent.
    pub fn predict_forward(&mut self, msgs: Vec<Message>) -> Result<Vec<Message>> {
        self.predict_seq += 1;
        let seq = self.predict_seq;
        self.check_count(seq, &msgs)?;
        let mut out = Vec::with_capacity(self.clients);
        for (m, msg) in msgs.into_iter().enumerate() {
            let rows = match msg {
                Message::EncEmbedding(r) => r,
                other => return Err(unexpected(Party::Server, "ENC_EMBEDDING", &other)),
            };
            let width = self.model.top.interactive[m].len();
            if rows.slots.as_ref().is_some_and(|s| s.len() != width) {
                return Err(Error::protocol(seq, Party::Client(m), "slot mask has the wrong length"));
            }
            let open = open_indices(&rows.slots, width);
            if rows.rows.iter().any(|r| r.len() != open.len()) {
                return Err(Error::protocol(seq, Party::Client(m), "malformed prediction ENC_EMBEDDING"));
            }
            let weighted = self.weigh((seq, m, MaskDir::Predict), &rows.rows, &open)?;
            out.push(Message::NoisyWeightedEnc(CipherRows {
                scale_bits: self.scale2(),
                slots: rows.slots,
                rows: weighted,
            }));
        }
        Ok(out)
    }

    /// Strips the prediction masks and runs the top model. Closed slots
    /// contribute zero.
    pub fn predict_finish(&mut self, msgs: Vec<Message>) -> Result<Vec<Vec<f64>>> {
        let seq = self.predict_seq;
        self.check_count(seq, &msgs)?;
        let mut zs: Vec<Vec<Vec<f64>>> = Vec::new();
        for (m, msg) in msgs.into_iter().enumerate() {
            let rows = match msg {
                Message::UnmaskedWeighted(r) => r,
                other => return Err(unexpected(Party::Server, "UNMASKED_WEIGHTED", &other)),
            };
            let eps = self.consume((seq, m, MaskDir::Predict))?;
            let width = self.model.top.interactive[m].len();
            let open = open_indices(&rows.slots, width);
            if m == 0 {
                zs = vec![Vec::with_capacity(self.clients); rows.rows.len()];
            }
            if rows.rows.len() != zs.len() || rows.rows.iter().any(|r| r.len() != open.len()) {
                return Err(Error::protocol(seq, Party::Client(m), "malformed prediction UNMASKED_WEIGHTED"));
            }
            for (e, row) in rows.rows.into_iter().enumerate() {
                let mut z = vec![0.0; width];
                for (i, (&j, v)) in open.iter().zip(row).enumerate() {
                    z[j] = v - eps[e * open.len() + i];
                }
                zs[e].push(z);
            }
        }
        self.model.predict_z(&zs)
    }
}
