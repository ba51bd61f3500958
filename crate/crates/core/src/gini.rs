//! Gini-impurity feature scores computed under the server's Paillier key,
//! and the map from scores to initial feature-gate means.

use std::io::Write;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::One;
use rand::RngCore;

use crate::data::FeatureKind;
use crate::error::{Error, Party, Result};
use crate::nn::Matrix;
use crate::par;
use crate::phe::{
    self, add_ct, add_plain, neg_ct, Ciphertext, EncryptedReal, FixedPointCodec, PendingSquares, PrivateKey,
    PublicKey, SquareClient, SquareServer,
};
use crate::protocol::{Bucket, CipherRows, EncVec, Message, Wire};

/// Scale of the encrypted class probabilities. Squares sit at twice this and
/// the weighted feature scores at three times.
pub const GINI_SCALE_BITS: u32 = 48;
pub const DEFAULT_BINS: usize = 10;
pub const GINI_DELTA: f64 = 1e-6;
/// How far outside `[0, 1]` a decrypted score may fall before it is
/// treated as corrupted.
pub const SCORE_TOLERANCE: f64 = 1e-6;

/// One-hot class labels, `n x c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorMatrix {
    pub n: usize,
    pub c: usize,
    pub entries: Vec<u8>,
}

impl IndicatorMatrix {
    pub fn get(&self, row: usize, class: usize) -> u8 {
        self.entries[row * self.c + class]
    }
}

pub fn build_indicator(labels: &[usize], c: usize) -> Result<IndicatorMatrix> {
    let mut entries = vec![0u8; labels.len() * c];
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::Data(format!("label {l} at row {i} is not a class in 0..{c}")));
        }
        entries[i * c + l] = 1;
    }
    Ok(IndicatorMatrix {
        n: labels.len(),
        c,
        entries,
    })
}

/// Disjoint cells of sample indices induced by one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePartition {
    pub cells: Vec<Vec<usize>>,
    /// Bin edges for continuous features; a value `v` falls in the cell
    /// counting the edges `<= v`.
    pub edges: Option<Vec<f64>>,
    /// Set when the feature takes a single value.
    pub constant: bool,
}

pub fn partition_feature(values: &[f64], kind: FeatureKind, bins: usize) -> Result<FeaturePartition> {
    if values.is_empty() {
        return Err(Error::Data("cannot partition an empty feature".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let constant = sorted[0] == sorted[sorted.len() - 1];
    let (cell_of, n_cells, edges): (Vec<usize>, usize, Option<Vec<f64>>) = match kind {
        FeatureKind::Discrete => {
            let mut distinct = sorted.clone();
            distinct.dedup();
            let idx = values
                .iter()
                .map(|v| distinct.partition_point(|d| d < v))
                .collect();
            (idx, distinct.len(), None)
        }
        FeatureKind::Continuous => {
            if bins < 2 {
                return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
            }
            let n = sorted.len();
            let mut edges: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins]).collect();
            edges.dedup();
            edges.retain(|&e| e > sorted[0]);
            let idx = values.iter().map(|v| edges.partition_point(|e| e <= v)).collect();
            let count = edges.len() + 1;
            (idx, count, Some(edges))
        }
    };
    let mut cells = vec![Vec::new(); n_cells];
    for (i, c) in cell_of.into_iter().enumerate() {
        cells[c].push(i);
    }
    cells.retain(|c| !c.is_empty());
    if constant {
        log::warn!("constant feature: a single Gini cell");
    }
    Ok(FeaturePartition { cells, edges, constant })
}

pub fn partition_all(x: &Matrix, kinds: &[FeatureKind], bins: usize) -> Result<Vec<FeaturePartition>> {
    if kinds.len() != x.cols {
        return Err(Error::shape(format!("{} feature kinds", x.cols), kinds.len()));
    }
    par::try_map(&(0..x.cols).collect::<Vec<_>>(), |&j| {
        let col: Vec<f64> = (0..x.rows).map(|r| x.get(r, j)).collect();
        partition_feature(&col, kinds[j], bins)
    })
}

/// `1 - sum_k p_k^2` from class counts.
pub fn gini_impurity(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&k| (k as f64 / t).powi(2)).sum::<f64>()
}

/// `sum_i |U_i| / N * G(U_i)`
pub fn combine_cells(sizes: &[usize], ginis: &[f64]) -> f64 {
    let n: usize = sizes.iter().sum();
    sizes.iter().zip(ginis).map(|(&s, g)| s as f64 / n as f64 * g).sum()
}

/// Size-weighted Gini impurity of a feature's cells, in the clear.
pub fn plaintext_gini(labels: &[usize], c: usize, part: &FeaturePartition) -> f64 {
    let sizes: Vec<usize> = part.cells.iter().map(Vec::len).collect();
    let ginis: Vec<f64> = part
        .cells
        .iter()
        .map(|cell| {
            let mut counts = vec![0usize; c];
            for &i in cell {
                counts[labels[i]] += 1;
            }
            gini_impurity(&counts)
        })
        .collect();
    combine_cells(&sizes, &ginis)
}

/// Affine map of `1 / (G + delta)` onto `[mu_lo, mu_hi]`: the lowest score
/// gets `mu_hi`. Equal scores all map to the midpoint.
pub fn init_mu_from_gini(scores: &[f64], mu_lo: f64, mu_hi: f64) -> Vec<f64> {
    let v: Vec<f64> = scores.iter().map(|g| 1.0 / (g + GINI_DELTA)).collect();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5 * (mu_lo + mu_hi); scores.len()];
    }
    v.iter().map(|x| mu_lo + (x - lo) * (mu_hi - mu_lo) / (hi - lo)).collect()
}

/// Writes `feature_id,gini,initial_mu` rows.
pub fn write_gini_csv(path: &Path, feature_ids: &[usize], scores: &[f64], mu: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "feature_id,gini,initial_mu")?;
    for ((id, g), m) in feature_ids.iter().zip(scores).zip(mu) {
        writeln!(f, "{id},{g:?},{m:?}")?;
    }
    Ok(())
}

/// Anything that can answer a batched squaring request.
pub trait SquareChannel {
    fn square(&mut self, request: EncVec) -> Result<EncVec>;
}

/// Server side of the Gini protocol.
pub struct GiniServer<'a, R> {
    sk: &'a PrivateKey,
    rng: R,
    square: SquareServer<'a, R>,
    codec: FixedPointCodec,
    scores_seen: Vec<f64>,
}

impl<'a, R: RngCore> GiniServer<'a, R> {
    pub fn new(sk: &'a PrivateKey, rng: R, square_rng: R) -> Result<Self> {
        Ok(GiniServer {
            sk,
            rng,
            square: SquareServer::new(sk, square_rng),
            codec: FixedPointCodec::new(sk.public_key(), 0)?,
            scores_seen: Vec::new(),
        })
    }

    /// `[[A]]`, one ciphertext per indicator entry, at scale 0.
    pub fn encrypt_indicator(&mut self, a: &IndicatorMatrix) -> Result<CipherRows> {
        let ms: Vec<BigUint> = a.entries.iter().map(|&e| BigUint::from(e)).collect();
        let cts = phe::encrypt_many(self.sk.public_key(), &ms, &mut self.rng)?;
        Ok(CipherRows {
            scale_bits: 0,
            slots: None,
            rows: cts.chunks(a.c.max(1)).map(<[Ciphertext]>::to_vec).collect(),
        })
    }

    pub fn respond_square(&mut self, req: &EncVec) -> Result<EncVec> {
        Ok(EncVec {
            scale_bits: 2 * req.scale_bits,
            cts: self.square.respond(&req.cts)?,
        })
    }

    /// Decrypts a client's feature scores. Values outside `[0, 1]` mean the
    /// ciphertexts were corrupted.
    pub fn decrypt_scores(&mut self, enc: &EncVec) -> Result<Vec<f64>> {
        let ms = phe::decrypt_many(self.sk, &enc.cts)?;
        let scores: Vec<f64> = ms.iter().map(|m| self.codec.decode_at(m, enc.scale_bits)).collect();
        if let Some(bad) = scores
            .iter()
            .find(|&&g| !(-SCORE_TOLERANCE..=1.0 + SCORE_TOLERANCE).contains(&g))
        {
            return Err(Error::protocol(0, Party::Server, format!("decrypted Gini score {bad} outside [0, 1]")));
        }
        self.scores_seen.extend(&scores);
        Ok(scores)
    }

    /// Every plaintext the server decrypted: masked squaring inputs `u`.
    pub fn observed_u(&self) -> &[BigUint] {
        self.square.observed()
    }

    pub fn observed_scores(&self) -> &[f64] {
        &self.scores_seen
    }
}

impl<R: RngCore> SquareChannel for GiniServer<'_, R> {
    fn square(&mut self, request: EncVec) -> Result<EncVec> {
        self.respond_square(&request)
    }
}

/// Client side: everything it computes is under the server's key.
pub struct GiniClient<R> {
    pk: PublicKey,
    codec: FixedPointCodec,
    square: SquareClient<R>,
}

impl<R: RngCore> GiniClient<R> {
    pub fn new(pk: PublicKey, rng: R) -> Result<Self> {
        Ok(GiniClient {
            codec: FixedPointCodec::new(&pk, 0)?,
            square: SquareClient::new(pk.clone(), rng),
            pk,
        })
    }

    /// `[[p_k]]` for every cell of every feature, at [`GINI_SCALE_BITS`].
    /// Returned flat in (feature, cell, class) order.
    fn probabilities(&self, enc_a: &CipherRows, parts: &[FeaturePartition]) -> Result<Vec<EncryptedReal>> {
        let c = enc_a.rows.first().map_or(0, Vec::len);
        let (pk, codec) = (&self.pk, &self.codec);
        let per_feature = par::try_map(parts, |part| {
            let mut out = Vec::with_capacity(part.cells.len() * c);
            for cell in &part.cells {
                let recip = codec.encode_at(1.0 / cell.len() as f64, GINI_SCALE_BITS)?;
                for k in 0..c {
                    let mut acc = Ciphertext::new(BigUint::one());
                    for &i in cell {
                        let row = enc_a
                            .rows
                            .get(i)
                            .ok_or_else(|| Error::shape(format!("indicator row {i}"), enc_a.rows.len()))?;
                        acc = add_ct(pk, &acc, &row[k])?;
                    }
                    let p = phe::mul_plain(pk, &acc, &recip)?;
                    out.push(EncryptedReal::new(p, GINI_SCALE_BITS));
                }
            }
            Ok::<_, Error>(out)
        })?;
        Ok(per_feature.concat())
    }

    /// Builds the squaring request for all cell probabilities.
    pub fn start(&mut self, enc_a: &CipherRows, parts: &[FeaturePartition]) -> Result<(PendingSquares, EncVec)> {
        if enc_a.scale_bits != 0 {
            return Err(Error::Wire(format!("indicator at scale {}, expected 0", enc_a.scale_bits)));
        }
        let probs = self.probabilities(enc_a, parts)?;
        let (pending, cts) = self.square.request(&probs)?;
        Ok((
            pending,
            EncVec {
                scale_bits: GINI_SCALE_BITS,
                cts,
            },
        ))
    }

    /// Combines the squared probabilities into `[[G(f)]]` per feature.
    pub fn finish(
        &self,
        pending: PendingSquares,
        resp: &EncVec,
        parts: &[FeaturePartition],
        c: usize,
    ) -> Result<EncVec> {
        let squares = self.square.finish(pending, &resp.cts)?;
        let sq_scale = 2 * GINI_SCALE_BITS;
        let one = BigUint::one() << sq_scale;
        let mut offsets = Vec::with_capacity(parts.len());
        let mut at = 0;
        for p in parts {
            offsets.push(at);
            at += p.cells.len() * c;
        }
        if at != squares.len() {
            return Err(Error::shape(format!("{at} squared probabilities"), squares.len()));
        }
        let idx: Vec<usize> = (0..parts.len()).collect();
        let (pk, codec) = (&self.pk, &self.codec);
        let cts = par::try_map(&idx, |&f| {
            let part = &parts[f];
            let n: usize = part.cells.iter().map(Vec::len).sum();
            let mut acc = Ciphertext::new(BigUint::one());
            for (i, cell) in part.cells.iter().enumerate() {
                let base = offsets[f] + i * c;
                let mut sum = Ciphertext::new(BigUint::one());
                for sq in &squares[base..base + c] {
                    sum = add_ct(pk, &sum, &sq.ct)?;
                }
                let g_cell = add_plain(pk, &neg_ct(pk, &sum)?, &one)?;
                let weight = codec.encode_at(cell.len() as f64 / n as f64, GINI_SCALE_BITS)?;
                acc = add_ct(pk, &acc, &phe::mul_plain(pk, &g_cell, &weight)?)?;
            }
            Ok::<_, Error>(acc)
        })?;
        Ok(EncVec {
            scale_bits: sq_scale + GINI_SCALE_BITS,
            cts,
        })
    }

    /// Full client computation with one batched squaring round trip.
    pub fn encrypted_gini(
        &mut self,
        enc_a: &CipherRows,
        parts: &[FeaturePartition],
        channel: &mut dyn SquareChannel,
    ) -> Result<EncVec> {
        let c = enc_a.rows.first().map_or(0, Vec::len);
        let (pending, req) = self.start(enc_a, parts)?;
        let resp = channel.square(req)?;
        self.finish(pending, &resp, parts, c)
    }
}

/// Per-client output of the Gini protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct GiniReport {
    pub scores: Vec<f64>,
    pub constant: Vec<bool>,
}

/// Runs the Gini protocol over `wire` for every client in id order. The
/// server encrypts the indicator matrix once; each client sends one batched
/// squaring request and its encrypted scores, and gets its own plaintext
/// scores back.
pub fn run_gini_protocol<R: RngCore>(
    wire: &mut Wire,
    server: &mut GiniServer<'_, R>,
    indicator: &IndicatorMatrix,
    clients: &mut [(GiniClient<R>, Vec<FeaturePartition>)],
) -> Result<Vec<GiniReport>> {
    wire.set_bucket(Bucket::Setup);
    let enc_a = server.encrypt_indicator(indicator)?;
    let mut reports = Vec::with_capacity(clients.len());
    for (m, (client, parts)) in clients.iter_mut().enumerate() {
        let me = Party::Client(m);
        wire.send(Party::Server, me, &Message::EncIndicator(enc_a.clone()))?;
        let enc_a = match wire.recv(me, Party::Server)? {
            Message::EncIndicator(rows) => rows,
            other => return Err(unexpected(me, "ENC_INDICATOR", &other)),
        };
        let c = enc_a.rows.first().map_or(0, Vec::len);
        let (pending, req) = client.start(&enc_a, parts)?;
        wire.send(me, Party::Server, &Message::SquareReq(req))?;
        let req = match wire.recv(Party::Server, me)? {
            Message::SquareReq(v) => v,
            other => return Err(unexpected(Party::Server, "SQUARE_REQ", &other)),
        };
        wire.send(Party::Server, me, &Message::SquareResp(server.respond_square(&req)?))?;
        let resp = match wire.recv(me, Party::Server)? {
            Message::SquareResp(v) => v,
            other => return Err(unexpected(me, "SQUARE_RESP", &other)),
        };
        let enc_scores = client.finish(pending, &resp, parts, c)?;
        wire.send(me, Party::Server, &Message::GiniScoresEnc(enc_scores))?;
        let enc_scores = match wire.recv(Party::Server, me)? {
            Message::GiniScoresEnc(v) => v,
            other => return Err(unexpected(Party::Server, "GINI_SCORES_ENC", &other)),
        };
        let scores = server.decrypt_scores(&enc_scores)?;
        wire.send(Party::Server, me, &Message::GiniScoresPlain(scores))?;
        let scores = match wire.recv(me, Party::Server)? {
            Message::GiniScoresPlain(v) => v,
            other => return Err(unexpected(me, "GINI_SCORES_PLAIN", &other)),
        };
        if scores.len() != parts.len() {
            return Err(Error::protocol(0, me, format!("{} scores for {} features", scores.len(), parts.len())));
        }
        reports.push(GiniReport {
            scores,
            constant: parts.iter().map(|p| p.constant).collect(),
        });
    }
    Ok(reports)
}

pub(crate) fn unexpected(at: Party, wanted: &str, got: &Message) -> Error {
    Error::order(at, format!("expected {wanted}, received {}", got.msg_type().name()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phe::keygen;
    use crate::protocol::{Direction, MsgType};
    use crate::rng::{stream, Stream, StreamRng};
    use std::sync::OnceLock;

    fn keys() -> &'static (PublicKey, PrivateKey) {
        static K: OnceLock<(PublicKey, PrivateKey)> = OnceLock::new();
        K.get_or_init(|| keygen(512, &mut stream(31, Stream::Keys)).unwrap())
    }

    fn server() -> GiniServer<'static, StreamRng> {
        GiniServer::new(&keys().1, stream(1, Stream::ServerEnc), stream(1, Stream::ServerMask)).unwrap()
    }

    fn client(m: usize) -> GiniClient<StreamRng> {
        GiniClient::new(keys().0.clone(), stream(1, Stream::Gini(m))).unwrap()
    }

    fn secure_scores(labels: &[usize], c: usize, parts: &[FeaturePartition]) -> Vec<f64> {
        let mut srv = server();
        let enc_a = srv.encrypt_indicator(&build_indicator(labels, c).unwrap()).unwrap();
        let enc = client(0).encrypted_gini(&enc_a, parts, &mut srv).unwrap();
        srv.decrypt_scores(&enc).unwrap()
    }

    fn single_cell(n: usize) -> FeaturePartition {
        FeaturePartition {
            cells: vec![(0..n).collect()],
            edges: None,
            constant: true,
        }
    }

    #[test]
    fn indicator() {
        let a = build_indicator(&[0, 1, 0], 2).unwrap();
        assert_eq!(a.entries, vec![1, 0, 0, 1, 1, 0]);
        assert_eq!(build_indicator(&[0, 0], 1).unwrap().entries, vec![1, 1]);
        assert!(matches!(build_indicator(&[2], 2), Err(Error::Data(_))));
    }

    #[test]
    fn partitions() {
        let p = partition_feature(&[1.0, 2.0, 1.0, 2.0], FeatureKind::Discrete, 10).unwrap();
        assert_eq!(p.cells, vec![vec![0, 2], vec![1, 3]]);
        let mut rng = stream(2, Stream::Data);
        let vals: Vec<f64> = (0..100).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let p = partition_feature(&vals, FeatureKind::Continuous, 4).unwrap();
        assert_eq!(p.cells.iter().map(Vec::len).collect::<Vec<_>>(), vec![25; 4]);
        let p = partition_feature(&[3.0; 7], FeatureKind::Continuous, 10).unwrap();
        assert!(p.constant);
        assert_eq!(p.cells.len(), 1);
        // Every quantile edge lands on the repeated value, so the edges merge
        // away and the skewed feature keeps a single cell.
        let p = partition_feature(&[0.0, 0.0, 0.0, 0.0, 1.0], FeatureKind::Continuous, 4).unwrap();
        assert_eq!(p.cells, vec![vec![0, 1, 2, 3, 4]]);
        assert!(!p.constant);
        let p = partition_feature(&[0.0, 0.0, 1.0, 2.0, 3.0, 4.0], FeatureKind::Continuous, 3).unwrap();
        assert_eq!(p.cells, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert!(partition_feature(&[1.0, 2.0], FeatureKind::Continuous, 1).is_err());
    }

    #[test]
    fn encrypted_cell_ginis() {
        let s = secure_scores(&[0, 0, 1, 1], 2, &[single_cell(4)]);
        assert!((s[0] - 0.5).abs() <= 2f64.powi(-36));
        let s = secure_scores(&[0, 0, 0], 2, &[single_cell(3)]);
        assert!(s[0].abs() <= 2f64.powi(-36));
    }

    #[test]
    fn weighted_feature_gini() {
        // Cells of 10 (5/5 split, Gini 0.5) and 15 (6/9 split, Gini 0.48):
        // weights 0.4 and 0.6.
        let labels: Vec<usize> = (0..10).map(|i| i % 2).chain((0..15).map(|i| usize::from(i < 6))).collect();
        assert!((combine_cells(&[4, 6], &[0.5, 0.48]) - 0.488).abs() < 1e-15);
        let part = FeaturePartition {
            cells: vec![(0..10).collect(), (10..25).collect()],
            edges: None,
            constant: false,
        };
        assert!((plaintext_gini(&labels, 2, &part) - 0.488).abs() < 1e-15);
        let s = secure_scores(&labels, 2, &[part]);
        assert!((s[0] - 0.488).abs() <= 2f64.powi(-36));
    }

    #[test]
    fn score_decryption_checks_range() {
        let (pk, _) = keys();
        let codec = FixedPointCodec::new(pk, 0).unwrap();
        let mut rng = stream(4, Stream::ClientEnc(0));
        let mut srv = server();
        let enc = |x: f64, rng: &mut StreamRng| phe::encrypt(pk, &codec.encode_at(x, 144).unwrap(), rng).unwrap();
        let v = EncVec {
            scale_bits: 144,
            cts: vec![enc(0.488, &mut rng), enc(0.0, &mut rng)],
        };
        let got = srv.decrypt_scores(&v).unwrap();
        assert!((got[0] - 0.488).abs() <= 2f64.powi(-36));
        assert_eq!(got[1], 0.0);
        let bad = EncVec {
            scale_bits: 144,
            cts: vec![enc(1.7, &mut rng)],
        };
        assert!(matches!(srv.decrypt_scores(&bad), Err(Error::Protocol { .. })));
    }

    #[test]
    fn mu_initialization() {
        let mu = init_mu_from_gini(&[0.1, 0.5], 0.0, 0.5);
        assert!((mu[0] - 0.5).abs() < 1e-12 && mu[1].abs() < 1e-12);
        assert_eq!(init_mu_from_gini(&[0.3; 4], 0.0, 0.5), vec![0.25; 4]);
        let mu = init_mu_from_gini(&[0.2, 0.0, 0.4], 0.0, 0.5);
        assert_eq!(mu[1], 0.5);
        assert!(mu[1] > mu[0] && mu[0] > mu[2]);
    }

    #[test]
    fn protocol_over_wire_uses_two_transmissions_per_client() {
        let labels: Vec<usize> = (0..30).map(|i| (i * 7 % 3) % 2).collect();
        let mut rng = stream(9, Stream::Data);
        let x: Vec<f64> = (0..30 * 3).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let x = Matrix::from_vec(30, 3, x).unwrap();
        let kinds = vec![FeatureKind::Continuous; 3];
        let p0 = partition_all(&x.select_columns(&[0, 1]), &kinds[..2], 4).unwrap();
        let p1 = partition_all(&x.select_columns(&[2]), &kinds[..1], 4).unwrap();
        let expect: Vec<f64> = p0.iter().chain(&p1).map(|p| plaintext_gini(&labels, 2, p)).collect();
        let mut clients = vec![(client(0), p0), (client(1), p1)];
        let mut srv = server();
        let mut wire = Wire::in_proc().recording();
        let reports = run_gini_protocol(&mut wire, &mut srv, &build_indicator(&labels, 2).unwrap(), &mut clients).unwrap();
        let got: Vec<f64> = reports.iter().flat_map(|r| r.scores.clone()).collect();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() <= 2f64.powi(-32));
        }
        let types = wire.meter.by_type();
        // ENC_INDICATOR down and GINI_SCORES_ENC up are the two parameter
        // transmissions; squaring and the returned scores are counted apart.
        assert_eq!(types[&MsgType::EncIndicator].messages, 2);
        assert_eq!(types[&MsgType::GiniScoresEnc].messages, 2);
        assert_eq!(types[&MsgType::SquareReq].messages, 2);
        assert_eq!(types[&MsgType::SquareResp].messages, 2);
        assert_eq!(types[&MsgType::GiniScoresPlain].messages, 2);
        assert_eq!(wire.meter.bytes(Bucket::Setup, Direction::Up) + wire.meter.bytes(Bucket::Setup, Direction::Down), wire.bytes_written());
        // The server decrypted only masked squaring inputs and final scores.
        assert_eq!(srv.observed_u().len(), (p_len(&clients)) * 2);
        assert_eq!(srv.observed_scores().len(), 3);
    }

    fn p_len(clients: &[(GiniClient<StreamRng>, Vec<FeaturePartition>)]) -> usize {
        clients.iter().flat_map(|(_, p)| p.iter().map(|f| f.cells.len())).sum()
    }
}
