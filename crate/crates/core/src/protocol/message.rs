//! Wire messages. A frame is a 4-byte big-endian payload length, a 1-byte
//! type tag, then the payload. Vectors carry a 4-byte big-endian length;
//! ciphertexts use the phe framing and reals are big-endian IEEE-754.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::phe::Ciphertext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum MsgType {
    EncIndicator = 1,
    SquareReq = 2,
    SquareResp = 3,
    GiniScoresEnc = 4,
    GiniScoresPlain = 5,
    EncEmbedding = 6,
    NoisyWeightedEnc = 7,
    UnmaskedWeighted = 8,
    EncWeightGrad = 9,
    MaskedWeightGradPlusEncNoise = 10,
    EncEmbeddingGrad = 11,
}

impl MsgType {
    pub const ALL: [MsgType; 11] = [
        MsgType::EncIndicator,
        MsgType::SquareReq,
        MsgType::SquareResp,
        MsgType::GiniScoresEnc,
        MsgType::GiniScoresPlain,
        MsgType::EncEmbedding,
        MsgType::NoisyWeightedEnc,
        MsgType::UnmaskedWeighted,
        MsgType::EncWeightGrad,
        MsgType::MaskedWeightGradPlusEncNoise,
        MsgType::EncEmbeddingGrad,
    ];

    pub fn from_tag(tag: u8) -> Result<Self> {
        MsgType::ALL
            .get((tag as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Wire(format!("unknown message tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::EncIndicator => "ENC_INDICATOR",
            MsgType::SquareReq => "SQUARE_REQ",
            MsgType::SquareResp => "SQUARE_RESP",
            MsgType::GiniScoresEnc => "GINI_SCORES_ENC",
            MsgType::GiniScoresPlain => "GINI_SCORES_PLAIN",
            MsgType::EncEmbedding => "ENC_EMBEDDING",
            MsgType::NoisyWeightedEnc => "NOISY_WEIGHTED_ENC",
            MsgType::UnmaskedWeighted => "UNMASKED_WEIGHTED",
            MsgType::EncWeightGrad => "ENC_WEIGHT_GRAD",
            MsgType::MaskedWeightGradPlusEncNoise => "MASKED_WEIGHT_GRAD_PLUS_ENC_NOISE",
            MsgType::EncEmbeddingGrad => "ENC_EMBEDDING_GRAD",
        }
    }
}

/// Ciphertexts at one fixed-point scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncVec {
    pub scale_bits: u32,
    pub cts: Vec<Ciphertext>,
}

/// A batch of ciphertext rows at one scale. `slots` is present in
/// prediction mode: only the slots marked true are carried in each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherRows {
    pub scale_bits: u32,
    pub slots: Option<Vec<bool>>,
    pub rows: Vec<Vec<Ciphertext>>,
}

/// A batch of plaintext rows, optionally restricted to open slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainRows {
    pub slots: Option<Vec<bool>>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    EncIndicator(CipherRows),
    SquareReq(EncVec),
    SquareResp(EncVec),
    GiniScoresEnc(EncVec),
    GiniScoresPlain(Vec<f64>),
    EncEmbedding(CipherRows),
    NoisyWeightedEnc(CipherRows),
    UnmaskedWeighted(PlainRows),
    EncWeightGrad(EncVec),
    MaskedWeightGradPlusEncNoise { grad: Vec<f64>, noise: EncVec },
    EncEmbeddingGrad(CipherRows),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::EncIndicator(_) => MsgType::EncIndicator,
            Message::SquareReq(_) => MsgType::SquareReq,
            Message::SquareResp(_) => MsgType::SquareResp,
            Message::GiniScoresEnc(_) => MsgType::GiniScoresEnc,
            Message::GiniScoresPlain(_) => MsgType::GiniScoresPlain,
            Message::EncEmbedding(_) => MsgType::EncEmbedding,
            Message::NoisyWeightedEnc(_) => MsgType::NoisyWeightedEnc,
            Message::UnmaskedWeighted(_) => MsgType::UnmaskedWeighted,
            Message::EncWeightGrad(_) => MsgType::EncWeightGrad,
            Message::MaskedWeightGradPlusEncNoise { .. } => MsgType::MaskedWeightGradPlusEncNoise,
            Message::EncEmbeddingGrad(_) => MsgType::EncEmbeddingGrad,
        }
    }

    /// Serializes to a complete frame.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0u8; 5];
        out[4] = self.msg_type() as u8;
        match self {
            Message::SquareReq(v)
            | Message::SquareResp(v)
            | Message::GiniScoresEnc(v)
            | Message::EncWeightGrad(v) => put_enc_vec(&mut out, v),
            Message::EncIndicator(r)
            | Message::EncEmbedding(r)
            | Message::NoisyWeightedEnc(r)
            | Message::EncEmbeddingGrad(r) => put_cipher_rows(&mut out, r),
            Message::GiniScoresPlain(v) => put_reals(&mut out, v),
            Message::UnmaskedWeighted(p) => {
                put_slots(&mut out, p.slots.as_deref());
                put_u32(&mut out, p.rows.len());
                for row in &p.rows {
                    put_reals(&mut out, row);
                }
            }
            Message::MaskedWeightGradPlusEncNoise { grad, noise } => {
                put_reals(&mut out, grad);
                put_enc_vec(&mut out, noise);
            }
        }
        let len = (out.len() - 5) as u32;
        out[..4].copy_from_slice(&len.to_be_bytes());
        out
    }

    /// Parses exactly one frame.
    pub fn decode(frame: &[u8]) -> Result<Message> {
        if frame.len() < 5 {
            return Err(Error::Wire("frame shorter than its header".into()));
        }
        let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
        if frame.len() != 5 + len {
            return Err(Error::Wire(format!("frame declares {len} payload bytes, has {}", frame.len() - 5)));
        }
        let ty = MsgType::from_tag(frame[4])?;
        let mut r = Reader { buf: &frame[5..], pos: 0 };
        let msg = match ty {
            MsgType::SquareReq => Message::SquareReq(r.enc_vec()?),
            MsgType::SquareResp => Message::SquareResp(r.enc_vec()?),
            MsgType::GiniScoresEnc => Message::GiniScoresEnc(r.enc_vec()?),
            MsgType::EncWeightGrad => Message::EncWeightGrad(r.enc_vec()?),
            MsgType::EncIndicator => Message::EncIndicator(r.cipher_rows()?),
            MsgType::EncEmbedding => Message::EncEmbedding(r.cipher_rows()?),
            MsgType::NoisyWeightedEnc => Message::NoisyWeightedEnc(r.cipher_rows()?),
            MsgType::EncEmbeddingGrad => Message::EncEmbeddingGrad(r.cipher_rows()?),
            MsgType::GiniScoresPlain => Message::GiniScoresPlain(r.reals()?),
            MsgType::UnmaskedWeighted => {
                let slots = r.slots()?;
                let n = r.u32()? as usize;
                let mut rows = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    rows.push(r.reals()?);
                }
                Message::UnmaskedWeighted(PlainRows { slots, rows })
            }
            MsgType::MaskedWeightGradPlusEncNoise => {
                let grad = r.reals()?;
                let noise = r.enc_vec()?;
                Message::MaskedWeightGradPlusEncNoise { grad, noise }
            }
        };
        if r.pos != r.buf.len() {
            return Err(Error::Wire(format!("{} trailing bytes after {}", r.buf.len() - r.pos, ty.name())));
        }
        Ok(msg)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_be_bytes());
}

fn put_reals(out: &mut Vec<u8>, v: &[f64]) {
    put_u32(out, v.len());
    for x in v {
        out.extend_from_slice(&x.to_be_bytes());
    }
}

fn put_cts(out: &mut Vec<u8>, cts: &[Ciphertext]) {
    put_u32(out, cts.len());
    for c in cts {
        c.write_to(out);
    }
}

fn put_enc_vec(out: &mut Vec<u8>, v: &EncVec) {
    put_u32(out, v.scale_bits as usize);
    put_cts(out, &v.cts);
}

/// Slot mask: a presence byte, then the slot count and packed bits.
fn put_slots(out: &mut Vec<u8>, slots: Option<&[bool]>) {
    match slots {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            put_u32(out, s.len());
            for chunk in s.chunks(8) {
                let mut b = 0u8;
                for (i, &on) in chunk.iter().enumerate() {
                    if on {
                        b |= 1 << i;
                    }
                }
                out.push(b);
            }
        }
    }
}

fn put_cipher_rows(out: &mut Vec<u8>, r: &CipherRows) {
    put_u32(out, r.scale_bits as usize);
    put_slots(out, r.slots.as_deref());
    put_u32(out, r.rows.len());
    for row in &r.rows {
        put_cts(out, row);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Wire(format!("payload truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let body = self.take(n.checked_mul(8).ok_or_else(|| Error::Wire("vector length overflow".into()))?)?;
        Ok(body
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn cts(&mut self) -> Result<Vec<Ciphertext>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let (c, used) = Ciphertext::read_from(&self.buf[self.pos..])?;
            self.pos += used;
            out.push(c);
        }
        Ok(out)
    }

    fn enc_vec(&mut self) -> Result<EncVec> {
        let scale_bits = self.u32()?;
        Ok(EncVec {
            scale_bits,
            cts: self.cts()?,
        })
    }

    fn slots(&mut self) -> Result<Option<Vec<bool>>> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let n = self.u32()? as usize;
                let bytes = self.take(n.div_ceil(8))?;
                Ok(Some((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()))
            }
            other => Err(Error::Wire(format!("bad slot-mask marker {other}"))),
        }
    }

    fn cipher_rows(&mut self) -> Result<CipherRows> {
        let scale_bits = self.u32()?;
        let slots = self.slots()?;
        let n = self.u32()? as usize;
        let mut rows = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            rows.push(self.cts()?);
        }
        Ok(CipherRows { scale_bits, slots, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;

    fn ct(v: u64) -> Ciphertext {
        Ciphertext::new(BigUint::from(v))
    }

    fn samples() -> Vec<Message> {
        let rows = CipherRows {
            scale_bits: 40,
            slots: Some(vec![true, false, true, true, false, false, true, false, true]),
            rows: vec![vec![ct(5), ct(1 << 40)], vec![ct(0)]],
        };
        vec![
            Message::EncIndicator(CipherRows {
                slots: None,
                ..rows.clone()
            }),
            Message::SquareReq(EncVec {
                scale_bits: 48,
                cts: vec![ct(3)],
            }),
            Message::SquareResp(EncVec {
                scale_bits: 96,
                cts: vec![],
            }),
            Message::GiniScoresEnc(EncVec {
                scale_bits: 144,
                cts: vec![ct(9), ct(10)],
            }),
            Message::GiniScoresPlain(vec![0.25, 0.5]),
            Message::EncEmbedding(rows.clone()),
            Message::NoisyWeightedEnc(rows.clone()),
            Message::UnmaskedWeighted(PlainRows {
                slots: Some(vec![true, false]),
                rows: vec![vec![-1.5, f64::MIN_POSITIVE]],
            }),
            Message::EncWeightGrad(EncVec {
                scale_bits: 80,
                cts: vec![ct(77)],
            }),
            Message::MaskedWeightGradPlusEncNoise {
                grad: vec![1.0, -2.0],
                noise: EncVec {
                    scale_bits: 40,
                    cts: vec![ct(1), ct(2)],
                },
            },
            Message::EncEmbeddingGrad(rows),
        ]
    }

    #[test]
    fn every_type_roundtrips() {
        for m in samples() {
            let frame = m.encode();
            assert_eq!(Message::decode(&frame).unwrap(), m);
            assert_eq!(frame[4], m.msg_type() as u8);
            let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
            assert_eq!(len + 5, frame.len());
        }
    }

    #[test]
    fn exact_frame_layout() {
        let m = Message::GiniScoresPlain(vec![1.0]);
        let f = m.encode();
        let mut expect = vec![0, 0, 0, 12, 5, 0, 0, 0, 1];
        expect.extend_from_slice(&1.0f64.to_be_bytes());
        assert_eq!(f, expect);
    }

    #[test]
    fn malformed_frames_rejected() {
        assert!(matches!(Message::decode(&[0, 0, 0, 0]), Err(Error::Wire(_))));
        assert!(matches!(Message::decode(&[0, 0, 0, 0, 99]), Err(Error::Wire(_))));
        let mut f = Message::GiniScoresPlain(vec![1.0, 2.0]).encode();
        f.truncate(f.len() - 1);
        assert!(Message::decode(&f).is_err());
        let mut f = Message::GiniScoresPlain(vec![1.0]).encode();
        f.push(0);
        f[3] += 1;
        assert!(matches!(Message::decode(&f), Err(Error::Wire(_))));
    }

    proptest! {
        #[test]
        fn plain_rows_roundtrip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 0..5), 0..4),
                                slots in prop::option::of(prop::collection::vec(any::<bool>(), 0..20))) {
            let m = Message::UnmaskedWeighted(PlainRows { slots, rows });
            prop_assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        }
    }
}
