use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::RngCore;

use super::{add_ct, add_plain, decrypt, encrypt, mul_plain, neg_ct, Ciphertext, PrivateKey, PublicKey};
use crate::error::{Error, Result};

pub const DEFAULT_SCALE_BITS: u32 = 40;

/// Power-of-two fixed point embedded in `Z_n`: `x -> round(x * 2^s)`, with
/// negative values mapped to `n - round(|x| * 2^s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointCodec {
    pub scale_bits: u32,
    pub modulus: BigUint,
    half: BigUint,
}

/// A ciphertext plus the fixed-point scale its plaintext is encoded at.
/// Multiplying by an encoded plaintext adds the two scales.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedReal {
    pub ct: Ciphertext,
    pub scale_bits: u32,
}

/// `(sign, mantissa, exponent)` with `x = sign * mantissa * 2^exponent`.
fn decompose(x: f64) -> (bool, u64, i32) {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (negative, frac << 1, -1075)
    } else {
        (negative, frac | (1u64 << 52), exp - 1075)
    }
}

/// `round(|x| * 2^bits)` computed exactly (ties away from zero).
fn scaled_magnitude(x: f64, bits: u32) -> BigUint {
    let (_, mant, exp) = decompose(x);
    let shift = exp + bits as i32;
    if shift >= 0 {
        BigUint::from(mant) << shift as u32
    } else {
        let down = (-shift) as u32;
        if down >= 64 {
            // |x| * 2^bits < 2^-11 here, so the rounded result is zero.
            return BigUint::zero();
        }
        let q = mant >> down;
        let round_bit = (mant >> (down - 1)) & 1;
        BigUint::from(q + round_bit)
    }
}

impl FixedPointCodec {
    pub fn new(pk: &PublicKey, scale_bits: u32) -> Result<Self> {
        let quarter = pk.bits() / 4;
        if scale_bits as u64 >= quarter {
            return Err(Error::Config(format!(
                "scale of {scale_bits} bits leaves no integer range in a {}-bit modulus",
                pk.bits()
            )));
        }
        Ok(FixedPointCodec {
            scale_bits,
            modulus: pk.n.clone(),
            half: &pk.n >> 1u32,
        })
    }

    fn modulus_bits(&self) -> u64 {
        self.modulus.bits()
    }

    /// Exclusive bound on `|x|` accepted by [`encode`](Self::encode).
    pub fn max_magnitude(&self) -> f64 {
        let bits = self.modulus_bits() as i32 / 4 - self.scale_bits as i32;
        2f64.powi(bits)
    }

    pub fn encode(&self, x: f64) -> Result<BigUint> {
        if !x.is_finite() || x.abs() >= self.max_magnitude() {
            return Err(Error::Range(format!(
                "{x} is outside the fixed-point range +-{}",
                self.max_magnitude()
            )));
        }
        Ok(self.embed(x, self.scale_bits))
    }

    pub fn decode(&self, m: &BigUint) -> f64 {
        self.decode_at(m, self.scale_bits)
    }

    /// Encodes at an arbitrary scale. The encoded magnitude must fit in half
    /// the modulus bits, the size of a product of two base-scale values.
    pub fn encode_at(&self, x: f64, scale_bits: u32) -> Result<BigUint> {
        if !x.is_finite() {
            return Err(Error::Range(format!("cannot encode non-finite {x}")));
        }
        let mag = scaled_magnitude(x, scale_bits);
        if mag.bits() >= self.modulus_bits() / 2 {
            return Err(Error::Range(format!(
                "{x} at scale 2^{scale_bits} overflows the fixed-point range"
            )));
        }
        Ok(self.signed(x.is_sign_negative(), mag))
    }

    pub fn decode_at(&self, m: &BigUint, scale_bits: u32) -> f64 {
        let (negative, mag) = if m > &self.half {
            (true, &self.modulus - m)
        } else {
            (false, m.clone())
        };
        let v = mag.to_f64().unwrap_or(f64::INFINITY) * 2f64.powi(-(scale_bits as i32));
        if negative {
            -v
        } else {
            v
        }
    }

    fn embed(&self, x: f64, scale_bits: u32) -> BigUint {
        self.signed(x.is_sign_negative(), scaled_magnitude(x, scale_bits))
    }

    fn signed(&self, negative: bool, mag: BigUint) -> BigUint {
        if negative && !mag.is_zero() {
            &self.modulus - mag
        } else {
            mag
        }
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, pk: &PublicKey, x: f64, rng: &mut R) -> Result<EncryptedReal> {
        let m = self.encode(x)?;
        Ok(EncryptedReal {
            ct: encrypt(pk, &m, rng)?,
            scale_bits: self.scale_bits,
        })
    }
}

impl EncryptedReal {
    pub fn new(ct: Ciphertext, scale_bits: u32) -> Self {
        EncryptedReal { ct, scale_bits }
    }

    pub fn add(&self, pk: &PublicKey, other: &EncryptedReal) -> Result<EncryptedReal> {
        debug_assert_eq!(self.scale_bits, other.scale_bits, "adding ciphertexts at different scales");
        Ok(EncryptedReal::new(add_ct(pk, &self.ct, &other.ct)?, self.scale_bits))
    }

    pub fn sub(&self, pk: &PublicKey, other: &EncryptedReal) -> Result<EncryptedReal> {
        debug_assert_eq!(self.scale_bits, other.scale_bits, "subtracting ciphertexts at different scales");
        let neg = neg_ct(pk, &other.ct)?;
        Ok(EncryptedReal::new(add_ct(pk, &self.ct, &neg)?, self.scale_bits))
    }

    /// Adds a plaintext real encoded at this ciphertext's scale.
    pub fn add_plain(&self, pk: &PublicKey, codec: &FixedPointCodec, x: f64) -> Result<EncryptedReal> {
        let m = codec.encode_at(x, self.scale_bits)?;
        Ok(EncryptedReal::new(add_plain(pk, &self.ct, &m)?, self.scale_bits))
    }

    /// Multiplies by a plaintext real encoded at the codec's base scale.
    pub fn mul_plain(&self, pk: &PublicKey, codec: &FixedPointCodec, x: f64) -> Result<EncryptedReal> {
        let k = codec.encode(x)?;
        Ok(EncryptedReal::new(
            mul_plain(pk, &self.ct, &k)?,
            self.scale_bits + codec.scale_bits,
        ))
    }

    pub fn decrypt(&self, sk: &PrivateKey, codec: &FixedPointCodec) -> Result<f64> {
        Ok(codec.decode_at(&decrypt(sk, &self.ct)?, self.scale_bits))
    }
}
