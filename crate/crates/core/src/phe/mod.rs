//! Paillier encryption over `Z_{n^2}` with `g = n + 1`, plus the fixed-point
//! codec and the interactive squaring subprotocol built on top of it.
//!
//! Keys are immutable once generated. Every operation that needs randomness
//! takes a caller-owned RNG; batch helpers pre-draw one seed per element so
//! their output does not depend on how the work is scheduled.

mod codec;
mod prime;
mod square;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::StreamRng;

pub use codec::{EncryptedReal, FixedPointCodec, DEFAULT_SCALE_BITS};
pub use square::{secure_square, PendingSquares, SquareClient, SquareServer};

/// Smallest modulus size accepted by [`keygen`].
pub const MIN_KEY_BITS: u64 = 512;
/// Key size used outside of explicit insecure test mode.
pub const DEFAULT_KEY_BITS: u64 = 2048;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub n: BigUint,
    pub n_squared: BigUint,
    pub g: BigUint,
}

/// Decryption key. Besides `lambda` and `mu_inv` it keeps the prime factors
/// so decryption can run mod `p^2` and `q^2` separately.
#[derive(Debug, Clone)]
pub struct PrivateKey {
    pub lambda: BigUint,
    pub mu_inv: BigUint,
    public: PublicKey,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    hp: BigUint,
    hq: BigUint,
    q_inv_mod_p: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub value: BigUint,
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let n_squared = &n * &n;
        let g = &n + 1u32;
        PublicKey { n, n_squared, g }
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// 4-byte big-endian length followed by the big-endian bytes of `n`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_biguint(&mut out, &self.n);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (n, used) = read_biguint(bytes)?;
        if used != bytes.len() {
            return Err(Error::Wire("trailing bytes after public key".into()));
        }
        if n < BigUint::from(3u32) {
            return Err(Error::Wire("public key modulus too small".into()));
        }
        Ok(Self::from_modulus(n))
    }

    fn check_plaintext(&self, m: &BigUint, what: &str) -> Result<()> {
        if m >= &self.n {
            return Err(Error::Range(format!("{what} must be below the modulus n")));
        }
        Ok(())
    }

    fn check_ciphertext(&self, c: &Ciphertext) -> Result<()> {
        if c.value >= self.n_squared {
            return Err(Error::Range("ciphertext value must be below n^2".into()));
        }
        Ok(())
    }
}

impl PrivateKey {
    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }
}

impl Ciphertext {
    pub fn new(value: BigUint) -> Self {
        Ciphertext { value }
    }

    pub fn encoded_len(&self) -> usize {
        4 + magnitude_bytes(&self.value).len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        write_biguint(out, &self.value);
    }

    /// Parses one framed ciphertext, returning it and the bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        let (value, used) = read_biguint(bytes)?;
        Ok((Ciphertext { value }, used))
    }
}

fn magnitude_bytes(x: &BigUint) -> Vec<u8> {
    if x.is_zero() {
        Vec::new()
    } else {
        x.to_bytes_be()
    }
}

fn write_biguint(out: &mut Vec<u8>, x: &BigUint) {
    let bytes = magnitude_bytes(x);
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
}

fn read_biguint(bytes: &[u8]) -> Result<(BigUint, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Wire("truncated big-integer length prefix".into()));
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let body = bytes
        .get(4..4 + len)
        .ok_or_else(|| Error::Wire(format!("big integer declares {len} bytes, fewer available")))?;
    Ok((BigUint::from_bytes_be(body), 4 + len))
}

/// Generates a Paillier key pair whose modulus has exactly `bits` bits.
pub fn keygen<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<(PublicKey, PrivateKey)> {
    if bits < MIN_KEY_BITS {
        return Err(Error::Config(format!(
            "key size {bits} is below the minimum of {MIN_KEY_BITS} bits"
        )));
    }
    if !bits.is_multiple_of(2) {
        return Err(Error::Config(format!("key size {bits} must be even")));
    }
    let half = bits / 2;
    let (p, q) = loop {
        let p = prime::random_prime(rng, half);
        let q = prime::random_prime(rng, half);
        if p != q {
            break (p, q);
        }
    };
    Ok(key_from_primes(p, q))
}

fn key_from_primes(p: BigUint, q: BigUint) -> (PublicKey, PrivateKey) {
    let public = PublicKey::from_modulus(&p * &q);
    let n = &public.n;
    let p1 = &p - 1u32;
    let q1 = &q - 1u32;
    let lambda = p1.lcm(&q1);
    // L(g^lambda mod n^2) = lambda mod n when g = n + 1.
    let mu_inv = (&lambda % n)
        .modinv(n)
        .expect("lambda is invertible mod n for distinct equal-size primes");
    let p_squared = &p * &p;
    let q_squared = &q * &q;
    let hp = h_factor(&public.g, &p, &p_squared);
    let hq = h_factor(&public.g, &q, &q_squared);
    let q_inv_mod_p = q.modinv(&p).expect("distinct primes are coprime");
    let sk = PrivateKey {
        lambda,
        mu_inv,
        public: public.clone(),
        p,
        q,
        p_squared,
        q_squared,
        hp,
        hq,
        q_inv_mod_p,
    };
    (public, sk)
}

fn l_function(x: &BigUint, d: &BigUint) -> BigUint {
    (x - 1u32) / d
}

fn h_factor(g: &BigUint, prime: &BigUint, prime_squared: &BigUint) -> BigUint {
    let exp = prime - 1u32;
    let gp = g.modpow(&exp, prime_squared);
    l_function(&gp, prime)
        .modinv(prime)
        .expect("L(g^(p-1)) is invertible mod p")
}

fn random_unit<R: RngCore + ?Sized>(rng: &mut R, n: &BigUint) -> BigUint {
    loop {
        let r = prime::random_below(rng, n);
        if !r.is_zero() && r.gcd(n).is_one() {
            return r;
        }
    }
}

/// `Enc(m) = (1 + m n) r^n mod n^2` with fresh `r`.
pub fn encrypt<R: RngCore + ?Sized>(pk: &PublicKey, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
    pk.check_plaintext(m, "plaintext")?;
    let r = random_unit(rng, &pk.n);
    let rn = r.modpow(&pk.n, &pk.n_squared);
    let gm = (m * &pk.n + 1u32) % &pk.n_squared;
    Ok(Ciphertext::new(gm * rn % &pk.n_squared))
}

/// Encrypts a batch. One seed per element is drawn from `rng` up front, so
/// the result is identical with or without the `parallel` feature.
pub fn encrypt_many<R: RngCore + ?Sized>(
    pk: &PublicKey,
    ms: &[BigUint],
    rng: &mut R,
) -> Result<Vec<Ciphertext>> {
    let jobs: Vec<(u64, &BigUint)> = ms.iter().map(|m| (rng.next_u64(), m)).collect();
    par::try_map(&jobs, |(seed, m)| {
        let mut local = StreamRng::seed_from_u64(*seed);
        encrypt(pk, m, &mut local)
    })
}

pub fn decrypt(sk: &PrivateKey, c: &Ciphertext) -> Result<BigUint> {
    sk.public.check_ciphertext(c)?;
    let mp = decrypt_mod_prime(&c.value, &sk.p, &sk.p_squared, &sk.hp);
    let mq = decrypt_mod_prime(&c.value, &sk.q, &sk.q_squared, &sk.hq);
    // Garner recombination: m = mq + q * ((mp - mq) q^{-1} mod p).
    let mq_mod_p = &mq % &sk.p;
    let diff = if mp >= mq_mod_p {
        mp - mq_mod_p
    } else {
        &sk.p - (mq_mod_p - mp)
    };
    let h = diff * &sk.q_inv_mod_p % &sk.p;
    Ok(mq + h * &sk.q)
}

fn decrypt_mod_prime(c: &BigUint, prime: &BigUint, prime_squared: &BigUint, h: &BigUint) -> BigUint {
    let exp = prime - 1u32;
    let x = (c % prime_squared).modpow(&exp, prime_squared);
    l_function(&x, prime) * h % prime
}

/// Textbook decryption `L(c^lambda mod n^2) * mu mod n`; kept as an
/// independent route for cross-checking the CRT path.
pub fn decrypt_textbook(sk: &PrivateKey, c: &Ciphertext) -> Result<BigUint> {
    sk.public.check_ciphertext(c)?;
    let pk = &sk.public;
    let x = c.value.modpow(&sk.lambda, &pk.n_squared);
    Ok(l_function(&x, &pk.n) * &sk.mu_inv % &pk.n)
}

pub fn decrypt_many(sk: &PrivateKey, cs: &[Ciphertext]) -> Result<Vec<BigUint>> {
    par::try_map(cs, |c| decrypt(sk, c))
}

/// Homomorphic addition: decrypts to `(m1 + m2) mod n`.
pub fn add_ct(pk: &PublicKey, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
    pk.check_ciphertext(c1)?;
    pk.check_ciphertext(c2)?;
    Ok(Ciphertext::new(&c1.value * &c2.value % &pk.n_squared))
}

/// Adds a known plaintext without fresh randomness: `c (1 + k n) mod n^2`.
pub fn add_plain(pk: &PublicKey, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext> {
    pk.check_ciphertext(c)?;
    pk.check_plaintext(k, "plaintext addend")?;
    let gk = (k * &pk.n + 1u32) % &pk.n_squared;
    Ok(Ciphertext::new(&c.value * gk % &pk.n_squared))
}

/// Ciphertext of `-m mod n`.
pub fn neg_ct(pk: &PublicKey, c: &Ciphertext) -> Result<Ciphertext> {
    pk.check_ciphertext(c)?;
    c.value
        .modinv(&pk.n_squared)
        .map(Ciphertext::new)
        .ok_or_else(|| Error::Range("ciphertext is not a unit mod n^2".into()))
}

pub fn sub_ct(pk: &PublicKey, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
    add_ct(pk, c1, &neg_ct(pk, c2)?)
}

/// Plaintext-ciphertext multiplication: decrypts to `(m k) mod n`.
///
/// Multipliers in the upper half of `[0, n)` are negative numbers in the
/// signed embedding; for those the (short) exponent `n - k` is applied to
/// the inverse ciphertext instead.
pub fn mul_plain(pk: &PublicKey, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext> {
    pk.check_ciphertext(c)?;
    pk.check_plaintext(k, "plaintext multiplier")?;
    let half = &pk.n >> 1u32;
    if k > &half {
        let inv = neg_ct(pk, c)?;
        let e = &pk.n - k;
        Ok(Ciphertext::new(inv.value.modpow(&e, &pk.n_squared)))
    } else {
        Ok(Ciphertext::new(c.value.modpow(k, &pk.n_squared)))
    }
}

/// Sum of `k_i * c_i`, evaluated homomorphically.
pub fn dot_plain(pk: &PublicKey, cs: &[Ciphertext], ks: &[BigUint]) -> Result<Ciphertext> {
    if cs.len() != ks.len() {
        return Err(Error::shape(format!("{} multipliers", cs.len()), ks.len()));
    }
    let terms = par::try_map(&(0..cs.len()).collect::<Vec<_>>(), |&i| mul_plain(pk, &cs[i], &ks[i]))?;
    let mut acc = Ciphertext::new(BigUint::one());
    for t in &terms {
        acc = add_ct(pk, &acc, t)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn test_keys(seed: u64) -> (PublicKey, PrivateKey) {
        keygen(512, &mut stream(seed, Stream::Keys)).unwrap()
    }

    #[test]
    fn keygen_roundtrip_and_determinism() {
        let (pk, sk) = test_keys(1);
        assert_eq!(pk.bits(), 512);
        assert_eq!(pk.n_squared, &pk.n * &pk.n);
        assert_eq!(pk.g, &pk.n + 1u32);
        let mut rng = stream(5, Stream::ClientEnc(0));
        let c = encrypt(&pk, &BigUint::from(42u32), &mut rng).unwrap();
        assert_eq!(decrypt(&sk, &c).unwrap(), BigUint::from(42u32));
        let (pk2, _) = test_keys(1);
        assert_eq!(pk.n, pk2.n);
        let (pk3, _) = test_keys(2);
        assert_ne!(pk.n, pk3.n);
    }

    #[test]
    fn keygen_rejects_small_keys() {
        let err = keygen(256, &mut stream(1, Stream::Keys)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn encrypt_edge_cases() {
        let (pk, sk) = test_keys(3);
        let mut rng = stream(3, Stream::ServerEnc);
        let zero = encrypt(&pk, &BigUint::zero(), &mut rng).unwrap();
        assert!(decrypt(&sk, &zero).unwrap().is_zero());
        let a = encrypt(&pk, &BigUint::from(7u32), &mut rng).unwrap();
        let b = encrypt(&pk, &BigUint::from(7u32), &mut rng).unwrap();
        assert_ne!(a, b);
        assert!(matches!(encrypt(&pk, &pk.n, &mut rng), Err(Error::Range(_))));
        let m = BigUint::from(123_456_789u64);
        let c = encrypt(&pk, &m, &mut rng).unwrap();
        assert_eq!(decrypt(&sk, &c).unwrap(), m);
        assert_eq!(decrypt_textbook(&sk, &c).unwrap(), m);
    }

    #[test]
    fn decrypt_rejects_out_of_range() {
        let (pk, sk) = test_keys(4);
        let c = Ciphertext::new(pk.n_squared.clone());
        assert!(matches!(decrypt(&sk, &c), Err(Error::Range(_))));
    }

    #[test]
    fn homomorphic_ops_small_values() {
        let (pk, sk) = test_keys(5);
        let mut rng = stream(5, Stream::ServerEnc);
        let enc = |v: u64, rng: &mut StreamRng| encrypt(&pk, &BigUint::from(v), rng).unwrap();
        let dec = |c: &Ciphertext| decrypt(&sk, c).unwrap();
        let c3 = enc(3, &mut rng);
        let c4 = enc(4, &mut rng);
        assert_eq!(dec(&add_ct(&pk, &c3, &c4).unwrap()), BigUint::from(7u32));
        let c0 = enc(0, &mut rng);
        assert_eq!(dec(&add_ct(&pk, &c3, &c0).unwrap()), BigUint::from(3u32));
        assert_eq!(dec(&mul_plain(&pk, &c3, &BigUint::from(5u32)).unwrap()), BigUint::from(15u32));
        assert_eq!(dec(&mul_plain(&pk, &c3, &BigUint::one()).unwrap()), BigUint::from(3u32));
        assert!(dec(&mul_plain(&pk, &c3, &BigUint::zero()).unwrap()).is_zero());
        assert!(matches!(mul_plain(&pk, &c3, &pk.n), Err(Error::Range(_))));
        // -1 * 3 through the negative-multiplier branch.
        let minus_one = &pk.n - 1u32;
        assert_eq!(dec(&mul_plain(&pk, &c3, &minus_one).unwrap()), &pk.n - 3u32);
        assert_eq!(dec(&sub_ct(&pk, &c4, &c3).unwrap()), BigUint::one());
        assert_eq!(dec(&add_plain(&pk, &c3, &BigUint::from(10u32)).unwrap()), BigUint::from(13u32));
    }

    #[test]
    fn addition_wraps_modulo_n() {
        let (pk, sk) = test_keys(6);
        let mut rng = stream(6, Stream::ServerEnc);
        let a = &pk.n - 1u32;
        let ca = encrypt(&pk, &a, &mut rng).unwrap();
        let cb = encrypt(&pk, &BigUint::from(2u32), &mut rng).unwrap();
        // Integer oracle: (n - 1 + 2) mod n.
        let expected = (&a + 2u32) % &pk.n;
        assert_eq!(decrypt(&sk, &add_ct(&pk, &ca, &cb).unwrap()).unwrap(), expected);
        assert_eq!(expected, BigUint::one());
    }

    #[test]
    fn randomized_homomorphism_against_integer_arithmetic() {
        let (pk, sk) = test_keys(7);
        let mut rng = stream(7, Stream::ServerEnc);
        for _ in 0..100 {
            let a = prime::random_below(&mut rng, &pk.n);
            let b = prime::random_below(&mut rng, &pk.n);
            let ca = encrypt(&pk, &a, &mut rng).unwrap();
            let cb = encrypt(&pk, &b, &mut rng).unwrap();
            assert_eq!(decrypt(&sk, &add_ct(&pk, &ca, &cb).unwrap()).unwrap(), (&a + &b) % &pk.n);
            assert_eq!(decrypt(&sk, &mul_plain(&pk, &ca, &b).unwrap()).unwrap(), (&a * &b) % &pk.n);
        }
    }

    #[test]
    fn batch_helpers_match_scalar_ops() {
        let (pk, sk) = test_keys(8);
        let mut rng = stream(8, Stream::ServerEnc);
        let ms: Vec<BigUint> = (0..12u32).map(|i| BigUint::from(i * 1000 + rng.random_range(0..999u32))).collect();
        let cs = encrypt_many(&pk, &ms, &mut rng).unwrap();
        assert_eq!(decrypt_many(&sk, &cs).unwrap(), ms);
        let ks: Vec<BigUint> = (1..=12u32).map(BigUint::from).collect();
        let dot = dot_plain(&pk, &cs, &ks).unwrap();
        let expected: BigUint = ms.iter().zip(&ks).map(|(m, k)| m * k).sum();
        assert_eq!(decrypt(&sk, &dot).unwrap(), expected);
        // Same seed, same batch.
        let again = encrypt_many(&pk, &ms, &mut stream(8, Stream::ServerEnc));
        let first = encrypt_many(&pk, &ms, &mut stream(8, Stream::ServerEnc));
        assert_eq!(again.unwrap(), first.unwrap());
    }

    #[test]
    fn serialization_framing() {
        let (pk, _) = test_keys(9);
        let bytes = pk.to_bytes();
        assert_eq!(&bytes[..4], &(64u32).to_be_bytes());
        assert_eq!(PublicKey::from_bytes(&bytes).unwrap(), pk);
        let c = Ciphertext::new(BigUint::from(0x0102_0304u32));
        let mut out = Vec::new();
        c.write_to(&mut out);
        assert_eq!(out, vec![0, 0, 0, 4, 1, 2, 3, 4]);
        assert_eq!(c.encoded_len(), out.len());
        let (back, used) = Ciphertext::read_from(&out).unwrap();
        assert_eq!((back, used), (c, 8));
        assert!(Ciphertext::read_from(&out[..6]).is_err());
    }
}
