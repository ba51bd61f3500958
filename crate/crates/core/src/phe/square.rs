//! Interactive squaring of encrypted values in `[0, 1]`.
//!
//! The client masks `[[p]]` with a uniform `r`, the key holder decrypts
//! `u = p + r`, returns `[[u^2]]`, and the client removes the mask using
//! `p^2 = u^2 - 2 u r + r^2`. Everything is exact integer arithmetic on the
//! fixed-point encodings, so the result sits at twice the input scale.

use num_bigint::BigUint;
use num_traits::One;
use rand::RngCore;

use super::{add_ct, add_plain, decrypt_many, encrypt_many, mul_plain, prime, Ciphertext, EncryptedReal, PrivateKey, PublicKey};
use crate::error::{Error, Result};

/// Client side of the squaring protocol. Holds only the public key.
pub struct SquareClient<R> {
    pk: PublicKey,
    rng: R,
}

/// Masks and masked ciphertexts kept by the client between request and
/// response.
#[derive(Debug, Clone)]
pub struct PendingSquares {
    masks: Vec<BigUint>,
    masked: Vec<Ciphertext>,
    scale_bits: u32,
}

impl PendingSquares {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

impl<R: RngCore> SquareClient<R> {
    pub fn new(pk: PublicKey, rng: R) -> Self {
        SquareClient { pk, rng }
    }

    /// Masks every input with a fresh `r` drawn uniformly from the encodings
    /// of `[0, 1]` at the input scale. Returns the state to keep and the
    /// ciphertexts `[[u]]` to send.
    pub fn request(&mut self, inputs: &[EncryptedReal]) -> Result<(PendingSquares, Vec<Ciphertext>)> {
        let scale_bits = match inputs.first() {
            Some(first) => first.scale_bits,
            None => 0,
        };
        let one = BigUint::one() << scale_bits;
        let bound = &one + 1u32;
        let mut masks = Vec::with_capacity(inputs.len());
        let mut masked = Vec::with_capacity(inputs.len());
        for input in inputs {
            debug_assert_eq!(input.scale_bits, scale_bits, "squaring inputs at mixed scales");
            let r = prime::random_below(&mut self.rng, &bound);
            masked.push(add_plain(&self.pk, &input.ct, &r)?);
            masks.push(r);
        }
        let sent = masked.clone();
        Ok((
            PendingSquares {
                masks,
                masked,
                scale_bits,
            },
            sent,
        ))
    }

    /// Removes the masks from the returned `[[u^2]]` values.
    pub fn finish(&self, pending: PendingSquares, squares: &[Ciphertext]) -> Result<Vec<EncryptedReal>> {
        if squares.len() != pending.masks.len() {
            return Err(Error::shape(
                format!("{} squared values", pending.masks.len()),
                squares.len(),
            ));
        }
        let n = &self.pk.n;
        let mut out = Vec::with_capacity(squares.len());
        for ((r, u), u_sq) in pending.masks.iter().zip(&pending.masked).zip(squares) {
            let two_r = (r << 1u32) % n;
            let minus_two_r = (n - two_r) % n;
            let cross = mul_plain(&self.pk, u, &minus_two_r)?;
            let r_sq = (r * r) % n;
            let ct = add_plain(&self.pk, &add_ct(&self.pk, u_sq, &cross)?, &r_sq)?;
            out.push(EncryptedReal::new(ct, 2 * pending.scale_bits));
        }
        Ok(out)
    }
}

/// Key-holder side of the squaring protocol. Records every `u` it
/// decrypts so transcripts can be audited.
pub struct SquareServer<'a, R> {
    sk: &'a PrivateKey,
    rng: R,
    observed: Vec<BigUint>,
}

impl<'a, R: RngCore> SquareServer<'a, R> {
    pub fn new(sk: &'a PrivateKey, rng: R) -> Self {
        SquareServer {
            sk,
            rng,
            observed: Vec::new(),
        }
    }

    pub fn respond(&mut self, masked: &[Ciphertext]) -> Result<Vec<Ciphertext>> {
        let pk = self.sk.public_key();
        let us = decrypt_many(self.sk, masked)?;
        let squares: Vec<BigUint> = us.iter().map(|u| (u * u) % &pk.n).collect();
        self.observed.extend(us);
        encrypt_many(pk, &squares, &mut self.rng)
    }

    /// Every plaintext this party has decrypted so far.
    pub fn observed(&self) -> &[BigUint] {
        &self.observed
    }
}

/// Runs one squaring round trip in-process.
pub fn secure_square<R1: RngCore, R2: RngCore>(
    client: &mut SquareClient<R1>,
    server: &mut SquareServer<'_, R2>,
    c_p: &EncryptedReal,
) -> Result<EncryptedReal> {
    let (pending, request) = client.request(std::slice::from_ref(c_p))?;
    let response = server.respond(&request)?;
    let mut out = client.finish(pending, &response)?;
    Ok(out.remove(0))
}
