//! Plaintext stand-in for a gate-bootstrapping scheme.
//!
//! Ciphertexts carry the clear bit, the id of the key pair they belong to and
//! a fresh serial number, so equal plaintexts never produce equal tokens. It
//! offers no secrecy; it exists to exercise circuits, wire formats and the
//! cost model.

use core::sync::atomic::{AtomicUsize, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BitBackend;
use crate::{Error, Result};

pub const DEFAULT_GATE_LATENCY_MS: f64 = 13.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimSecretKey {
    pub key_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimCloudKey {
    pub key_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimBit {
    pub key_id: u64,
    pub bit_id: u64,
    pub payload: u8,
}

#[derive(Debug)]
pub struct PlainSimBackend {
    latency_ms: f64,
    next_bit: AtomicUsize,
}

impl Default for PlainSimBackend {
    fn default() -> Self {
        Self::new(DEFAULT_GATE_LATENCY_MS)
    }
}

impl PlainSimBackend {
    pub fn new(latency_ms: f64) -> Self {
        Self { latency_ms, next_bit: AtomicUsize::new(1) }
    }

    fn token(&self, key_id: u64, bit: bool) -> SimBit {
        SimBit { key_id, bit_id: self.next_bit.fetch_add(1, Ordering::Relaxed) as u64, payload: bit as u8 }
    }

    fn open(&self, c: &SimBit, key_id: u64) -> Result<bool> {
        if c.key_id != key_id {
            return Err(Error::KeyMismatch);
        }
        match c.payload {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::input(alloc::format!("corrupt ciphertext payload {v}"))),
        }
    }

    fn gate2(&self, a: &SimBit, b: &SimBit, ck: &SimCloudKey, f: fn(bool, bool) -> bool) -> Result<SimBit> {
        let r = f(self.open(a, ck.key_id)?, self.open(b, ck.key_id)?);
        Ok(self.token(ck.key_id, r))
    }
}

impl BitBackend for PlainSimBackend {
    type SecretKey = SimSecretKey;
    type CloudKey = SimCloudKey;
    type Cipher = SimBit;

    fn keygen(&self, seed: u64) -> (SimSecretKey, SimCloudKey) {
        let key_id = ChaCha8Rng::seed_from_u64(seed).next_u64();
        (SimSecretKey { key_id }, SimCloudKey { key_id })
    }

    fn encrypt(&self, bit: bool, sk: &SimSecretKey) -> SimBit {
        self.token(sk.key_id, bit)
    }

    fn encrypt_public(&self, bit: bool, ck: &SimCloudKey) -> SimBit {
        self.token(ck.key_id, bit)
    }

    fn decrypt(&self, c: &SimBit, sk: &SimSecretKey) -> Result<bool> {
        self.open(c, sk.key_id)
    }

    fn constant(&self, bit: bool, ck: &SimCloudKey) -> SimBit {
        self.token(ck.key_id, bit)
    }

    fn and(&self, a: &SimBit, b: &SimBit, ck: &SimCloudKey) -> Result<SimBit> {
        self.gate2(a, b, ck, |x, y| x & y)
    }

    fn or(&self, a: &SimBit, b: &SimBit, ck: &SimCloudKey) -> Result<SimBit> {
        self.gate2(a, b, ck, |x, y| x | y)
    }

    fn xor(&self, a: &SimBit, b: &SimBit, ck: &SimCloudKey) -> Result<SimBit> {
        self.gate2(a, b, ck, |x, y| x ^ y)
    }

    fn xnor(&self, a: &SimBit, b: &SimBit, ck: &SimCloudKey) -> Result<SimBit> {
        self.gate2(a, b, ck, |x, y| !(x ^ y))
    }

    fn not(&self, a: &SimBit, ck: &SimCloudKey) -> Result<SimBit> {
        let r = !self.open(a, ck.key_id)?;
        Ok(self.token(ck.key_id, r))
    }

    fn mux(&self, sel: &SimBit, a: &SimBit, b: &SimBit, ck: &SimCloudKey) -> Result<SimBit> {
        let s = self.open(sel, ck.key_id)?;
        let (x, y) = (self.open(a, ck.key_id)?, self.open(b, ck.key_id)?);
        Ok(self.token(ck.key_id, if s { x } else { y }))
    }

    fn gate_latency_ms(&self) -> f64 {
        self.latency_ms
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::Evaluator;

    #[test]
    fn encrypt_decrypt_identity() {
        let be = PlainSimBackend::default();
        let (sk, ck) = be.keygen(3);
        for b in [false, true] {
            assert_eq!(be.decrypt(&be.encrypt(b, &sk), &sk).unwrap(), b);
            assert_eq!(be.decrypt(&be.encrypt_public(b, &ck), &sk).unwrap(), b);
            assert_eq!(be.decrypt(&be.constant(b, &ck), &sk).unwrap(), b);
        }
    }

    #[test]
    fn truth_tables() {
        let be = PlainSimBackend::default();
        let (sk, ck) = be.keygen(4);
        let ev = Evaluator::new(&be, &ck);
        let d = |c: &SimBit| be.decrypt(c, &sk).unwrap();
        for x in [false, true] {
            let cx = be.encrypt(x, &sk);
            assert_eq!(d(&ev.not(&cx).unwrap()), !x);
            for y in [false, true] {
                let cy = be.encrypt(y, &sk);
                assert_eq!(d(&ev.and(&cx, &cy).unwrap()), x && y);
                assert_eq!(d(&ev.or(&cx, &cy).unwrap()), x || y);
                assert_eq!(d(&ev.xor(&cx, &cy).unwrap()), x ^ y);
                assert_eq!(d(&ev.xnor(&cx, &cy).unwrap()), x == y);
                for s in [false, true] {
                    let cs = be.encrypt(s, &sk);
                    assert_eq!(d(&ev.mux(&cs, &cx, &cy).unwrap()), if s { x } else { y });
                }
            }
        }
        let c = ev.counts();
        assert_eq!((c.and, c.or, c.xor, c.xnor, c.not, c.mux), (4, 4, 4, 4, 2, 8));
    }

    #[test]
    fn foreign_key_rejected() {
        let be = PlainSimBackend::default();
        let (sk1, ck1) = be.keygen(1);
        let (sk2, _) = be.keygen(2);
        let c = be.encrypt(true, &sk2);
        assert_eq!(be.decrypt(&c, &sk1), Err(Error::KeyMismatch));
        assert_eq!(be.not(&c, &ck1), Err(Error::KeyMismatch));
    }

    #[test]
    fn tokens_are_fresh() {
        let be = PlainSimBackend::default();
        let (sk, _) = be.keygen(1);
        assert_ne!(be.encrypt(true, &sk), be.encrypt(true, &sk));
    }
}
