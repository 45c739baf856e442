//! Bit encoding of scores, an abstract encrypted-bit backend and the boolean
//! circuits evaluated by the cloud.

mod circuit;
mod sim;

use alloc::format;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

pub use circuit::{circuit_argmin_onehot, circuit_less_than, circuit_min};
pub use sim::{PlainSimBackend, SimBit, SimCloudKey, SimSecretKey, DEFAULT_GATE_LATENCY_MS};

use crate::{Error, Result};

/// Largest supported word width.
pub const MAX_BITS: u32 = 32;

fn check_width(n_b: u32) -> Result<()> {
    if n_b == 0 || n_b > MAX_BITS {
        return Err(Error::input(format!("bit width must be in 1..={MAX_BITS}, got {n_b}")));
    }
    Ok(())
}

/// `ceil((2^n_b - 1) * m)` for `m` in `[0, 1]`.
pub fn encode_unit_interval(m: f64, n_b: u32) -> Result<u64> {
    check_width(n_b)?;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::input(format!("value {m} outside [0, 1]")));
    }
    let top = ((1u64 << n_b) - 1) as f64;
    Ok(libm::ceil(top * m) as u64)
}

/// Binary digits of `v`, least significant first.
pub fn bit_decompose(v: u64, n_b: u32) -> Result<Vec<bool>> {
    check_width(n_b)?;
    if v >> n_b != 0 {
        return Err(Error::input(format!("{v} does not fit in {n_b} bits")));
    }
    Ok((0..n_b).map(|i| (v >> i) & 1 == 1).collect())
}

pub fn recompose(bits: &[bool]) -> u64 {
    bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u64) << i))
}

/// Gate bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GateCounts {
    pub and: u64,
    pub or: u64,
    pub xor: u64,
    pub xnor: u64,
    pub not: u64,
    pub mux: u64,
}

impl GateCounts {
    pub fn total(&self) -> u64 {
        self.and + self.or + self.xor + self.xnor + self.not + self.mux
    }

    /// Bootstrapping operations: one per binary gate, two per MUX, none for
    /// NOT (a negation needs no noise refresh).
    pub fn bootstraps(&self) -> u64 {
        self.and + self.or + self.xor + self.xnor + 2 * self.mux
    }

    pub fn simulated_ms(&self, latency_ms: f64) -> f64 {
        self.bootstraps() as f64 * latency_ms
    }

    pub fn saturating_sub(&self, o: &GateCounts) -> GateCounts {
        GateCounts {
            and: self.and.saturating_sub(o.and),
            or: self.or.saturating_sub(o.or),
            xor: self.xor.saturating_sub(o.xor),
            xnor: self.xnor.saturating_sub(o.xnor),
            not: self.not.saturating_sub(o.not),
            mux: self.mux.saturating_sub(o.mux),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    And,
    Or,
    Xor,
    Xnor,
    Not,
    Mux,
}

/// Monotone per-gate counters, shareable between threads.
#[derive(Debug, Default)]
pub struct GateCounters {
    counts: [AtomicUsize; 6],
}

impl GateCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bump(&self, gate: Gate) {
        self.counts[gate as usize].fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> GateCounts {
        let c = |g: Gate| self.counts[g as usize].load(Ordering::Relaxed) as u64;
        GateCounts {
            and: c(Gate::And),
            or: c(Gate::Or),
            xor: c(Gate::Xor),
            xnor: c(Gate::Xnor),
            not: c(Gate::Not),
            mux: c(Gate::Mux),
        }
    }
}

/// An encrypted-bit scheme with gate evaluation under a cloud key.
///
/// Only [`decrypt`](Self::decrypt) needs the secret key; everything the cloud
/// runs takes the cloud key alone.
pub trait BitBackend: Send + Sync {
    type SecretKey: Clone + Send + Sync;
    type CloudKey: Clone + Send + Sync;
    type Cipher: Clone + Send + Sync;

    fn keygen(&self, seed: u64) -> (Self::SecretKey, Self::CloudKey);
    fn encrypt(&self, bit: bool, sk: &Self::SecretKey) -> Self::Cipher;
    /// Encryption from public material carried by the cloud key.
    fn encrypt_public(&self, bit: bool, ck: &Self::CloudKey) -> Self::Cipher;
    fn decrypt(&self, c: &Self::Cipher, sk: &Self::SecretKey) -> Result<bool>;
    /// Trivial (noiseless) encryption of a known bit.
    fn constant(&self, bit: bool, ck: &Self::CloudKey) -> Self::Cipher;

    fn and(&self, a: &Self::Cipher, b: &Self::Cipher, ck: &Self::CloudKey) -> Result<Self::Cipher>;
    fn or(&self, a: &Self::Cipher, b: &Self::Cipher, ck: &Self::CloudKey) -> Result<Self::Cipher>;
    fn xor(&self, a: &Self::Cipher, b: &Self::Cipher, ck: &Self::CloudKey) -> Result<Self::Cipher>;
    fn xnor(&self, a: &Self::Cipher, b: &Self::Cipher, ck: &Self::CloudKey) -> Result<Self::Cipher>;
    fn not(&self, a: &Self::Cipher, ck: &Self::CloudKey) -> Result<Self::Cipher>;
    /// `sel ? a : b`
    fn mux(&self, sel: &Self::Cipher, a: &Self::Cipher, b: &Self::Cipher, ck: &Self::CloudKey)
        -> Result<Self::Cipher>;

    /// Simulated wall time of one bootstrapping operation.
    fn gate_latency_ms(&self) -> f64;
}

/// Gate evaluation under one cloud key with its own counters.
pub struct Evaluator<'a, B: BitBackend> {
    pub backend: &'a B,
    pub ck: &'a B::CloudKey,
    pub counters: GateCounters,
}

impl<'a, B: BitBackend> Evaluator<'a, B> {
    pub fn new(backend: &'a B, ck: &'a B::CloudKey) -> Self {
        Self { backend, ck, counters: GateCounters::new() }
    }

    pub fn counts(&self) -> GateCounts {
        self.counters.snapshot()
    }

    pub fn simulated_ms(&self) -> f64 {
        self.counts().simulated_ms(self.backend.gate_latency_ms())
    }

    pub fn constant(&self, bit: bool) -> B::Cipher {
        self.backend.constant(bit, self.ck)
    }

    pub fn and(&self, a: &B::Cipher, b: &B::Cipher) -> Result<B::Cipher> {
        self.counters.bump(Gate::And);
        self.backend.and(a, b, self.ck)
    }

    pub fn or(&self, a: &B::Cipher, b: &B::Cipher) -> Result<B::Cipher> {
        self.counters.bump(Gate::Or);
        self.backend.or(a, b, self.ck)
    }

    pub fn xor(&self, a: &B::Cipher, b: &B::Cipher) -> Result<B::Cipher> {
        self.counters.bump(Gate::Xor);
        self.backend.xor(a, b, self.ck)
    }

    pub fn xnor(&self, a: &B::Cipher, b: &B::Cipher) -> Result<B::Cipher> {
        self.counters.bump(Gate::Xnor);
        self.backend.xnor(a, b, self.ck)
    }

    pub fn not(&self, a: &B::Cipher) -> Result<B::Cipher> {
        self.counters.bump(Gate::Not);
        self.backend.not(a, self.ck)
    }

    pub fn mux(&self, sel: &B::Cipher, a: &B::Cipher, b: &B::Cipher) -> Result<B::Cipher> {
        self.counters.bump(Gate::Mux);
        self.backend.mux(sel, a, b, self.ck)
    }
}

/// `n_b` ciphertext bits, least significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedWord<C> {
    pub bits: Vec<C>,
}

impl<C> EncryptedWord<C> {
    pub fn n_b(&self) -> usize {
        self.bits.len()
    }
}

pub fn encrypt_int<B: BitBackend>(backend: &B, v: u64, n_b: u32, sk: &B::SecretKey) -> Result<EncryptedWord<B::Cipher>> {
    Ok(EncryptedWord { bits: bit_decompose(v, n_b)?.into_iter().map(|b| backend.encrypt(b, sk)).collect() })
}

pub fn encrypt_int_public<B: BitBackend>(
    backend: &B,
    v: u64,
    n_b: u32,
    ck: &B::CloudKey,
) -> Result<EncryptedWord<B::Cipher>> {
    Ok(EncryptedWord { bits: bit_decompose(v, n_b)?.into_iter().map(|b| backend.encrypt_public(b, ck)).collect() })
}

/// Encrypts the `n_b`-bit code of `m` in `[0, 1]`.
pub fn encrypt_word<B: BitBackend>(backend: &B, m: f64, n_b: u32, sk: &B::SecretKey) -> Result<EncryptedWord<B::Cipher>> {
    encrypt_int(backend, encode_unit_interval(m, n_b)?, n_b, sk)
}

pub fn decrypt_word<B: BitBackend>(backend: &B, w: &EncryptedWord<B::Cipher>, sk: &B::SecretKey) -> Result<u64> {
    let bits = w.bits.iter().map(|c| backend.decrypt(c, sk)).collect::<Result<Vec<_>>>()?;
    Ok(recompose(&bits))
}
