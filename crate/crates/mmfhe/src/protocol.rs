//! Wire format shared by the user, party and cloud roles.
//!
//! A frame is a 4-byte big-endian body length followed by a UTF-8 JSON body
//! `{"v":1,"crc":<crc32 of msg>,"msg":{...}}`. Ciphertexts and keys travel as
//! base64 tokens produced by a [`WireBackend`].

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use mmfhe_core::gates::{BitBackend, EncryptedWord, GateCounts, PlainSimBackend, SimBit, SimCloudKey};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WIRE_VERSION: u32 = 1;
/// Upper bound on a frame body; larger length prefixes are rejected unread.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub u128);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl Serialize for SessionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SessionId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 32 {
            return Err(serde::de::Error::custom("session id must be 32 hex digits"));
        }
        u128::from_str_radix(&s, 16).map(SessionId).map_err(serde::de::Error::custom)
    }
}

/// Base64 ciphertext tokens, least significant bit first.
pub type WireWord = Vec<String>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub and: u64,
    pub or: u64,
    pub xor: u64,
    pub xnor: u64,
    pub not: u64,
    pub mux: u64,
    pub bootstraps: u64,
    pub simulated_ms: f64,
}

impl GateStats {
    pub fn from_counts(c: &GateCounts, latency_ms: f64) -> Self {
        Self {
            and: c.and,
            or: c.or,
            xor: c.xor,
            xnor: c.xnor,
            not: c.not,
            mux: c.mux,
            bootstraps: c.bootstraps(),
            simulated_ms: c.simulated_ms(latency_ms),
        }
    }

    pub fn counts(&self) -> GateCounts {
        GateCounts { and: self.and, or: self.or, xor: self.xor, xnor: self.xnor, not: self.not, mux: self.mux }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub label: WireWord,
    pub delta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Message {
    /// User to cloud and parties: session parameters and the cloud key.
    KeyDistribution { session: SessionId, backend: String, cloud_key: String, n_b: u32, k: u32 },
    /// User to party `party`.
    Query { session: SessionId, party: u32, y: Vec<f64> },
    /// Party to cloud: encrypted label and quantized score.
    PartyScore { session: SessionId, party: u32, label: WireWord, score: WireWord },
    /// Cloud to user: every party's label with its selection bit.
    CloudResult { session: SessionId, entries: Vec<ResultEntry>, gates: GateStats },
    /// Any role to its peer when a session has to be abandoned.
    Abort { session: SessionId, reason: String },
}

impl Message {
    pub fn session(&self) -> SessionId {
        match self {
            Message::KeyDistribution { session, .. }
            | Message::Query { session, .. }
            | Message::PartyScore { session, .. }
            | Message::CloudResult { session, .. }
            | Message::Abort { session, .. } => *session,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::KeyDistribution { .. } => "key-distribution",
            Message::Query { .. } => "query",
            Message::PartyScore { .. } => "party-score",
            Message::CloudResult { .. } => "cloud-result",
            Message::Abort { .. } => "abort",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    v: u32,
    crc: u32,
    msg: serde_json::Value,
}

/// Serializes `msg` into a complete frame, length prefix included.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>> {
    let value = serde_json::to_value(msg).map_err(|e| Error::protocol(e.to_string()))?;
    let crc = crc32fast::hash(value.to_string().as_bytes());
    let body = serde_json::to_vec(&Envelope { v: WIRE_VERSION, crc, msg: value })
        .map_err(|e| Error::protocol(e.to_string()))?;
    if body.len() > MAX_FRAME {
        return Err(Error::protocol(format!("frame of {} bytes exceeds the limit", body.len())));
    }
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Parses a frame body (without the length prefix).
pub fn decode_body(body: &[u8]) -> Result<Message> {
    let env: Envelope = serde_json::from_slice(body).map_err(|e| Error::protocol(format!("malformed frame: {e}")))?;
    if env.v != WIRE_VERSION {
        return Err(Error::protocol(format!("unsupported wire version {}", env.v)));
    }
    if crc32fast::hash(env.msg.to_string().as_bytes()) != env.crc {
        return Err(Error::protocol("frame checksum mismatch"));
    }
    serde_json::from_value(env.msg).map_err(|e| Error::protocol(format!("malformed message: {e}")))
}

/// Parses a complete frame and insists that nothing follows it.
pub fn decode_frame(frame: &[u8]) -> Result<Message> {
    let (len, body) = split_prefix(frame)?;
    if body.len() != len {
        return Err(Error::protocol(format!("frame announces {len} bytes but carries {}", body.len())));
    }
    decode_body(body)
}

fn split_prefix(frame: &[u8]) -> Result<(usize, &[u8])> {
    if frame.len() < 4 {
        return Err(Error::protocol("frame shorter than its length prefix"));
    }
    let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(Error::protocol(format!("frame length {len} exceeds the limit")));
    }
    Ok((len, &frame[4..]))
}

/// Reads the length prefix of a frame header.
pub fn frame_len(prefix: [u8; 4]) -> Result<usize> {
    split_prefix(&prefix).map(|(l, _)| l)
}

/// A [`BitBackend`] whose cloud keys and ciphertexts can be put on the wire.
pub trait WireBackend: BitBackend<SecretKey: 'static, CloudKey: 'static, Cipher: 'static> + 'static {
    const ID: &'static str;

    fn cipher_bytes(&self, c: &Self::Cipher) -> Vec<u8>;
    fn cipher_from_bytes(&self, b: &[u8]) -> Result<Self::Cipher>;
    fn cloud_key_bytes(&self, ck: &Self::CloudKey) -> Vec<u8>;
    fn cloud_key_from_bytes(&self, b: &[u8]) -> Result<Self::CloudKey>;
}

impl WireBackend for PlainSimBackend {
    const ID: &'static str = "plain-sim";

    fn cipher_bytes(&self, c: &SimBit) -> Vec<u8> {
        let mut out = Vec::with_capacity(17);
        out.extend_from_slice(&c.key_id.to_le_bytes());
        out.extend_from_slice(&c.bit_id.to_le_bytes());
        out.push(c.payload);
        out
    }

    fn cipher_from_bytes(&self, b: &[u8]) -> Result<SimBit> {
        if b.len() != 17 {
            return Err(Error::protocol(format!("ciphertext token of {} bytes, expected 17", b.len())));
        }
        Ok(SimBit {
            key_id: u64::from_le_bytes(b[..8].try_into().unwrap()),
            bit_id: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            payload: b[16],
        })
    }

    fn cloud_key_bytes(&self, ck: &SimCloudKey) -> Vec<u8> {
        ck.key_id.to_le_bytes().to_vec()
    }

    fn cloud_key_from_bytes(&self, b: &[u8]) -> Result<SimCloudKey> {
        let raw: [u8; 8] = b.try_into().map_err(|_| Error::protocol("cloud key token must be 8 bytes"))?;
        Ok(SimCloudKey { key_id: u64::from_le_bytes(raw) })
    }
}

pub fn cipher_to_token<B: WireBackend>(be: &B, c: &B::Cipher) -> String{
    B64.encode(be.cipher_bytes(c))
}

pub fn cipher_from_token<B: WireBackend>(be: &B, t: &str) -> Result<B::Cipher>{
    let raw = B64.decode(t).map_err(|e| Error::protocol(format!("bad ciphertext token: {e}")))?;
    be.cipher_from_bytes(&raw)
}

pub fn word_to_wire<B: WireBackend>(be: &B, w: &EncryptedWord<B::Cipher>) -> WireWord{
    w.bits.iter().map(|c| cipher_to_token(be, c)).collect()
}

pub fn word_from_wire<B: WireBackend>(be: &B, w: &[String], n_b: u32) -> Result<EncryptedWord<B::Cipher>>{
    if w.len() != n_b as usize {
        return Err(Error::protocol(format!("word of {} bits, session uses {n_b}", w.len())));
    }
    Ok(EncryptedWord { bits: w.iter().map(|t| cipher_from_token(be, t)).collect::<Result<_>>()? })
}

pub fn cloud_key_to_token<B: WireBackend>(be: &B, ck: &B::CloudKey) -> String{
    B64.encode(be.cloud_key_bytes(ck))
}

pub fn cloud_key_from_token<B: WireBackend>(be: &B, t: &str) -> Result<B::CloudKey>{
    let raw = B64.decode(t).map_err(|e| Error::protocol(format!("bad cloud key token: {e}")))?;
    be.cloud_key_from_bytes(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Message {
        Message::Query { session: SessionId(0x0123_4567_89ab_cdef_0011_2233_4455_6677), party: 1, y: vec![0.5, -1.25] }
    }

    #[test]
    fn frame_round_trip() {
        let f = encode_frame(&sample()).unwrap();
        assert_eq!(u32::from_be_bytes(f[..4].try_into().unwrap()) as usize, f.len() - 4);
        assert_eq!(decode_frame(&f).unwrap(), sample());
        let body = std::str::from_utf8(&f[4..]).unwrap();
        assert!(body.starts_with("{\"v\":1,"));
        assert!(body.contains("\"session\":\"0123456789abcdef0011223344556677\""));
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let f = encode_frame(&sample()).unwrap();
        for i in 0..f.len() {
            let mut t = f.clone();
            t[i] ^= 0x04;
            assert!(decode_frame(&t).is_err(), "flip at byte {i} went unnoticed");
        }
    }

    #[test]
    fn truncation_and_wrong_version_rejected() {
        let f = encode_frame(&sample()).unwrap();
        assert!(decode_frame(&f[..f.len() - 1]).is_err());
        assert!(decode_frame(&f[..3]).is_err());
        let body = String::from_utf8(f[4..].to_vec()).unwrap().replacen("\"v\":1", "\"v\":2", 1);
        assert!(decode_body(body.as_bytes()).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn sim_tokens_round_trip() {
        let be = PlainSimBackend::default();
        let (sk, ck) = be.keygen(9);
        let c = be.encrypt(true, &sk);
        let back = cipher_from_token(&be, &cipher_to_token(&be, &c)).unwrap();
        assert_eq!(back, c);
        assert_eq!(cloud_key_from_token(&be, &cloud_key_to_token(&be, &ck)).unwrap(), ck);
        assert!(cipher_from_token(&be, "AAAA").is_err());
        assert!(cipher_from_token(&be, "not base64!").is_err());
    }
}
