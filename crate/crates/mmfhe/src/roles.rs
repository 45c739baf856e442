//! User, party and cloud roles.
//!
//! The user generates the key pair, hands the cloud key to the cloud and the
//! parties, and sends its plaintext query to every party. Queries are not
//! hidden from parties; encryption protects the parties' labels and scores
//! from the cloud and from each other. Each party scores the query with its
//! own rule base and sends the encrypted label and quantized score straight
//! to the cloud. The cloud only ever holds the cloud key: it runs the
//! one-hot argmin circuit and returns every encrypted label with its
//! selection bit to the user, who decrypts and recombines them.

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use mmfhe_core::fuzzy::{local_classify, AttributeBank};
use mmfhe_core::gates::{circuit_argmin_onehot, encode_unit_interval, encrypt_int_public, Evaluator, GateCounts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{connect, listen, Conn, Endpoint, Listener};
use crate::protocol::{
    cipher_from_token, cipher_to_token, cloud_key_from_token, cloud_key_to_token, word_from_wire, word_to_wire,
    GateStats, Message, ResultEntry, SessionId, WireBackend, WireWord,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Per-session parameters chosen by the user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub n_b: u32,
    /// Bound on every wait, per stage.
    pub timeout: Duration,
}

impl SessionConfig {
    pub fn new(n_b: u32) -> Result<Self> {
        check_n_b(n_b)?;
        Ok(Self { n_b, timeout: DEFAULT_TIMEOUT })
    }
}

fn check_n_b(n_b: u32) -> Result<()> {
    if n_b == 8 || n_b == 16 {
        Ok(())
    } else {
        Err(Error::input(format!("bit width must be 8 or 16, got {n_b}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub cloud: Endpoint,
    pub parties: Vec<Endpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub label: u32,
    /// Decrypted selection bits, one per party.
    pub deltas: Vec<bool>,
    /// Decrypted party labels.
    pub labels: Vec<u32>,
    pub gates: GateStats,
}

/// The querying role. Holds the secret key and one connection per peer.
pub struct UserClient<B: WireBackend> {
    backend: Arc<B>,
    sk: B::SecretKey,
    ck: B::CloudKey,
    config: SessionConfig,
    cloud: Box<dyn Conn>,
    parties: Vec<Box<dyn Conn>>,
    rng: ChaCha8Rng,
}

impl<B: WireBackend> UserClient<B> {
    /// Generates a key pair from `seed` and connects to every role.
    pub fn connect(backend: Arc<B>, net: &Network, config: SessionConfig, seed: u64) -> Result<Self> {
        check_n_b(config.n_b)?;
        if net.parties.is_empty() {
            return Err(Error::input("at least one party is required"));
        }
        let (sk, ck) = backend.keygen(seed);
        let cloud = connect(&net.cloud)?;
        let parties = net.parties.iter().map(connect).collect::<Result<Vec<_>>>()?;
        let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e55_1011);
        Ok(Self { backend, sk, ck, config, cloud, parties, rng })
    }

    pub fn k(&self) -> usize {
        self.parties.len()
    }

    /// Runs one session and returns the recombined label.
    pub fn query(&mut self, y: &[f64]) -> Result<QueryOutcome> {
        let session = SessionId(self.rng.random());
        let k = self.k() as u32;
        let kd = Message::KeyDistribution {
            session,
            backend: B::ID.to_string(),
            cloud_key: cloud_key_to_token(&*self.backend, &self.ck),
            n_b: self.config.n_b,
            k,
        };
        self.cloud.send(&kd)?;
        for (i, p) in self.parties.iter_mut().enumerate() {
            p.send(&kd)?;
            p.send(&Message::Query { session, party: i as u32, y: y.to_vec() })?;
        }
        // The cloud may wait up to its own timeout for the parties; allow it
        // to report back before giving up here.
        let reply = self.cloud.recv(self.config.timeout * 2)?;
        let (entries, gates) = match reply {
            Message::CloudResult { session: s, entries, gates } if s == session => (entries, gates),
            Message::Abort { session: s, reason } if s == session => {
                return Err(Error::protocol(format!("cloud aborted session {s}: {reason}")))
            }
            other => return Err(Error::protocol(format!("unexpected {} for session {}", other.kind(), other.session()))),
        };
        self.recombine(&entries, gates)
    }

    fn recombine(&self, entries: &[ResultEntry], gates: GateStats) -> Result<QueryOutcome> {
        if entries.len() != self.k() {
            return Err(Error::protocol(format!("cloud returned {} entries for {} parties", entries.len(), self.k())));
        }
        let be = &*self.backend;
        let mut deltas = Vec::with_capacity(entries.len());
        let mut labels = Vec::with_capacity(entries.len());
        for e in entries {
            let word = word_from_wire(be, &e.label, self.config.n_b)?;
            let bits = word.bits.iter().map(|c| be.decrypt(c, &self.sk)).collect::<mmfhe_core::Result<Vec<_>>>()?;
            labels.push(mmfhe_core::gates::recompose(&bits) as u32);
            deltas.push(be.decrypt(&cipher_from_token(be, &e.delta)?, &self.sk)?);
        }
        if deltas.iter().filter(|d| **d).count() != 1 {
            return Err(Error::protocol(format!("selection vector {deltas:?} is not one-hot")));
        }
        let label = labels.iter().zip(&deltas).map(|(l, d)| if *d { *l } else { 0 }).sum();
        Ok(QueryOutcome { label, deltas, labels, gates })
    }
}

fn spawn_acceptor(mut listener: Box<dyn Listener>, handle: impl Fn(Box<dyn Conn>) + Send + Sync + 'static) {
    let handle = Arc::new(handle);
    thread::spawn(move || {
        while let Ok(conn) = listener.accept() {
            let h = Arc::clone(&handle);
            thread::spawn(move || h(conn));
        }
    });
}

/// Receives until the peer goes away, skipping idle timeouts.
fn next_message(conn: &mut dyn Conn, idle: Duration) -> Option<Result<Message>> {
    loop {
        match conn.recv(idle) {
            Ok(m) => return Some(Ok(m)),
            Err(Error::Timeout(_)) => continue,
            Err(Error::Protocol(p)) if p.starts_with("peer closed") => return None,
            Err(Error::Io { .. }) => return None,
            Err(e) => return Some(Err(e)),
        }
    }
}

pub struct PartyServer<B: WireBackend> {
    backend: Arc<B>,
    bank: Arc<AttributeBank>,
    cloud: Endpoint,
    timeout: Duration,
}

impl<B: WireBackend> PartyServer<B> {
    pub fn new(backend: Arc<B>, bank: Arc<AttributeBank>, cloud: Endpoint) -> Self {
        Self { backend, bank, cloud, timeout: DEFAULT_TIMEOUT }
    }

    /// Accepts user connections in the background.
    pub fn spawn(self, listener: Box<dyn Listener>) {
        let me = Arc::new(self);
        spawn_acceptor(listener, move |c| me.handle(c));
    }

    fn handle(&self, mut conn: Box<dyn Conn>) {
        let mut keys: HashMap<SessionId, (B::CloudKey, u32)> = HashMap::new();
        let mut cloud: Option<Box<dyn Conn>> = None;
        while let Some(msg) = next_message(&mut *conn, self.timeout) {
            let msg = match msg {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("party: dropping connection: {e}");
                    return;
                }
            };
            let session = msg.session();
            let reply = match msg {
                Message::KeyDistribution { backend, cloud_key, n_b, .. } => {
                    match self.accept_keys(&backend, &cloud_key, n_b) {
                        Ok(kd) => {
                            keys.insert(session, kd);
                            continue;
                        }
                        Err(e) => Message::Abort { session, reason: e.to_string() },
                    }
                }
                Message::Query { party, y, .. } => match keys.remove(&session) {
                    Some((ck, n_b)) => match self.score(session, party, &y, &ck, n_b) {
                        Ok(m) => m,
                        Err(e) => Message::Abort { session, reason: format!("party {party}: {e}") },
                    },
                    None => Message::Abort { session, reason: format!("party {party}: query before key distribution") },
                },
                other => Message::Abort { session, reason: format!("party cannot handle {}", other.kind()) },
            };
            if let Err(e) = self.to_cloud(&mut cloud, &reply) {
                eprintln!("party: cannot reach cloud for session {session}: {e}");
                cloud = None;
            }
        }
    }

    fn accept_keys(&self, backend: &str, token: &str, n_b: u32) -> Result<(B::CloudKey, u32)> {
        if backend != B::ID {
            return Err(Error::protocol(format!("backend {backend} offered, party runs {}", B::ID)));
        }
        check_n_b(n_b)?;
        Ok((cloud_key_from_token(&*self.backend, token)?, n_b))
    }

    fn score(&self, session: SessionId, party: u32, y: &[f64], ck: &B::CloudKey, n_b: u32) -> Result<Message> {
        let s = local_classify(y, &self.bank)?;
        let be = &*self.backend;
        let label = encrypt_int_public(be, s.label as u64, n_b, ck)?;
        let score = encrypt_int_public(be, encode_unit_interval(s.mu_bar, n_b)?, n_b, ck)?;
        Ok(Message::PartyScore { session, party, label: word_to_wire(be, &label), score: word_to_wire(be, &score) })
    }

    fn to_cloud(&self, cloud: &mut Option<Box<dyn Conn>>, msg: &Message) -> Result<()> {
        if cloud.is_none() {
            *cloud = Some(connect(&self.cloud)?);
        }
        cloud.as_mut().unwrap().send(msg)
    }
}

struct Pending {
    created: Instant,
    scores: HashMap<u32, (WireWord, WireWord)>,
    abort: Option<String>,
}

impl Pending {
    fn new() -> Self {
        Self { created: Instant::now(), scores: HashMap::new(), abort: None }
    }
}

pub struct CloudServer<B: WireBackend> {
    backend: Arc<B>,
    timeout: Duration,
    sessions: Mutex<HashMap<SessionId, Pending>>,
    arrived: Condvar,
    totals: Mutex<(GateCounts, u64)>,
}

impl<B: WireBackend> CloudServer<B> {
    pub fn new(backend: Arc<B>, timeout: Duration) -> Arc<Self> {
        Arc::new(Self {
            backend,
            timeout,
            sessions: Mutex::new(HashMap::new()),
            arrived: Condvar::new(),
            totals: Mutex::new((GateCounts::default(), 0)),
        })
    }

    pub fn spawn(self: &Arc<Self>, listener: Box<dyn Listener>) {
        let me = Arc::clone(self);
        spawn_acceptor(listener, move |c| me.handle(c));
    }

    /// Gate counts summed over all completed sessions, and the session count.
    pub fn totals(&self) -> (GateCounts, u64) {
        *self.totals.lock().unwrap()
    }

    fn handle(&self, mut conn: Box<dyn Conn>) {
        while let Some(msg) = next_message(&mut *conn, self.timeout) {
            let msg = match msg {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("cloud: dropping connection: {e}");
                    return;
                }
            };
            let session = msg.session();
            match msg {
                Message::KeyDistribution { backend, cloud_key, n_b, k, .. } => {
                    let reply = self
                        .run_session(session, &backend, &cloud_key, n_b, k)
                        .unwrap_or_else(|e| Message::Abort { session, reason: e.to_string() });
                    if conn.send(&reply).is_err() {
                        return;
                    }
                }
                Message::PartyScore { party, label, score, .. } => self.record(session, |p| {
                    if p.scores.insert(party, (label, score)).is_some() {
                        p.abort = Some(format!("party {party} scored twice"));
                    }
                }),
                Message::Abort { reason, .. } => self.record(session, |p| {
                    p.abort.get_or_insert(reason);
                }),
                other => {
                    let reason = format!("cloud cannot handle {}", other.kind());
                    let _ = conn.send(&Message::Abort { session, reason });
                }
            }
        }
    }

    fn record(&self, session: SessionId, f: impl FnOnce(&mut Pending)) {
        let mut map = self.sessions.lock().unwrap();
        let stale = self.timeout * 4;
        map.retain(|_, p| p.created.elapsed() < stale);
        f(map.entry(session).or_insert_with(Pending::new));
        self.arrived.notify_all();
    }

    fn run_session(&self, session: SessionId, backend: &str, token: &str, n_b: u32, k: u32) -> Result<Message> {
        let outcome = self.wait_and_evaluate(session, backend, token, n_b, k);
        self.sessions.lock().unwrap().remove(&session);
        outcome
    }

    fn wait_and_evaluate(&self, session: SessionId, backend: &str, token: &str, n_b: u32, k: u32) -> Result<Message> {
        if backend != B::ID {
            return Err(Error::protocol(format!("backend {backend} offered, cloud runs {}", B::ID)));
        }
        check_n_b(n_b)?;
        if k == 0 {
            return Err(Error::protocol("session with zero parties"));
        }
        let be = &*self.backend;
        let ck = cloud_key_from_token(be, token)?;

        let deadline = Instant::now() + self.timeout;
        let mut map = self.sessions.lock().unwrap();
        map.entry(session).or_insert_with(Pending::new);
        let scores = loop {
            let p = map.get_mut(&session).unwrap();
            if let Some(reason) = p.abort.take() {
                return Err(Error::protocol(reason));
            }
            if p.scores.len() >= k as usize {
                break std::mem::take(&mut p.scores);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(Error::Timeout(format!("{} of {k} party scores", p.scores.len())));
            }
            map = self.arrived.wait_timeout(map, left).unwrap().0;
        };
        drop(map);

        let mut labels = Vec::with_capacity(k as usize);
        let mut words = Vec::with_capacity(k as usize);
        for i in 0..k {
            let (label, score) =
                scores.get(&i).ok_or_else(|| Error::protocol(format!("no score from party {i} among {k}")))?;
            word_from_wire(be, label, n_b)?;
            labels.push(label.clone());
            words.push(word_from_wire(be, score, n_b)?);
        }
        let ev = Evaluator::new(be, &ck);
        let deltas = circuit_argmin_onehot(&ev, &words)?;
        let counts = ev.counts();
        {
            let mut t = self.totals.lock().unwrap();
            t.0 = add_counts(&t.0, &counts);
            t.1 += 1;
        }
        let entries = labels
            .into_iter()
            .zip(&deltas)
            .map(|(label, d)| ResultEntry { label, delta: cipher_to_token(be, d) })
            .collect();
        Ok(Message::CloudResult { session, entries, gates: GateStats::from_counts(&counts, be.gate_latency_ms()) })
    }
}

pub fn add_counts(a: &GateCounts, b: &GateCounts) -> GateCounts {
    GateCounts {
        and: a.and + b.and,
        or: a.or + b.or,
        xor: a.xor + b.xor,
        xnor: a.xnor + b.xnor,
        not: a.not + b.not,
        mux: a.mux + b.mux,
    }
}

/// Binds `ep` and serves the cloud role in the background.
pub fn spawn_cloud<B: WireBackend>(backend: Arc<B>, ep: &Endpoint, timeout: Duration) -> Result<(Endpoint, Arc<CloudServer<B>>)> {
    let l = listen(ep)?;
    let bound = l.endpoint();
    let server = CloudServer::new(backend, timeout);
    server.spawn(l);
    Ok((bound, server))
}

/// Binds `ep` and serves a party in the background.
pub fn spawn_party<B: WireBackend>(
    backend: Arc<B>,
    bank: Arc<AttributeBank>,
    ep: &Endpoint,
    cloud: &Endpoint,
    timeout: Duration,
) -> Result<Endpoint> {
    let l = listen(ep)?;
    let bound = l.endpoint();
    let mut p = PartyServer::new(backend, bank, cloud.clone());
    p.timeout = timeout;
    p.spawn(l);
    Ok(bound)
}

/// Serves the cloud role on the calling thread until the listener fails.
pub fn serve_cloud<B: WireBackend>(backend: Arc<B>, ep: &Endpoint, timeout: Duration) -> Result<()> {
    let mut l = listen(ep)?;
    eprintln!("cloud listening on {}", l.endpoint());
    let server = CloudServer::new(backend, timeout);
    loop {
        let c = l.accept()?;
        let s = Arc::clone(&server);
        thread::spawn(move || s.handle(c));
    }
}

/// Serves a party on the calling thread until the listener fails.
pub fn serve_party<B: WireBackend>(
    backend: Arc<B>,
    bank: Arc<AttributeBank>,
    ep: &Endpoint,
    cloud: &Endpoint,
    timeout: Duration,
) -> Result<()> {
    let mut l = listen(ep)?;
    eprintln!("party listening on {}", l.endpoint());
    let mut p = PartyServer::new(backend, bank, cloud.clone());
    p.timeout = timeout;
    let p = Arc::new(p);
    loop {
        let c = l.accept()?;
        let s = Arc::clone(&p);
        thread::spawn(move || s.handle(c));
    }
}
