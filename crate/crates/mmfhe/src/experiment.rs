//! Training, evaluation and scalability drivers behind the CLI.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mmfhe_core::autoencoder::{learn_wide_cdmma, WideConfig};
use mmfhe_core::fuzzy::{select_global, select_global_quantized, AttributeBank, FuzzyAttribute, LocalScore, MembershipKind};
use mmfhe_core::gates::{
    circuit_argmin_onehot, encode_unit_interval, encrypt_int_public, BitBackend, Evaluator,
    PlainSimBackend, DEFAULT_GATE_LATENCY_MS,
};
use mmfhe_core::learner::LearnConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::archive::{class_file_name, ClassEntry, Hyperparams, Manifest, PartyArchive, FORMAT_ID, FORMAT_VERSION};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::net::Endpoint;
use crate::protocol::GateStats;
use crate::roles::{add_counts, spawn_cloud, spawn_party, Network, SessionConfig, UserClient, DEFAULT_TIMEOUT};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layers: usize,
    pub subspace_dim: usize,
    pub r_grid: Vec<f64>,
    pub membership: MembershipKind,
    /// Seeds the k-means initialisations.
    pub seed: u64,
    /// Bit width recorded in the manifest as the party's default.
    pub n_b: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { layers: 5, subspace_dim: 20, r_grid: vec![0.5], membership: MembershipKind::Gaussian, seed: 1, n_b: 16 }
    }
}

impl TrainConfig {
    fn wide(&self) -> WideConfig {
        let mut learn = LearnConfig::default();
        learn.kmeans.seed = self.seed;
        WideConfig { layers: self.layers, subspace_dim: self.subspace_dim, r_grid: self.r_grid.clone(), learn }
    }
}

/// Learns one wide autoencoder per class held by this party.
pub fn train_party(part: &Dataset, cfg: &TrainConfig) -> Result<PartyArchive> {
    cfg.membership.validate()?;
    let classes = part.classes();
    if classes.is_empty() {
        return Err(Error::input("party holds no training data"));
    }
    let wide = cfg.wide();
    let rows: Vec<_> = classes.iter().map(|&c| part.class_rows(c)).collect();
    let models = rows
        .par_iter()
        .map(|y| learn_wide_cdmma(y, &wide))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        format: FORMAT_ID.into(),
        version: FORMAT_VERSION,
        n_b: cfg.n_b,
        seed: cfg.seed,
        input_dim: part.dim(),
        hyper: Hyperparams {
            layers: cfg.layers,
            subspace_dim: cfg.subspace_dim,
            r_grid: cfg.r_grid.clone(),
            nu: wide.learn.nu,
            membership: cfg.membership.into(),
        },
        classes: classes
            .iter()
            .zip(&rows)
            .map(|(&label, y)| ClassEntry { label, file: class_file_name(label), train_rows: y.nrows() })
            .collect(),
    };
    let entries = classes.into_iter().zip(models).map(|(c, model)| (c, FuzzyAttribute { model, kind: cfg.membership }));
    Ok(PartyArchive { manifest, bank: AttributeBank::new(entries.collect())? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plain,
    Encrypted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub mode: Mode,
    pub n_b: u32,
    pub timeout: Duration,
    /// Seeds key generation and session ids.
    pub seed: u64,
    pub latency_ms: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mode: Mode::Plain, n_b: 16, timeout: DEFAULT_TIMEOUT, seed: 1, latency_ms: DEFAULT_GATE_LATENCY_MS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub label: u32,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    /// Plaintext scoring of the whole test set by every party.
    pub scoring_s: f64,
    /// Encrypted sessions, end to end, wall clock.
    pub protocol_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncryptedStats {
    /// Gates of one cloud evaluation; identical for every query.
    pub per_query: GateStats,
    pub total: GateStats,
    /// Queries whose encrypted label equals the plaintext label on quantized scores.
    pub quantized_matches: usize,
    /// Queries where the raw and quantized selections disagree.
    pub raw_disagreements: usize,
    /// Raw/quantized disagreements whose scores are at least `2^(1 - n_b)` apart.
    pub bin_bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub n_b: u32,
    pub parties: usize,
    pub n_test: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub timings: Timings,
    pub encrypted: Option<EncryptedStats>,
    pub predictions: Vec<u32>,
}

impl ExperimentReport {
    /// Human-readable summary.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode {:?}  n_b {}  parties {}  test {}", self.mode, self.n_b, self.parties, self.n_test);
        let _ = writeln!(s, "{:>6} {:>8} {:>8} {:>9}", "class", "correct", "total", "accuracy");
        for c in &self.per_class {
            let _ = writeln!(s, "{:>6} {:>8} {:>8} {:>9.4}", c.label, c.correct, c.total, c.accuracy);
        }
        let _ = writeln!(s, "{:>6} {:>8} {:>8} {:>9.4}", "all", self.correct, self.n_test, self.accuracy);
        let _ = writeln!(s, "scoring {:.2} s wall", self.timings.scoring_s);
        if let Some(e) = &self.encrypted {
            let _ = writeln!(s, "protocol {:.2} s wall", self.timings.protocol_s);
            let _ = writeln!(
                s,
                "cloud gates per query: {} bootstraps, simulated {:.3} s",
                e.per_query.bootstraps,
                e.per_query.simulated_ms / 1e3
            );
            let _ = writeln!(s, "simulated homomorphic time, all queries: {:.1} s", e.total.simulated_ms / 1e3);
            let _ = writeln!(
                s,
                "matches plaintext-quantized {}/{}; raw disagreements {} ({} outside bin bound)",
                e.quantized_matches, self.n_test, e.raw_disagreements, e.bin_bound_violations
            );
        }
        s
    }
}

/// Local scores of every party for every test row: `out[i][k]`.
pub fn score_all(banks: &[Arc<AttributeBank>], test: &Dataset) -> Result<Vec<Vec<LocalScore>>> {
    let per_party = banks.par_iter().map(|b| b.classify_batch(&test.x)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((0..test.len()).map(|i| per_party.iter().map(|p| p[i]).collect()).collect())
}

static EVAL_RUN: AtomicUsize = AtomicUsize::new(0);

/// Classifies every row of `test` with the given parties.
///
/// Plain mode applies the raw two-stage rule. Encrypted mode runs a full
/// user/party/cloud session per row over in-process channels and compares
/// each answer with the plaintext rule on quantized scores.
pub fn evaluate(banks: &[Arc<AttributeBank>], test: &Dataset, cfg: &EvalConfig) -> Result<ExperimentReport> {
    if banks.is_empty() {
        return Err(Error::input("no parties to evaluate"));
    }
    if test.is_empty() {
        return Err(Error::input("empty test set"));
    }
    SessionConfig::new(cfg.n_b)?;
    let t0 = Instant::now();
    let scores = score_all(banks, test)?;
    let scoring_s = t0.elapsed().as_secs_f64();

    let raw: Vec<usize> = scores.iter().map(|s| select_global(s)).collect::<std::result::Result<_, _>>()?;
    let (predictions, encrypted, protocol_s) = match cfg.mode {
        Mode::Plain => (scores.iter().zip(&raw).map(|(s, &k)| s[k].label).collect(), None, 0.0),
        Mode::Encrypted => {
            let t1 = Instant::now();
            let (p, e) = run_encrypted(banks, test, &scores, &raw, cfg)?;
            (p, Some(e), t1.elapsed().as_secs_f64())
        }
    };
    Ok(report(cfg, banks.len(), test, predictions, encrypted, Timings { scoring_s, protocol_s }))
}

fn run_encrypted(
    banks: &[Arc<AttributeBank>],
    test: &Dataset,
    scores: &[Vec<LocalScore>],
    raw: &[usize],
    cfg: &EvalConfig,
) -> Result<(Vec<u32>, EncryptedStats)> {
    let backend = Arc::new(PlainSimBackend::new(cfg.latency_ms));
    let run = EVAL_RUN.fetch_add(1, Ordering::Relaxed);
    let tag = format!("eval-{}-{run}", std::process::id());
    let (cloud, _server) = spawn_cloud(Arc::clone(&backend), &Endpoint::Mem(format!("{tag}-cloud")), cfg.timeout)?;
    let parties = banks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let ep = Endpoint::Mem(format!("{tag}-party-{k}"));
            spawn_party(Arc::clone(&backend), Arc::clone(b), &ep, &cloud, cfg.timeout)
        })
        .collect::<Result<Vec<_>>>()?;
    let session = SessionConfig { n_b: cfg.n_b, timeout: cfg.timeout };
    let mut user = UserClient::connect(backend, &Network { cloud, parties }, session, cfg.seed)?;

    let mut predictions = Vec::with_capacity(test.len());
    let mut per_query: Option<GateStats> = None;
    let mut total = Default::default();
    let (mut quantized_matches, mut raw_disagreements, mut bin_bound_violations) = (0, 0, 0);
    let bin = 2f64.powi(1 - cfg.n_b as i32);
    for (i, s) in scores.iter().enumerate() {
        let out = user.query(test.x.row(i).iter().copied().collect::<Vec<_>>().as_slice())?;
        let q = select_global_quantized(s, cfg.n_b)?;
        if out.label == s[q].label {
            quantized_matches += 1;
        }
        if s[q].label != s[raw[i]].label {
            raw_disagreements += 1;
            if (s[q].mu_bar - s[raw[i]].mu_bar).abs() >= bin {
                bin_bound_violations += 1;
            }
        }
        if per_query.is_some_and(|p| p.counts() != out.gates.counts()) {
            return Err(Error::protocol("cloud gate counts changed between queries"));
        }
        per_query.get_or_insert(out.gates);
        total = add_counts(&total, &out.gates.counts());
        predictions.push(out.label);
    }
    let stats = EncryptedStats {
        per_query: per_query.unwrap_or_default(),
        total: GateStats::from_counts(&total, cfg.latency_ms),
        quantized_matches,
        raw_disagreements,
        bin_bound_violations,
    };
    Ok((predictions, stats))
}

fn report(
    cfg: &EvalConfig,
    parties: usize,
    test: &Dataset,
    predictions: Vec<u32>,
    encrypted: Option<EncryptedStats>,
    timings: Timings,
) -> ExperimentReport {
    let per_class: Vec<ClassAccuracy> = test
        .classes()
        .into_iter()
        .map(|label| {
            let idx: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] == label).collect();
            let correct = idx.iter().filter(|&&i| predictions[i] == label).count();
            ClassAccuracy { label, correct, total: idx.len(), accuracy: correct as f64 / idx.len() as f64 }
        })
        .collect();
    let correct = per_class.iter().map(|c| c.correct).sum();
    ExperimentReport {
        mode: cfg.mode,
        n_b: cfg.n_b,
        parties,
        n_test: test.len(),
        correct,
        accuracy: correct as f64 / test.len() as f64,
        per_class,
        timings,
        encrypted,
        predictions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub gates: GateStats,
    pub simulated_s: f64,
    pub simulated_s_per_party: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub n_b: u32,
    pub latency_ms: f64,
    pub rows: Vec<SweepRow>,
    /// Least-squares fit `bootstraps = slope * K + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `slope * latency`, in seconds.
    pub per_party_s: f64,
}

impl SweepReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>5} {:>10} {:>10} {:>12} {:>10}", "K", "gates", "bootstraps", "simulated_s", "per_party");
        for r in &self.rows {
            let total = r.gates.counts().total();
            let _ = writeln!(
                s,
                "{:>5} {:>10} {:>10} {:>12.3} {:>10.3}",
                r.k, total, r.gates.bootstraps, r.simulated_s, r.simulated_s_per_party
            );
        }
        let _ = writeln!(
            s,
            "fit: bootstraps = {:.3} K {:+.3}, R^2 = {:.6}; {:.3} s per party at {} ms/gate",
            self.slope, self.intercept, self.r2, self.per_party_s, self.latency_ms
        );
        s
    }
}

/// Cloud cost of the argmin circuit for each party count, with random
/// synthetic party scores. Each selection is checked against the plaintext
/// argmin.
pub fn sweep_k(ks: &[usize], n_b: u32, seed: u64, latency_ms: f64) -> Result<SweepReport> {
    if ks.len() < 2 {
        return Err(Error::input("sweep needs at least two party counts"));
    }
    SessionConfig::new(n_b)?;
    let be = PlainSimBackend::new(latency_ms);
    let (sk, ck) = be.keygen(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 {
            return Err(Error::input("party count must be positive"));
        }
        let values = (0..k).map(|_| encode_unit_interval(rng.random::<f64>(), n_b)).collect::<std::result::Result<Vec<_>, _>>()?;
        let words = values.iter().map(|&v| encrypt_int_public(&be, v, n_b, &ck)).collect::<std::result::Result<Vec<_>, _>>()?;
        let t = Instant::now();
        let ev = Evaluator::new(&be, &ck);
        let onehot = circuit_argmin_onehot(&ev, &words)?;
        let wall_s = t.elapsed().as_secs_f64();
        let bits = onehot.iter().map(|c| be.decrypt(c, &sk)).collect::<std::result::Result<Vec<_>, _>>()?;
        let expect = (0..k).min_by_key(|&i| (values[i], i)).unwrap();
        if bits.iter().filter(|b| **b).count() != 1 || !bits[expect] {
            return Err(Error::protocol(format!("argmin circuit disagrees with plaintext at K={k}")));
        }
        let gates = GateStats::from_counts(&ev.counts(), latency_ms);
        let simulated_s = gates.simulated_ms / 1e3;
        rows.push(SweepRow { k, gates, simulated_s, simulated_s_per_party: simulated_s / k as f64, wall_s });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.gates.bootstraps as f64).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(SweepReport { n_b, latency_ms, rows, slope, intercept, r2, per_party_s: slope * latency_ms / 1e3 })
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, R^2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a * x - b).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (a, b, r2)
}
