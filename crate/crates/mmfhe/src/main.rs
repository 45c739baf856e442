use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use mmfhe::archive::PartyArchive;
use mmfhe::dataset::{parse_partition, read_csv, read_idx, Dataset, Normalization};
use mmfhe::experiment::{evaluate, sweep_k, train_party, EvalConfig, Mode, TrainConfig};
use mmfhe::net::Endpoint;
use mmfhe::roles::{serve_cloud, serve_party, Network, SessionConfig, UserClient};
use mmfhe::{Error, Result};
use mmfhe_core::fuzzy::MembershipKind;
use mmfhe_core::gates::{PlainSimBackend, DEFAULT_GATE_LATENCY_MS};

#[derive(Parser)]
#[command(name = "mmfhe", version, about = "Membership-mapping fuzzy classifiers with encrypted cross-party inference")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one archive per party.
    Train(TrainArgs),
    /// Classify a test set with trained party archives.
    Eval(EvalArgs),
    /// Serve a party archive.
    ServeParty(ServePartyArgs),
    /// Serve the cloud role.
    ServeCloud(ServeCloudArgs),
    /// Classify CSV rows through running parties and cloud.
    Query(QueryArgs),
    /// Cloud circuit cost as a function of the party count.
    SweepK(SweepArgs),
}

#[derive(Args)]
struct DataArgs {
    /// IDX image file (use with --labels).
    #[arg(long, requires = "labels", conflicts_with = "csv")]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// CSV file with one sample per row.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Zero-based label column of the CSV.
    #[arg(long, default_value_t = 0)]
    label_col: usize,
    /// Zero-based party column of the CSV, for `--partition by-column`.
    #[arg(long)]
    group_col: Option<usize>,
    #[arg(long, value_enum, default_value_t = Normalization::Divide255)]
    normalize: Normalization,
    /// Keep this many randomly chosen rows.
    #[arg(long)]
    subsample: Option<usize>,
    /// Split the file: `train` keeps this fraction, `eval` the rest.
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

enum Side {
    Train,
    Test,
}

impl DataArgs {
    fn load(&self, side: Side) -> Result<Dataset> {
        let mut d = match (&self.images, &self.labels, &self.csv) {
            (Some(i), Some(l), None) => read_idx(i, l)?,
            (None, None, Some(c)) => read_csv(c, self.label_col, self.group_col)?,
            _ => return Err(Error::input("give either --images with --labels, or --csv")),
        };
        d.normalize(self.normalize);
        if let Some(f) = self.train_frac {
            let (train, test) = d.split(f, self.data_seed)?;
            d = match side {
                Side::Train => train,
                Side::Test => test,
            };
        }
        if let Some(n) = self.subsample {
            d = d.subsample(n, self.data_seed);
        }
        Ok(d)
    }
}

fn parse_membership(s: &str) -> std::result::Result<MembershipKind, String> {
    match s {
        "gaussian" => Ok(MembershipKind::Gaussian),
        _ => {
            let nu = s.strip_prefix("student-t:").ok_or("expected gaussian or student-t:<nu>")?;
            let nu: f64 = nu.parse().map_err(|e| format!("bad nu: {e}"))?;
            let k = MembershipKind::StudentT { nu };
            k.validate().map_err(|e| e.to_string())?;
            Ok(k)
        }
    }
}

fn parse_endpoint(s: &str) -> std::result::Result<Endpoint, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// odd-even, by-column or class-ranges:0-4,5-9
    #[arg(long, default_value = "odd-even")]
    partition: String,
    /// Output directory; party k is written to `<out>/party-<k>`.
    #[arg(long)]
    out: PathBuf,
    #[arg(short = 'L', long, default_value_t = 5)]
    layers: usize,
    /// Subspace dimension of the first layer.
    #[arg(short = 'n', long, default_value_t = 20)]
    subspace_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    r_grid: Vec<f64>,
    /// gaussian or student-t:<nu>
    #[arg(long, value_parser = parse_membership, default_value = "gaussian")]
    membership: MembershipKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    n_b: u32,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Party archive directories, in party order.
    #[arg(long, value_delimiter = ',', required = true)]
    archives: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Plain)]
    mode: Mode,
    #[arg(long, default_value_t = 16)]
    n_b: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
    #[arg(long, default_value_t = DEFAULT_GATE_LATENCY_MS)]
    latency_ms: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ServePartyArgs {
    #[arg(long)]
    archive: PathBuf,
    /// host:port to listen on.
    #[arg(long, value_parser = parse_endpoint)]
    listen: Endpoint,
    /// host:port of the cloud.
    #[arg(long, value_parser = parse_endpoint)]
    cloud: Endpoint,
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
}

#[derive(Args)]
struct ServeCloudArgs {
    #[arg(long, value_parser = parse_endpoint)]
    listen: Endpoint,
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
    #[arg(long, default_value_t = DEFAULT_GATE_LATENCY_MS)]
    latency_ms: f64,
}

#[derive(Args)]
struct QueryArgs {
    /// Party endpoints, in party order.
    #[arg(long, value_delimiter = ',', value_parser = parse_endpoint, required = true)]
    parties: Vec<Endpoint>,
    #[arg(long, value_parser = parse_endpoint)]
    cloud: Endpoint,
    /// CSV of feature rows without a label column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Normalization::Divide255)]
    normalize: Normalization,
    #[arg(long, default_value_t = 16)]
    n_b: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,10,25,50,100")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    n_b: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_GATE_LATENCY_MS)]
    latency_ms: f64,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::input(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(a: TrainArgs) -> Result<()> {
    let data = a.data.load(Side::Train)?;
    let parts = data.partition(&parse_partition(&a.partition)?)?;
    let cfg = TrainConfig {
        layers: a.layers,
        subspace_dim: a.subspace_dim,
        r_grid: a.r_grid,
        membership: a.membership,
        seed: a.seed,
        n_b: a.n_b,
    };
    for (k, part) in parts.iter().enumerate() {
        let archive = train_party(part, &cfg)?;
        let dir = a.out.join(format!("party-{k}"));
        archive.save(&dir)?;
        let classes: Vec<String> = archive.manifest.classes.iter().map(|c| c.label.to_string()).collect();
        println!("party {k}: {} rows, classes [{}] -> {}", part.len(), classes.join(" "), dir.display());
    }
    Ok(())
}

fn load_banks(dirs: &[PathBuf]) -> Result<Vec<Arc<mmfhe_core::fuzzy::AttributeBank>>> {
    dirs.iter().map(|d| PartyArchive::load(d).map(|a| Arc::new(a.bank))).collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let banks = load_banks(&a.archives)?;
    let test = a.data.load(Side::Test)?;
    let cfg = EvalConfig {
        mode: a.mode,
        n_b: a.n_b,
        timeout: Duration::from_secs(a.timeout_s),
        seed: a.seed,
        latency_ms: a.latency_ms,
    };
    let report = evaluate(&banks, &test, &cfg)?;
    print!("{}", report.table());
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let rows = read_csv_rows(&a.input)?;
    let mut session = SessionConfig::new(a.n_b)?;
    session.timeout = Duration::from_secs(a.timeout_s);
    let net = Network { cloud: a.cloud, parties: a.parties };
    let mut user = UserClient::connect(Arc::new(PlainSimBackend::default()), &net, session, a.seed)?;
    for (i, mut row) in rows.into_iter().enumerate() {
        if a.normalize == Normalization::Divide255 {
            row.iter_mut().for_each(|v| *v /= 255.0);
        } else if a.normalize == Normalization::Zscore {
            return Err(Error::input("zscore needs dataset moments; normalize the query file beforehand"));
        }
        let out = user.query(&row)?;
        println!("row {i}: label {} (bootstraps {}, simulated {:.3} s)", out.label, out.gates.bootstraps, out.gates.simulated_ms / 1e3);
    }
    Ok(())
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::input(format!("{} row {i}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ServeParty(a) => {
            let bank = Arc::new(PartyArchive::load(&a.archive)?.bank);
            let backend = Arc::new(PlainSimBackend::default());
            serve_party(backend, bank, &a.listen, &a.cloud, Duration::from_secs(a.timeout_s))
        }
        Command::ServeCloud(a) => {
            let backend = Arc::new(PlainSimBackend::new(a.latency_ms));
            serve_cloud(backend, &a.listen, Duration::from_secs(a.timeout_s))
        }
        Command::Query(a) => query(a),
        Command::SweepK(a) => {
            let report = sweep_k(&a.k, a.n_b, a.seed, a.latency_ms)?;
            print!("{}", report.table());
            if let Some(p) = &a.json {
                write_json(p, &report)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
