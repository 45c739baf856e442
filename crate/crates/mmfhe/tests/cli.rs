mod common;

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_mmfhe");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

/// Label in column 0, features after it.
fn write_csv(path: &Path) {
    let d = common::synthetic(4, 60, 5, 41);
    let mut s = String::new();
    for i in 0..d.len() {
        write!(s, "{}", d.labels[i]).unwrap();
        for v in d.x.row(i).iter() {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn train(dir: &Path) -> (String, String) {
    let csv = dir.join("data.csv");
    write_csv(&csv);
    let out = dir.join("model");
    let o = run(&[
        "train", "--csv", csv.to_str().unwrap(), "--normalize", "none", "--train-frac", "0.5",
        "--partition", "class-ranges:0-1,2-3", "-L", "2", "-n", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("party 1"));
    (csv.to_str().unwrap().to_string(), format!("{},{}", out.join("party-0").display(), out.join("party-1").display()))
}

#[test]
fn train_then_evaluate_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, archives) = train(dir.path());
    let report = dir.path().join("report.json");
    let common = ["eval", "--csv", &csv, "--normalize", "none", "--train-frac", "0.5", "--archives", &archives];

    let plain = run(&[&common[..], &["--mode", "plain"]].concat());
    assert!(plain.status.success(), "{}", text(&plain));

    let enc = run(&[&common[..], &["--mode", "encrypted", "--n-b", "8", "--json", report.to_str().unwrap()]].concat());
    assert!(enc.status.success(), "{}", text(&enc));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["n_b"], 8);
    assert_eq!(v["parties"], 2);
    assert!(v["accuracy"].as_f64().unwrap() > 0.5);
    assert_eq!(v["encrypted"]["bin_bound_violations"], 0);
}

#[test]
fn sweep_prints_every_party_count() {
    let o = run(&["sweep-k", "--k", "2,3,5", "--n-b", "8"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    for k in ["2", "3", "5"] {
        assert!(out.lines().any(|l| l.split_whitespace().next() == Some(k)), "{out}");
    }
}

#[test]
fn input_errors_exit_with_code_two() {
    let o = run(&["eval", "--csv", "/nonexistent/data.csv", "--archives", "/nonexistent/party-0"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    let dir = tempfile::tempdir().unwrap();
    let (csv, archives) = train(dir.path());
    let o = run(&["eval", "--csv", &csv, "--normalize", "none", "--archives", &archives, "--mode", "encrypted", "--n-b", "12"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    let o = run(&["train", "--csv", &csv, "--out", dir.path().to_str().unwrap(), "--membership", "student-t:1.5"]);
    assert!(!o.status.success());
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts a server and returns it with the address it printed.
fn serve(args: &[&str]) -> (Server, String) {
    let mut child = Command::new(BIN).args(args).stderr(Stdio::piped()).stdout(Stdio::null()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    assert!(line.contains("listening on"), "{line}");
    (Server(child), addr)
}

#[test]
fn separate_processes_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let (_, archives) = train(dir.path());
    let (_cloud, cloud) = serve(&["serve-cloud", "--listen", "127.0.0.1:0"]);
    let mut parties = Vec::new();
    let mut addrs = Vec::new();
    for a in archives.split(',') {
        let (p, addr) = serve(&["serve-party", "--archive", a, "--listen", "127.0.0.1:0", "--cloud", &cloud]);
        parties.push(p);
        addrs.push(addr);
    }
    let rows = common::synthetic(4, 3, 5, 41);
    let mut s = String::new();
    for i in 0..rows.len() {
        let r: Vec<String> = rows.x.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(s, "{}", r.join(",")).unwrap();
    }
    let input = dir.path().join("queries.csv");
    fs::write(&input, s).unwrap();
    let o = run(&[
        "query", "--parties", &addrs.join(","), "--cloud", &cloud, "--input", input.to_str().unwrap(),
        "--normalize", "none", "--n-b", "16",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.contains("label")).count(), rows.len());
}
