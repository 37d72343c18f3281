use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use serde_json::Value;

use countylens_core::synth::{gaussian_blobs, write_blob_dataset, BlobSpec};

fn countylens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_countylens"))
        .args(args)
        .stdin(Stdio::null())
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn succeed(args: &[&str]) -> String {
    let out = countylens(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout(&out)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Patches keys of a config file in place.
fn patch_config(config: &Path, patch: Value) {
    let mut body = read_json(config);
    for (k, v) in patch.as_object().unwrap() {
        body[k] = v.clone();
    }
    std::fs::write(config, serde_json::to_string_pretty(&body).unwrap()).unwrap();
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

struct BlobRun {
    config: PathBuf,
    bundle: PathBuf,
}

/// The standard blob fixture, ingested and clustered once for the whole file.
fn blob_run() -> &'static BlobRun {
    static RUN: OnceLock<BlobRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = scratch("cli-blobs");
        let blobs = gaussian_blobs(&BlobSpec::default(), 5);
        let config = write_blob_dataset(&dir, &blobs, 5).unwrap();
        let c = config.to_str().unwrap();
        succeed(&["--config", c, "ingest"]);
        succeed(&["--config", c, "cluster"]);
        BlobRun {
            bundle: dir.join("bundle"),
            config,
        }
    })
}

#[test]
fn cluster_recommends_three_on_blobs() {
    let run = blob_run();
    let clusters = read_json(&run.bundle.join("clusters.json"));
    assert_eq!(clusters["sweep"]["recommended_k"], 3);
    assert_eq!(clusters["model"]["k"], 3);
    let meta = read_json(&run.bundle.join("meta.json"));
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["n_counties"], 300);
}

#[test]
fn same_seed_reproduces_clusters() {
    let run = blob_run();
    let other = scratch("cli-blobs-again");
    succeed(&[
        "--config",
        run.config.to_str().unwrap(),
        "--out",
        other.to_str().unwrap(),
        "cluster",
    ]);
    for file in ["clusters.json", "report.json", "master.csv", "meta.json"] {
        assert_eq!(
            std::fs::read(run.bundle.join(file)).unwrap(),
            std::fs::read(other.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn k_override_wins_over_elbow() {
    let dir = scratch("cli-override");
    let blobs = gaussian_blobs(&BlobSpec::default(), 6);
    let config = write_blob_dataset(&dir, &blobs, 6).unwrap();
    patch_config(&config, serde_json::json!({ "k_max": 6 }));
    let out = succeed(&["--json", "--config", config.to_str().unwrap(), "cluster", "--k", "5"]);
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["k"], 5);
    assert_eq!(summary["recommended_k"], 3);
    let clusters = read_json(&dir.join("bundle/clusters.json"));
    assert_eq!(clusters["model"]["k"], 5);
}

#[test]
fn sweep_lists_k_two_to_twenty() {
    let run = blob_run();
    let csv = succeed(&["--config", run.config.to_str().unwrap(), "sweep"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,inertia,silhouette");
    assert_eq!(lines.len(), 20);
    let ks: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ks, (2..=20).collect::<Vec<_>>());
    // Matches the sweep stored by the cluster run.
    assert_eq!(csv, std::fs::read_to_string(run.bundle.join("sweep.csv")).unwrap());
}

#[test]
fn importance_defaults_to_top_ten() {
    let dir = scratch("cli-importance");
    let spec = BlobSpec {
        dim: 14,
        ..BlobSpec::default()
    };
    let config = write_blob_dataset(&dir, &gaussian_blobs(&spec, 8), 8).unwrap();
    patch_config(&config, serde_json::json!({ "k_max": 4 }));
    let c = config.to_str().unwrap();
    succeed(&["--config", c, "cluster"]);

    let csv = succeed(&["--config", c, "importance"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "feature,wcss,tss,importance,degenerate");
    assert_eq!(lines.len(), 11);
    let scores: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let json: Value =
        serde_json::from_str(&succeed(&["--config", c, "importance", "--top", "3", "--format", "json"]))
            .unwrap();
    assert_eq!(json["importance"]["features"].as_array().unwrap().len(), 3);
    assert_eq!(json["importance"]["space"], "post_hoc");

    let clustered = succeed(&["--config", c, "importance", "--space", "clustered"]);
    assert!(clustered.lines().nth(1).unwrap().starts_with("PC"));
}

#[test]
fn profile_and_gap_read_the_bundle() {
    let run = blob_run();
    let out = run.bundle.to_str().unwrap();
    let csv = succeed(&["--out", out, "profile"]);
    assert_eq!(csv.lines().next().unwrap(), "feature,cluster,mean,median,std,present,rank,rating");
    assert_eq!(csv.lines().count(), 1 + 10 * 3);

    let json: Value = serde_json::from_str(&succeed(&["--out", out, "--json", "gap", "10000", "10001"])).unwrap();
    assert_eq!(json["features"].as_array().unwrap().len(), 10);
    let text = succeed(&["--out", out, "gap", "10000", "10001", "--top", "2"]);
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn export_writes_every_county() {
    let run = blob_run();
    let out = succeed(&["--out", run.bundle.to_str().unwrap(), "export"]);
    let path = run.bundle.join("assignments.json");
    assert!(out.contains("assignments.json"));
    let first = std::fs::read(&path).unwrap();
    let assignments: Value = serde_json::from_slice(&first).unwrap();
    let map = assignments.as_object().unwrap();
    assert_eq!(map.len(), 300);
    assert!(map.values().all(|e| e["cluster"].is_u64()));
    succeed(&["--out", run.bundle.to_str().unwrap(), "export"]);
    assert_eq!(first, std::fs::read(&path).unwrap());
}

#[test]
fn ingest_is_rerunnable() {
    let dir = scratch("cli-ingest");
    let config = write_blob_dataset(&dir, &gaussian_blobs(&BlobSpec::default(), 9), 9).unwrap();
    let c = config.to_str().unwrap();
    let report = succeed(&["--config", c, "ingest"]);
    assert!(report.contains("300 counties, 10 features"));
    let first = std::fs::read(dir.join("bundle/master.csv")).unwrap();
    succeed(&["--config", c, "ingest"]);
    assert_eq!(first, std::fs::read(dir.join("bundle/master.csv")).unwrap());
    assert!(dir.join("bundle/dictionary.json").exists());
    assert!(dir.join("bundle/cleaning.json").exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(countylens(&[]).status.code(), Some(2));
    assert_eq!(countylens(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(countylens(&["ingest"]).status.code(), Some(2));
    assert_eq!(countylens(&["cluster", "--k", "x"]).status.code(), Some(2));

    let dir = scratch("cli-empty");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("descriptors.json"), "[]").unwrap();
    std::fs::write(dir.join("config.json"), r#"{"descriptors": "descriptors.json", "seed": 1}"#)
        .unwrap();
    let out = countylens(&["--json", "--config", dir.join("config.json").to_str().unwrap(), "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "usage");
    assert!(err["message"].as_str().unwrap().contains("no datasets"));

    let out = countylens(&["--json", "nope"]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "usage");
}

#[test]
fn data_errors_exit_one() {
    let dir = scratch("cli-missing");
    let out = countylens(&["--json", "--out", dir.to_str().unwrap(), "profile"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "missing_bundle");

    let run = blob_run();
    let out = countylens(&["--json", "--out", run.bundle.to_str().unwrap(), "gap", "10000", "99999"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "unknown_county");

    let out = countylens(&["--out", dir.to_str().unwrap(), "export"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

struct KillOnDrop(std::process::Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_on_port_zero_prints_the_port() {
    let run = blob_run();
    let mut child = KillOnDrop(
        Command::new(env!("CARGO_BIN_EXE_countylens"))
            .args(["--out", run.bundle.to_str().unwrap(), "serve", "--port", "0"])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap(),
    );
    let mut line = String::new();
    BufReader::new(child.0.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap();
    let port: u16 = addr.rsplit(':').next().unwrap().parse().unwrap();
    assert_ne!(port, 0);

    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "GET /api/clusters HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body = response.split("\r\n\r\n").nth(1).unwrap();
    let clusters: Value = serde_json::from_str(body).unwrap();
    assert_eq!(clusters["k"], 3);
}

#[test]
fn serve_reports_busy_port() {
    let run = blob_run();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = countylens(&[
        "--json",
        "--out",
        run.bundle.to_str().unwrap(),
        "serve",
        "--port",
        &port,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "port_in_use");
}
