use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heritage-flow"))
        .args(args)
        .env_remove("HERITAGE_FLOW_SEED")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["stats", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "stats",
        "--input",
        s(&dir.path().join("nope.csv")),
        "--catalog",
        s(&data("cuzco_sites.json")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn markov_window_writes_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "markov",
        "--input",
        s(&data("fixture/photos.csv")),
        "--catalog",
        s(&data("cuzco_sites.json")),
        "--out-dir",
        s(dir.path()),
        "--window",
        "24h",
        "--phase-boundary",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["transition_probs.csv", "transition_counts.csv", "transition_summary.json", "phase_a_probs.csv", "phase_b_probs.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let probs = fs::read_to_string(dir.path().join("transition_probs.csv")).unwrap();
    assert_eq!(probs.lines().count(), 13);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("transition_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["filter"]["max_gap"], 86_400);
}

#[test]
fn markov_group_restricts_sites() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "markov",
        "--input",
        s(&data("fixture/photos.csv")),
        "--catalog",
        s(&data("cuzco_sites.json")),
        "--out-dir",
        s(dir.path()),
        "--group",
        "BTC1",
    ]);
    assert!(out.status.success());
    let probs = fs::read_to_string(dir.path().join("transition_probs.csv")).unwrap();
    assert_eq!(probs.lines().next().unwrap(), "site_id,sacsayhuaman,qenqo,puca_pucara,tambomachay");
}

#[test]
fn bad_window_is_a_usage_error() {
    let out = run(&["markov", "--input", "x", "--catalog", "y", "--out-dir", "z", "--window", "3w"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, env_seed: Option<&str>| {
        let path = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_heritage-flow"));
        cmd.args(["synth", "--spec", s(&data("synth_spec.json")), "--catalog", s(&data("cuzco_sites.json")), "--out", s(&path)]);
        match env_seed {
            Some(v) => cmd.env("HERITAGE_FLOW_SEED", v),
            None => cmd.env_remove("HERITAGE_FLOW_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read(path).unwrap()
    };
    let spec_seed = gen("a.csv", None);
    assert_eq!(spec_seed, fs::read(data("fixture/photos.csv")).unwrap());
    let env_a = gen("b.csv", Some("5"));
    let env_b = gen("c.csv", Some("5"));
    assert_eq!(env_a, env_b);
    assert_ne!(env_a, spec_seed);
}

#[test]
fn report_hashes_are_stable_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let go = |dir: &Path| {
        let out = run(&[
            "report",
            "--input",
            s(&data("fixture/photos.csv")),
            "--catalog",
            s(&data("cuzco_sites.json")),
            "--embeddings",
            s(&data("fixture/embeddings.emb")),
            "--labels",
            s(&data("fixture/scenes.csv")),
            "--ordering",
            s(&data("scene_ordering.csv")),
            "--out-dir",
            s(dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let first = go(a.path());
    assert_eq!(first.lines().count(), 6);
    assert_eq!(first, go(b.path()));
}

#[test]
fn ingest_reports_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    fs::write(
        &input,
        "photo_id,user_id,lat,lon,timestamp\np1,u1,-13.5,-72.0,2012-05-01T10:00:00Z\np2,u1,95,-72.0,2012-05-01T11:00:00Z\n",
    )
    .unwrap();
    let rejects = dir.path().join("rejects.csv");
    let out = run(&["ingest", "--input", s(&input), "--rejects", s(&rejects)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "rows=2 accepted=1 rejected=1");
    assert!(fs::read_to_string(rejects).unwrap().contains("lat out of range"));
}
