use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hmflow");

fn hmflow(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).arg("--out").arg(out).output().expect("spawn hmflow")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_BUBBLE: &str =
    "[grid]\nN = 65\n[flow]\nt_end = 0.05\ndiagnostic_stride = 2\n[init]\nkind = \"bubble\"\nlambda = 1.0\n";

#[test]
fn simulate_writes_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", SMALL_BUBBLE);
    let run = tmp.path().join("run");
    let o = hmflow(&["simulate", &cfg], &run);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run.jsonl", "run.json", "config.echo", "final.sfld"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let lines = fs::read_to_string(run.join("run.jsonl")).unwrap();
    assert!(lines.lines().count() >= 2);
    let echoed = fs::read_to_string(run.join("config.echo")).unwrap();
    assert!(echoed.contains("dt_safety"), "defaults are echoed");
}

#[test]
fn bad_configs_exit_with_status_two() {
    let tmp = tempfile::tempdir().unwrap();
    let small = write_config(tmp.path(), "n8.toml", "[grid]\nN = 8\n[init]\nkind = \"bubble\"\nlambda = 0.1\n");
    let o = hmflow(&["simulate", &small], &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("16"));
    let typo = write_config(tmp.path(), "typo.toml", "[init]\nkind = \"bubble\"\nlambda = 0.1\nlamda = 3\n");
    assert_eq!(hmflow(&["simulate", &typo], &tmp.path().join("y")).status.code(), Some(2));
    assert_eq!(hmflow(&["preset", "no-such-preset"], tmp.path()).status.code(), Some(2));
}

#[test]
fn constant_map_has_zero_oscillation_and_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[grid]\nN = 65\n[flow]\nt_end = 0.1\n[init]\nkind = \"equivariant\"\namplitude = 0.0\nlambda = 1.0\nrepresentation = \"grid\"\n",
    );
    let run = tmp.path().join("run");
    assert!(hmflow(&["simulate", &cfg], &run).status.success());
    let o = Command::new(BIN).arg("bubbles").arg(&run).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only: {csv}");
    let osc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("oscillation.json")).unwrap()).unwrap();
    let vals = osc["profile"]["osc_values"].as_array().unwrap();
    assert!(!vals.is_empty());
    assert!(vals.iter().all(|v| v.as_f64() == Some(0.0)));
}

#[test]
fn verify_exit_codes_follow_the_certificates() {
    let tmp = tempfile::tempdir().unwrap();
    // every Poincaré certificate on the corpus passes or is degenerate
    let o = hmflow(&["verify", "poincare", "corpus", "--grid-n", "65"], &tmp.path().join("p"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(tmp.path().join("p/certificates.json").is_file());

    // a stationary bubble has nothing to certify
    let cfg = write_config(tmp.path(), "b.toml", SMALL_BUBBLE);
    let run = tmp.path().join("run");
    assert!(hmflow(&["simulate", &cfg], &run).status.success());
    let o = hmflow(&["verify", "lojasiewicz", run.to_str().unwrap()], &tmp.path().join("l"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("not-applicable"));

    // a moving run too short for the barrier window is under-sampled, which counts as failure
    let moving = write_config(
        tmp.path(),
        "m.toml",
        "[grid]\nN = 65\n[flow]\nt_end = 0.002\n[init]\nkind = \"equivariant\"\namplitude = 1.5\nlambda = 0.5\nrepresentation = \"grid\"\n",
    );
    let short = tmp.path().join("short");
    assert!(hmflow(&["simulate", &moving], &short).status.success());
    let o = hmflow(&["verify", "lojasiewicz", short.to_str().unwrap()], &tmp.path().join("l2"));
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));

    let o = hmflow(&["verify", "monotonicity", run.to_str().unwrap()], &tmp.path().join("m"));
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("m/monotonicity.json").is_file());
    assert_eq!(hmflow(&["verify", "monotonicity", "corpus"], &tmp.path().join("m2")).status.code(), Some(2));
}

#[test]
fn corpus_directory_can_be_verified() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    assert!(hmflow(&["corpus", "--seed", "5", "--grid-n", "65"], &corpus).status.success());
    let digests = fs::read_to_string(corpus.join("digests.csv")).unwrap();
    assert!(digests.lines().count() >= 32);
    let o = hmflow(&["verify", "lojasiewicz", corpus.to_str().unwrap(), "--grid-n", "65"], &tmp.path().join("v"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("outside the small-norm regime"));
}

#[test]
fn sweep_runs_each_value_in_its_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", SMALL_BUBBLE);
    let out = tmp.path().join("sweep");
    let o = hmflow(&["sweep", &cfg, "--param", "init.lambda=0.5,1.5", "--jobs", "2"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("init.lambda=0.5/run.jsonl").is_file());
    assert!(out.join("init.lambda=1.5/run.jsonl").is_file());
    assert_eq!(fs::read_to_string(out.join("sweep.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn loj_sweep_preset_writes_its_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("loj");
    let o = hmflow(&["preset", "loj-sweep"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    for f in ["loj.csv", "certificates.json", "summary.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS loj-constant-stable"));
}
