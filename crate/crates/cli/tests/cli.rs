use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_circlstm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small bundle in `dir/name` from a fixed seed.
fn small_bundle(dir: &TempDir, name: &str, k: &str) -> String {
    let out = dir.path().join(name);
    ok_json(&["--seed", "5", "compress", "--arch", "small", "-k", k, "--out", p(&out)]);
    p(&out).to_string()
}

#[test]
fn sweep_counts_fall_and_track_k() {
    let r = ok_json(&["sweep"]);
    let rows = r["outputs"]["rows"].as_array().unwrap();
    let params: Vec<u64> = rows.iter().map(|r| r["params"].as_u64().unwrap()).collect();
    assert!(params.windows(2).all(|w| w[0] > w[1]), "{params:?}");
    for row in rows {
        let k = row["block_size"].as_f64().unwrap();
        let ratio = row["matrix_compression"].as_f64().unwrap();
        assert!((ratio - k).abs() <= 0.05 * k, "k={k}: {ratio}");
    }
    let via_compress = ok_json(&["compress", "--sweep", "1,2,4,8,16"]);
    assert_eq!(via_compress["outputs"], r["outputs"]);
}

#[test]
fn compress_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = small_bundle(&dir, "a", "8");
    let b = small_bundle(&dir, "b", "8");
    for f in ["manifest.json", "weights.f64.bin", "weights.i16.bin", "spectra.f64.bin"] {
        let (x, y) = (Path::new(&a).join(f), Path::new(&b).join(f));
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{f}");
    }
}

#[test]
fn block_size_one_reproduces_the_dense_input() {
    let dir = TempDir::new().unwrap();
    let dense = small_bundle(&dir, "dense", "1");
    let again = dir.path().join("again");
    let r = ok_json(&["compress", "--from", &dense, "-k", "1", "--out", p(&again)]);
    assert_eq!(r["metrics"]["relative_projection_error"].as_f64(), Some(0.0));
    for f in ["weights.f64.bin", "weights.i16.bin"] {
        assert_eq!(fs::read(Path::new(&dense).join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }

    let compressed = dir.path().join("k8");
    let r = ok_json(&["compress", "--from", &dense, "-k", "8", "--out", p(&compressed)]);
    let err = r["metrics"]["relative_projection_error"].as_f64().unwrap();
    assert!(err > 0.0 && err < 1.0, "{err}");
    ok_json(&["verify", "--bundle", p(&compressed)]);
}

#[test]
fn invalid_block_size_is_a_usage_error() {
    assert_eq!(code(&["--seed", "1", "compress", "-k", "3", "--out", "/tmp/never"]), 2);
    assert_eq!(code(&["sweep", "--sizes", "1,6"]), 2);
    assert_eq!(code(&["--shift-policy", "sideways", "sweep"]), 2);
    assert_eq!(code(&["--fxp", "q9.9", "sweep"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn infer_verifies_against_the_dense_oracle() {
    let dir = TempDir::new().unwrap();
    let b = small_bundle(&dir, "m", "4");
    let r = ok_json(&["--seed", "2", "infer", "--bundle", &b, "--random-frames", "5", "--verify"]);
    assert!(r["metrics"]["oracle_max_deviation"].as_f64().unwrap() < 1e-8);
    assert_eq!(r["outputs"]["frames"], 5);
    assert_eq!(r["outputs"]["sequence"][0].as_array().unwrap().len(), 1024);
    let c = &r["metrics"]["call_counts"];
    assert!(c["dft"].as_u64().unwrap() > 0 && c["pointwise"].as_u64().unwrap() > 0);

    let fxp = ["--seed", "2", "infer", "--bundle", &b, "--random-frames", "5", "--mode", "fxp"];
    let f1 = ok_json(&fxp);
    let f2 = ok_json(&fxp);
    assert_eq!(f1["outputs"], f2["outputs"]);
    assert_eq!(f1["inputs_digest"], f2["inputs_digest"]);
    assert!(f1["metrics"]["fxp_vs_float_max_deviation"].as_f64().unwrap() > 0.0);
    assert_ne!(f1["outputs"]["outputs_sha256"], r["outputs"]["outputs_sha256"]);
}

#[test]
fn infer_reads_frame_files_and_rejects_bad_ones() {
    let dir = TempDir::new().unwrap();
    let b = small_bundle(&dir, "m", "8");
    let frames = dir.path().join("frames.json");
    let row = vec![0.25f64; 39];
    fs::write(&frames, serde_json::to_string(&vec![row.clone(), row]).unwrap()).unwrap();
    let r = ok_json(&["infer", "--bundle", &b, "--input", p(&frames), "--verify"]);
    assert_eq!(r["outputs"]["frames"], 2);

    let empty = dir.path().join("empty.json");
    fs::write(&empty, "[]").unwrap();
    let out = run(&["infer", "--bundle", &b, "--input", p(&empty)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));

    let wrong = dir.path().join("wrong.json");
    fs::write(&wrong, "[[1.0, 2.0]]").unwrap();
    assert_eq!(code(&["infer", "--bundle", &b, "--input", p(&wrong)]), 1);
}

#[test]
fn corrupted_bundle_fails_verification() {
    let dir = TempDir::new().unwrap();
    let b = small_bundle(&dir, "m", "8");
    let f = Path::new(&b).join("weights.f64.bin");
    let mut bytes = fs::read(&f).unwrap();
    bytes[100] ^= 0x40;
    fs::write(&f, bytes).unwrap();
    let out = run(&["verify", "--bundle", &b]);
    assert_eq!(out.status.code(), Some(3));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["outputs"]["passed"], false);
    assert_eq!(code(&["infer", "--bundle", &b, "--random-frames", "1"]), 1);
}

#[test]
fn schedule_google_preset() {
    let r = ok_json(&["schedule"]);
    assert_eq!(r["outputs"]["num_stages"], 3);
    assert_eq!(r["outputs"]["feasible"], true);
    let first: Vec<&str> = r["outputs"]["stages"][0]["ops"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(first, ["conv_i", "conv_f", "conv_c", "conv_o"]);
    assert_eq!(ok_json(&["--platform", "7v3", "schedule"])["outputs"]["num_stages"], 3);

    let u = ok_json(&["schedule", "--budget", "unlimited"]);
    assert_eq!(u["outputs"]["num_stages"], 1);
    assert!(!u["outputs"]["compounding"].as_array().unwrap().is_empty());
}

#[test]
fn infeasible_platform_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let plat = dir.path().join("tiny.json");
    fs::write(
        &plat,
        r#"{"name": "tiny", "dsp": 4, "bram": 1, "lut": 100, "ff": 100, "frequency_hz": 1e8}"#,
    )
    .unwrap();
    let out = run(&["--platform", p(&plat), "schedule"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not fit"));
    assert_eq!(code(&["--platform", "no-such-board", "schedule"]), 2);
}

/// Leaves of a JSON value rendered the way the table format prints them.
fn leaves(path: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let scalar = |v: &Value| match v {
        Value::Null => "-".to_string(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    match v {
        Value::Object(o) => {
            for (k, x) in o {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                leaves(&p, x, out);
            }
        }
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let items: Vec<String> = a.iter().map(scalar).collect();
            out.push((path.to_string(), format!("[{}]", items.join(", "))));
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                leaves(&format!("{path}.{i}"), x, out);
            }
        }
        other => out.push((path.to_string(), scalar(other))),
    }
}

#[test]
fn table_and_json_agree_field_for_field() {
    let json = ok_json(&["schedule"]);
    let out = run(&["--format", "table", "schedule"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let table: Vec<(String, String)> = text
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(' ').unwrap();
            (k.to_string(), v.trim_start().to_string())
        })
        .collect();
    let mut want = Vec::new();
    leaves("", &json, &mut want);
    assert_eq!(table, want);
}

#[test]
fn estimate_replays_a_schedule_assignment() {
    let dir = TempDir::new().unwrap();
    let s = ok_json(&["schedule"]);
    let file = dir.path().join("assign.json");
    fs::write(&file, s["outputs"]["assignment"].to_string()).unwrap();
    let e = ok_json(&["estimate", "--assignment", p(&file)]);
    assert_eq!(e["outputs"]["fps"], s["outputs"]["fps"]);
    assert_eq!(e["outputs"]["resources"], s["outputs"]["resources"]);
    assert!(e["outputs"]["headroom"]["dsp"].as_u64().unwrap() > 0);

    // conv_y ahead of the gates breaks a dependency
    let mut bad = s["outputs"]["assignment"].clone();
    bad["stages"] = serde_json::json!([[19], [0, 1, 2, 3], (4..19).collect::<Vec<_>>()]);
    fs::write(&file, bad.to_string()).unwrap();
    assert_eq!(code(&["estimate", "--assignment", p(&file)]), 1);
}

#[test]
fn bench_reports_consistent_op_counts() {
    assert_eq!(code(&["bench", "--arch", "small", "--repetitions", "0"]), 2);
    let r = ok_json(&["bench", "--arch", "small", "-k", "4", "--frames", "2", "--repetitions", "1"]);
    assert_eq!(r["metrics"]["ops_consistent"], true);
    assert!(r["outputs"]["max_deviation"].as_f64().unwrap() < 1e-8);
}

#[test]
fn spectral_path_beats_dense_at_google_scale() {
    let r = ok_json(&["bench", "-k", "16", "--frames", "1", "--repetitions", "2"]);
    let speedup = r["outputs"]["speedup"].as_f64().unwrap();
    assert!(speedup > 1.0, "speedup {speedup}");
    assert_eq!(r["metrics"]["ops_consistent"], true);
}
