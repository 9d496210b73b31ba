use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_viewsieve");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("VIEWSIEVE_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A helix of `n` cameras turning about +y; `dup` repeats each pose that many times.
fn write_helix(dir: &Path, n: usize, dup: usize) -> PathBuf {
    let mut s = String::from("id,tx,ty,tz,qw,qx,qy,qz\n");
    let mut id = 0;
    for i in 0..n {
        let a = i as f64 * 0.6;
        for _ in 0..dup {
            writeln!(
                s,
                "{id},{},{},{},{},0,{},0",
                3.0 * a.cos(),
                0.2 * i as f64,
                3.0 * a.sin(),
                (a / 2.0).cos(),
                (a / 2.0).sin()
            )
            .unwrap();
            id += 1;
        }
    }
    let p = dir.join(format!("helix_{n}_{dup}.csv"));
    std::fs::write(&p, s).unwrap();
    p
}

fn write_features(dir: &Path, n: usize) -> PathBuf {
    let map: serde_json::Map<String, Value> = (0..n)
        .map(|i| {
            let a = i as f64;
            (
                i.to_string(),
                serde_json::json!([a.cos(), a.sin(), 0.5, 1.0]),
            )
        })
        .collect();
    let p = dir.join("features.json");
    std::fs::write(&p, serde_json::to_string(&map).unwrap()).unwrap();
    p
}

const TOP_KEYS: [&str; 10] = [
    "schema_version",
    "strategy",
    "seed",
    "k",
    "params",
    "indices",
    "order",
    "gains",
    "total_utility",
    "manifest",
];
const MANIFEST_KEYS: [&str; 6] = [
    "tool_version",
    "command_line",
    "config",
    "inputs",
    "outputs",
    "duration_seconds",
];
const STRATEGIES: [&str; 5] = ["random", "uniform", "greedy-df", "greedy-dpp", "greedy-cf"];

/// Checks a selection document against schema version 1.
fn validate_selection(text: &str, n: usize) -> Result<Value, String> {
    // Keys must appear in a fixed order; top-level keys sit at two spaces of indent.
    let positions: Vec<Option<usize>> = TOP_KEYS
        .iter()
        .map(|k| text.find(&format!("\n  \"{k}\":")))
        .collect();
    if positions.iter().any(Option::is_none) {
        return Err(format!("missing top-level key among {TOP_KEYS:?}"));
    }
    if !positions.windows(2).all(|w| w[0] < w[1]) {
        return Err("top-level keys out of order".into());
    }
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("not an object")?;
    if obj.len() != TOP_KEYS.len() {
        return Err(format!(
            "unexpected keys: {:?}",
            obj.keys().collect::<Vec<_>>()
        ));
    }
    if v["schema_version"] != 1 {
        return Err("schema_version must be 1".into());
    }
    let strategy = v["strategy"].as_str().ok_or("strategy must be a string")?;
    if !STRATEGIES.contains(&strategy) {
        return Err(format!("unknown strategy {strategy}"));
    }
    v["seed"]
        .as_u64()
        .ok_or("seed must be an unsigned integer")?;
    let k = v["k"].as_u64().ok_or("k must be an unsigned integer")? as usize;
    let params = v["params"].as_object().ok_or("params must be an object")?;
    for key in [
        "n",
        "weights",
        "lambda",
        "grid_resolution",
        "frustum",
        "angular_bins",
        "dpp_jitter",
    ] {
        if !params.contains_key(key) {
            return Err(format!("params.{key} missing"));
        }
    }
    if params["n"] != n {
        return Err("params.n does not match the input".into());
    }
    let ints = |key: &str| -> Result<Vec<usize>, String> {
        v[key]
            .as_array()
            .ok_or(format!("{key} must be an array"))?
            .iter()
            .map(|x| {
                x.as_u64()
                    .map(|x| x as usize)
                    .ok_or(format!("{key} must hold integers"))
            })
            .collect()
    };
    let indices = ints("indices")?;
    let order = ints("order")?;
    if indices.len() != k || order.len() != k {
        return Err("indices and order must have k entries".into());
    }
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != k || sorted.iter().any(|&i| i >= n) {
        return Err("indices must be distinct and in range".into());
    }
    let mut o = order.clone();
    o.sort_unstable();
    if o != sorted {
        return Err("order must be a permutation of indices".into());
    }
    let gains: Vec<f64> = v["gains"]
        .as_array()
        .ok_or("gains must be an array")?
        .iter()
        .map(|g| g.as_f64().ok_or("gains must be numbers"))
        .collect::<Result<_, _>>()?;
    let greedy = strategy.starts_with("greedy");
    if greedy {
        if gains.len() != k {
            return Err("greedy runs record one gain per pick".into());
        }
        if indices != order {
            return Err("greedy indices are in pick order".into());
        }
        let total = v["total_utility"]
            .as_f64()
            .ok_or("total_utility must be a number")?;
        if (total - gains.iter().sum::<f64>()).abs() > 1e-9 * total.abs().max(1.0) {
            return Err("total_utility must be the sum of gains".into());
        }
    } else {
        if !gains.is_empty() || !v["total_utility"].is_null() {
            return Err("baselines have no gains".into());
        }
        if indices != sorted {
            return Err("baseline indices are ascending".into());
        }
    }
    let m = v["manifest"]
        .as_object()
        .ok_or("manifest must be an object")?;
    if m.len() != MANIFEST_KEYS.len() || MANIFEST_KEYS.iter().any(|key| !m.contains_key(*key)) {
        return Err(format!("manifest keys must be {MANIFEST_KEYS:?}"));
    }
    if m["config"]["strategy"] != strategy {
        return Err("manifest config disagrees with strategy".into());
    }
    for input in m["inputs"]
        .as_array()
        .ok_or("manifest.inputs must be an array")?
    {
        let hash = input["sha256"].as_str().ok_or("input hash missing")?;
        if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(format!("bad sha256 {hash}"));
        }
    }
    if m["duration_seconds"].as_f64().is_none_or(|d| d < 0.0) {
        return Err("duration_seconds must be a non-negative number".into());
    }
    Ok(v)
}

fn select_json(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn every_strategy_emits_a_valid_document() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 12, 1);
    let feats = write_features(dir.path(), 12);
    for s in STRATEGIES {
        let text = select_json(&[
            "select",
            "--poses",
            poses.to_str().unwrap(),
            "--features",
            feats.to_str().unwrap(),
            "--strategy",
            s,
            "--count",
            "4",
            "--grid-res",
            "4",
        ]);
        let v = validate_selection(&text, 12).unwrap_or_else(|e| panic!("{s}: {e}\n{text}"));
        assert_eq!(v["manifest"]["inputs"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn validator_rejects_broken_documents() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 8, 1);
    let text = select_json(&[
        "select",
        "--poses",
        poses.to_str().unwrap(),
        "--strategy",
        "random",
        "--count",
        "3",
    ]);
    validate_selection(&text, 8).unwrap();
    assert!(validate_selection(&text, 9).is_err());
    let swapped = text.replacen("\"seed\"", "\"sed\"", 1);
    assert!(validate_selection(&swapped, 8).is_err());
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["gains"] = serde_json::json!([1.0, 1.0, 1.0]);
    assert!(validate_selection(&serde_json::to_string_pretty(&v).unwrap(), 8).is_err());
}

#[test]
fn uniform_follows_the_stride() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 10, 1);
    let v: Value = serde_json::from_str(&select_json(&[
        "select",
        "--poses",
        poses.to_str().unwrap(),
        "--strategy",
        "uniform",
        "--count",
        "5",
        "--seed",
        "7",
    ]))
    .unwrap();
    let idx: Vec<u64> = v["indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(idx.len(), 5);
    let start = v["order"][0].as_u64().unwrap();
    let expected: Vec<u64> = {
        let mut e: Vec<u64> = (0..5).map(|t| (start + 2 * t) % 10).collect();
        e.sort_unstable();
        e
    };
    assert_eq!(idx, expected);
}

#[test]
fn ratio_resolves_with_default_weights() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 60, 1);
    let feats = write_features(dir.path(), 60);
    let v: Value = serde_json::from_str(&select_json(&[
        "select",
        "--poses",
        poses.to_str().unwrap(),
        "--features",
        feats.to_str().unwrap(),
        "--strategy",
        "greedy-df",
        "--ratio",
        "0.05",
        "--alpha",
        "0.7",
        "--beta",
        "0.2",
        "--gamma",
        "0.1",
        "--sigma",
        "0.5",
    ]))
    .unwrap();
    assert_eq!(v["k"], 3);
    assert_eq!(v["gains"][0], 1.0);
    assert_eq!(v["params"]["weights"]["alpha"], 0.7);
}

fn strip_timing(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("\"duration_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reruns_are_byte_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 30, 1);
    let out = dir.path().join("sel.json");
    for s in STRATEGIES {
        let args = [
            "select",
            "--poses",
            poses.to_str().unwrap(),
            "--strategy",
            s,
            "--count",
            "6",
            "--seed",
            "42",
            "--gamma",
            "0",
            "--alpha",
            "0.8",
            "--grid-res",
            "6",
            "--out",
            out.to_str().unwrap(),
        ];
        let first = run(&args);
        assert_eq!(code(&first), 0, "{}", stderr(&first));
        let a = std::fs::read_to_string(&out).unwrap();
        assert_eq!(code(&run(&args)), 0);
        let b = std::fs::read_to_string(&out).unwrap();
        assert_eq!(strip_timing(&a), strip_timing(&b), "{s}");
        assert!(String::from_utf8(first.stdout)
            .unwrap()
            .starts_with("selected 6 of 30 views"));
    }
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 20, 1);
    let v: Value = serde_json::from_str(&select_json(&[
        "select",
        "--poses",
        poses.to_str().unwrap(),
        "--strategy",
        "greedy-cf",
        "--count",
        "4",
        "--gamma",
        "0",
        "--alpha",
        "0.8",
        "--grid-res",
        "5",
        "--fov",
        "70",
        "--seed",
        "3",
    ]))
    .unwrap();
    let c = &v["manifest"]["config"];
    let fov = c["frustum"]["fov_y"].as_f64().unwrap().to_degrees();
    let again: Value = serde_json::from_str(&select_json(&[
        "select",
        "--poses",
        poses.to_str().unwrap(),
        "--strategy",
        "greedy-cf",
        "--count",
        &c["size"]["count"].to_string(),
        "--alpha",
        &c["weights"]["alpha"].to_string(),
        "--beta",
        &c["weights"]["beta"].to_string(),
        "--gamma",
        &c["weights"]["gamma"].to_string(),
        "--sigma",
        &c["weights"]["sigma"].to_string(),
        "--grid-res",
        &c["grid_resolution"].to_string(),
        "--fov",
        &fov.to_string(),
        "--lambda",
        &c["lambda"].to_string(),
        "--angular-bins",
        &c["angular_bins"].to_string(),
        "--seed",
        &c["seed"].to_string(),
    ]))
    .unwrap();
    assert_eq!(v["indices"], again["indices"]);
    assert_eq!(v["gains"], again["gains"]);
}

#[test]
fn matrix_exports() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_helix(dir.path(), 1, 1);
    let f = write_features(dir.path(), 1);
    let out = run(&[
        "matrix",
        "--poses",
        one.to_str().unwrap(),
        "--features",
        f.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "1.0\n");

    let twins = write_helix(dir.path(), 1, 2);
    let f = write_features(dir.path(), 2);
    let csv_path = dir.path().join("m.csv");
    let out = run(&[
        "matrix",
        "--poses",
        twins.to_str().unwrap(),
        "--features",
        f.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    // the twins carry different feature vectors, so only the geometric part is shared
    let sem = {
        let (a, b) = ([1.0, 0.0, 0.5, 1.0], [1f64.cos(), 1f64.sin(), 0.5, 1.0]);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (n(&a) * n(&b))
    };
    assert!((rows[0][1] - (0.9 + 0.1 * sem)).abs() < 1e-12);

    let out = run(&[
        "matrix",
        "--poses",
        twins.to_str().unwrap(),
        "--alpha",
        "0.8",
        "--gamma",
        "0",
    ]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "1.0,1.0\n1.0,1.0\n");
}

#[test]
fn semantic_weight_without_features_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 5, 1);
    for cmd in [
        vec!["matrix", "--poses", poses.to_str().unwrap()],
        vec![
            "select",
            "--poses",
            poses.to_str().unwrap(),
            "--strategy",
            "greedy-df",
            "--count",
            "2",
        ],
    ] {
        let out = run(&cmd);
        assert_eq!(code(&out), 2);
        assert!(stderr(&out).contains("gamma = 0"), "{}", stderr(&out));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_helix(dir.path(), 6, 1);
    let p = poses.to_str().unwrap();

    assert_eq!(
        code(&run(&["select", "--poses", p, "--strategy", "random"])),
        2
    );
    assert_eq!(
        code(&run(&[
            "select",
            "--poses",
            p,
            "--strategy",
            "random",
            "--count",
            "2",
            "--ratio",
            "0.5"
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "select",
            "--poses",
            p,
            "--strategy",
            "random",
            "--count",
            "7"
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "select",
            "--poses",
            p,
            "--strategy",
            "bogus",
            "--count",
            "2"
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "select",
            "--poses",
            p,
            "--strategy",
            "random",
            "--count",
            "2",
            "--alpha",
            "0.9"
        ])),
        2
    );

    let out = run(&[
        "select",
        "--poses",
        "/no/such/file.csv",
        "--strategy",
        "random",
        "--count",
        "1",
    ]);
    assert_eq!(code(&out), 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "id,tx,ty,tz,qw,qx,qy,qz\n0,0,0,0,1,0,0,0\n1,0,0,x,1,0,0,0\n",
    )
    .unwrap();
    let out = run(&[
        "select",
        "--poses",
        bad.to_str().unwrap(),
        "--strategy",
        "random",
        "--count",
        "1",
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let dupes = write_helix(dir.path(), 2, 3);
    let out = run(&[
        "select",
        "--poses",
        dupes.to_str().unwrap(),
        "--strategy",
        "greedy-dpp",
        "--count",
        "3",
        "--alpha",
        "0.8",
        "--gamma",
        "0",
    ]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("step 2"), "{}", stderr(&out));

    let out = Command::new(BIN)
        .args([
            "select",
            "--poses",
            p,
            "--strategy",
            "random",
            "--count",
            "2",
        ])
        .env("VIEWSIEVE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn jitter_rescues_duplicated_views() {
    let dir = tempfile::tempdir().unwrap();
    let dupes = write_helix(dir.path(), 2, 3);
    let out = run(&[
        "select",
        "--poses",
        dupes.to_str().unwrap(),
        "--strategy",
        "greedy-dpp",
        "--count",
        "3",
        "--alpha",
        "0.8",
        "--gamma",
        "0",
        "--dpp-jitter",
        "1e-3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn check_exit_codes_follow_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run(&[
        "check",
        "--suite",
        "submodular",
        "--utility",
        "df",
        "--trials",
        "500",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["violation_count"], 0);
    assert_eq!(r["instances_tested"], 500);

    let out = run(&[
        "check",
        "--suite",
        "submodular",
        "--utility",
        "cf",
        "--trials",
        "500",
    ]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["violation_count"].as_u64().unwrap() > 0);
    assert!(r["violations"][0]["instance"]["poses"].is_object());

    // one trial is far too few to find a counterexample, so the search fails
    let out = run(&[
        "check",
        "--suite",
        "submodular",
        "--utility",
        "cf",
        "--trials",
        "1",
        "--seed",
        "2",
    ]);
    assert_eq!(code(&out), 5);

    let out = run(&[
        "check",
        "--suite",
        "monotone",
        "--utility",
        "dpp",
        "--trials",
        "300",
    ]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["violation_count"].as_u64().unwrap() > 0);
    assert_eq!(r["expectation"], "informational");
}
