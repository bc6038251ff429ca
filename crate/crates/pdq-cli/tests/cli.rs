use std::io::Write;
use std::process::{Command, Output};

use serde_json::Value;

fn pdq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdq"))
        .args(args)
        .output()
        .expect("runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().expect("temp file");
    f.write_all(text.as_bytes()).expect("write");
    f
}

const THREE: &str = "R\ta\t1/2\nS\ta,b\t1/2\nS\ta,c\t1/2\n";

#[test]
fn classify_reports_non_hierarchical_pair() {
    let o = pdq(&["classify", "R(x),S(x,y),T(y)"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(
        out.contains("#P-hard") && out.contains("non-hierarchical pair x, y"),
        "{out}"
    );

    let o = pdq(&["classify", "-q", "R(x),S(x,y),T(y)", "--format", "json"]);
    let v: Value = serde_json::from_slice(&o.stdout).expect("json");
    assert_eq!(v[0]["complexity"], "sharp_p_hard");
    assert_eq!(v[0]["witness"]["x"], "x");
    assert_eq!(v[0]["witness"]["y"], "y");
}

#[test]
fn eval_prints_three_eighths_with_every_method() {
    let d = data(THREE);
    let path = d.path().to_str().expect("utf8 path");
    for m in ["auto", "safeplan", "invfree", "general", "oracle"] {
        let o = pdq(&["eval", "-q", "R(x),S(x,y)", "-d", path, "--method", m]);
        assert_eq!(o.status.code(), Some(0), "{m}");
        assert!(stdout(&o).contains("3/8 (0.375)"), "{m}: {}", stdout(&o));
    }
}

#[test]
fn json_output_is_deterministic_and_has_formula() {
    let d = data(THREE);
    let path = d.path().to_str().expect("utf8 path");
    let args = [
        "eval",
        "-q",
        "R(x),S(x,y)",
        "-d",
        path,
        "--format",
        "json",
        "--emit-formula",
        "--explain",
    ];
    let a = pdq(&args);
    let b = pdq(&args);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).expect("json");
    assert_eq!(v[0]["value"], "3/8");
    let f = &v[0]["formula"];
    assert_eq!(f["size"], v[0]["formula_size"]);
    let ops: Vec<&str> = f["nodes"]
        .as_array()
        .expect("nodes")
        .iter()
        .map(|n| n["op"].as_str().expect("op"))
        .collect();
    assert!(ops.contains(&"tuple-prob") && ops.contains(&"mul"));
    assert!(v[0]["coverage"]["factors"].is_array());
}

#[test]
fn hard_query_falls_back_to_sampling() {
    let d = data("R\ta\t1/2\nS\ta,b\t1/2\nT\tb\t1/2\n");
    let path = d.path().to_str().expect("utf8 path");
    let o = pdq(&[
        "eval",
        "-q",
        "R(x),S(x,y),T(y)",
        "-d",
        path,
        "--format",
        "json",
        "--seed",
        "3",
        "--samples",
        "20000",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let v: Value = serde_json::from_slice(&o.stdout).expect("json");
    assert_eq!(v[0]["method"], "mc");
    let est = v[0]["estimate"].as_f64().expect("estimate");
    assert!((est - 0.125).abs() < 4.0 * v[0]["stderr"].as_f64().expect("stderr"));
}

#[test]
fn exit_codes() {
    let d = data(THREE);
    let path = d.path().to_str().expect("utf8 path");
    assert_eq!(
        pdq(&["eval", "-q", "R(x", "-d", path]).status.code(),
        Some(1)
    );
    assert_eq!(pdq(&["nonsense"]).status.code(), Some(1));
    assert_eq!(
        pdq(&[
            "eval",
            "-q",
            "R(x),S(x,y),T(y)",
            "-d",
            path,
            "--method",
            "safeplan"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        pdq(&[
            "oracle",
            "-q",
            "R(x),S(x,y)",
            "-d",
            path,
            "--oracle-cap",
            "2"
        ])
        .status
        .code(),
        Some(2)
    );
    let bad = data("ok\tptime\tlabel\tR(x),S(x,y)\nwrong\tptime\tlabel\tR(x),S(x,y),T(y)\n");
    let o = pdq(&[
        "corpus",
        "--corpus",
        bad.path().to_str().expect("utf8 path"),
        "--structures",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL  wrong"));
}

#[test]
fn builtin_corpus_passes() {
    let o = pdq(&["corpus", "--structures", "2", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v: Value = serde_json::from_slice(&o.stdout).expect("json");
    assert_eq!(v["failed"], 0);
}

#[test]
fn bench_table_has_one_row_per_size() {
    let o = pdq(&[
        "bench",
        "-q",
        "R(x),S(x,y)",
        "--sizes",
        "2,4",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).expect("json");
    let rows = v.as_array().expect("rows");
    assert_eq!(rows.len(), 2);
    assert!(rows[1]["formula_size"].as_u64() > rows[0]["formula_size"].as_u64());
}
