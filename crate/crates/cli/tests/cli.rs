mod common;

use std::io::Write;
use std::process::{Command, Stdio};

use common::{data_dir, golden_matches, textlabel, GOLDEN};
use serde_json::Value;
use textlabel_core::population::{save_population, Format};
use textlabel_probe::fixtures::planted_corpus;
use textlabel_probe::{MockServer, ProbeConfig};

#[test]
fn golden_outputs() {
    let failures: Vec<String> = GOLDEN.iter().filter_map(|(n, a)| golden_matches(n, a).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn json_output_is_one_document_with_expected_schema() {
    let out = textlabel(GOLDEN[0].1);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["method"], "debiased_lhs");
    assert_eq!(v["variance_source"], "formula");
    assert_eq!(v["n_validation"], 20);
    for key in ["coefficients", "se", "ci_lower", "ci_upper"] {
        assert_eq!(v[key].as_array().unwrap().len(), 2, "{key}");
    }
}

#[test]
fn table_output_by_default() {
    let out = textlabel(&["targets", "--pop", "pop.csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("beta_star ")));
    assert!(serde_json::from_str::<Value>(&text).is_err());
}

#[test]
fn exit_codes_follow_failure_family() {
    let unknown = textlabel(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(textlabel(&[]).status.code(), Some(2));

    let invalid = textlabel(&["debias", "--pop", "pop.csv", "--validation-frac", "1.5"]);
    assert_eq!(invalid.status.code(), Some(2));
    let no_arm = textlabel(&["debias", "--pop", "pop.csv"]);
    assert_eq!(no_arm.status.code(), Some(2));
    let missing = textlabel(&["targets", "--pop", "does-not-exist.csv"]);
    assert_eq!(missing.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does-not-exist.csv"));
    let unreachable = textlabel(&["probe", "--pop", "small.csv", "--endpoint", "http://127.0.0.1:9", "--model", "m"]);
    assert_ne!(unreachable.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    let mut csv = String::from("id,v,w_0,w_1,vhat_synthetic\n");
    for i in 0..40 {
        csv.push_str(&format!("p{i},{},1,2,{}\n", i % 7, i % 5));
    }
    std::fs::write(&flat, csv).unwrap();
    let singular = textlabel(&["targets", "--pop", flat.to_str().unwrap()]);
    assert_eq!(singular.status.code(), Some(3));
    let errored = textlabel(&["targets", "--pop", flat.to_str().unwrap(), "--json"]);
    let doc: Value = serde_json::from_slice(&errored.stdout).unwrap();
    assert_eq!(doc["error"]["kind"], "numeric");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("debias.toml");
    std::fs::write(&cfg, "side = \"lhs\"\npop = \"pop.csv\"\nvalidation_frac = 0.05\nseed = 1\n").unwrap();
    let via_config = textlabel(&["debias", "--config", cfg.to_str().unwrap(), "--seed", "7", "--json"]);
    let direct = textlabel(GOLDEN[0].1);
    assert!(via_config.status.success());
    assert_eq!(via_config.stdout, direct.stdout);

    let json_cfg = dir.path().join("debias.cfg");
    std::fs::write(&json_cfg, r#"{"pop": "pop.csv", "validation_frac": 0.05, "seed": 7}"#).unwrap();
    let sniffed = textlabel(&["debias", "--config", json_cfg.to_str().unwrap(), "--json"]);
    assert_eq!(sniffed.stdout, direct.stdout);
}

#[test]
fn jsonl_mode_answers_each_line() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_textlabel"))
        .arg("--jsonl")
        .current_dir(data_dir())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let requests = [
        r#"{"op":"leakage","params":{"pop":"small.csv","context":"context.json"},"id":"q1"}"#,
        r#"{"op":"debias","params":{"side":"lhs","pop":"pop.csv","labeler":"synthetic","validation_frac":0.05,"seed":7},"id":"q2"}"#,
        r#"{"op":"nope","params":{},"id":"q3"}"#,
        r#"{"op":"targets","params":{"pop":"missing.csv"},"id":"q4"}"#,
        "",
        r#"{"op":"check","params":{"self":true},"id":"q5"}"#,
    ];
    let mut stdin = child.stdin.take().unwrap();
    for r in requests {
        writeln!(stdin, "{r}").unwrap();
    }
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ids: Vec<&str> = lines.iter().map(|l| l["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["q1", "q2", "q3", "q4", "q5"]);
    let oks: Vec<bool> = lines.iter().map(|l| l["ok"].as_bool().unwrap()).collect();
    assert_eq!(oks, [true, true, false, false, true]);
    assert_eq!(lines[3]["error"]["kind"], "io");

    let golden: Value = serde_json::from_slice(&textlabel(GOLDEN[0].1).stdout).unwrap();
    assert_eq!(lines[1]["result"], golden);
}

#[test]
fn validation_column_assigns_arms() {
    let out = textlabel(&["debias", "--pop", "pop.csv", "--validation-col", "arm", "--json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((v["n_validation"].as_u64(), v["n_primary"].as_u64()), (Some(40), Some(320)));
    let both = textlabel(&["debias", "--pop", "pop.csv", "--validation-col", "arm", "--validation-frac", "0.1"]);
    assert_eq!(both.status.code(), Some(2));
    let missing = textlabel(&["debias", "--pop", "pop.csv", "--validation-col", "nope"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let out = textlabel(&["simulate", "--pop", "pop.csv", "--config", "sim.toml", "--out", out_dir.to_str().unwrap(), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells = textlabel_core::simulate::read_cells_csv(&out_dir.join("cells.csv")).unwrap();
    assert_eq!(cells.len(), 6);
    let summary: Value = serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["invalid_cells"], 0);
}

#[test]
fn probe_subcommand_counts_planted_reproductions() {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let template = ProbeConfig::new("http://unused", "mock");
    let (pop, fixture) = planted_corpus(200, 17, 5, &template);
    let server = runtime.block_on(MockServer::start(fixture)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let pop_path = dir.path().join("corpus.json");
    save_population(&pop, &pop_path, Format::Json).unwrap();
    let cache = dir.path().join("cache");
    let records = dir.path().join("records.jsonl");
    let args = [
        "probe",
        "--pop",
        pop_path.to_str().unwrap(),
        "--endpoint",
        &server.base_url(),
        "--model",
        "mock",
        "--embed-model",
        "mock-embed",
        "--split",
        "0.5",
        "--concurrency",
        "8",
        "--cache",
        cache.to_str().unwrap(),
        "--records-out",
        records.to_str().unwrap(),
        "--json",
    ];
    let first = textlabel(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let v: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["exact_match_count"], 17);
    assert_eq!(v["report"]["exact_match_count"], 17);
    assert_eq!(std::fs::read_to_string(&records).unwrap().lines().count(), 200);

    let served = server.requests();
    let second = textlabel(&args);
    assert_eq!(server.requests(), served);
    assert_eq!(first.stdout, second.stdout);
}
