#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn textlabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textlabel"))
        .args(args)
        .current_dir(data_dir())
        .output()
        .expect("spawn textlabel")
}

/// Golden name and arguments; every command runs from the data directory.
pub const GOLDEN: &[(&str, &[&str])] = &[
    (
        "debias_lhs",
        &["debias", "--side", "lhs", "--pop", "pop.csv", "--labeler", "synthetic", "--validation-frac", "0.05", "--seed", "7", "--json"],
    ),
    ("debias_rhs", &["debias", "--side", "rhs", "--pop", "pop.csv", "--validation-frac", "0.1", "--seed", "7", "--json"]),
    ("debias_validation_col", &["debias", "--pop", "pop.csv", "--validation-col", "arm", "--variance", "hc1", "--json"]),
    (
        "debias_bootstrap",
        &["debias", "--pop", "pop.csv", "--validation-frac", "0.2", "--variance", "bootstrap", "--bootstrap-reps", "200", "--seed", "3", "--json"],
    ),
    ("estimate_plug_in", &["estimate", "--method", "plug_in", "--pop", "pop.csv", "--validation-frac", "0.05", "--seed", "7", "--json"]),
    ("estimate_validation_only", &["estimate", "--method", "validation_only", "--pop", "pop.csv", "--validation-col", "arm", "--json"]),
    ("targets_lhs", &["targets", "--pop", "pop.csv", "--json"]),
    ("targets_rhs", &["targets", "--pop", "pop.csv", "--side", "rhs", "--json"]),
    ("leakage_file", &["leakage", "--pop", "small.csv", "--context", "context.json", "--json"]),
    (
        "leakage_moment",
        &["leakage", "--pop", "small.csv", "--context", "context.json", "--family", "product", "--j", "1", "--theta-lo", "-1,-1", "--theta-hi", "1,1", "--v-lo", "-5", "--v-hi", "5", "--g-lower", "0.5", "--json"],
    ),
    (
        "bounds",
        &["bounds", "--pop", "pop.csv", "--context", "random(0.5)", "--family", "residual", "--j", "1", "--theta-lo", "-2,-2", "--theta-hi", "2,2", "--v-lo", "-100", "--v-hi", "100", "--g-lower", "0.1", "--delta", "0.25", "--json"],
    ),
    ("simulate", &["simulate", "--pop", "pop.csv", "--config", "sim.toml", "--json"]),
    ("check_self", &["check", "--self", "--json"]),
];

/// Runs a golden case; with `TEXTLABEL_BLESS=1` the golden file is rewritten.
pub fn golden_matches(name: &str, args: &[&str]) -> Result<(), String> {
    let out = textlabel(args);
    if !out.status.success() {
        return Err(format!("{name}: exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let path = golden_dir().join(format!("{name}.json"));
    if std::env::var_os("TEXTLABEL_BLESS").is_some() {
        std::fs::write(&path, &out.stdout).unwrap();
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == out.stdout {
        Ok(())
    } else {
        Err(format!("{name}: output differs from {}", path.display()))
    }
}
