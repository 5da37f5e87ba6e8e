#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use pie_core::dataio::Dataset;
use pie_core::synthetic;

/// Writes `ds` as CSV plus an all-numeric schema with target `y`.
pub fn write_dataset(dir: &Path, name: &str, ds: &Dataset) -> (PathBuf, PathBuf) {
    let data = dir.join(format!("{name}.csv"));
    let schema = dir.join(format!("{name}.schema.json"));
    let names = ds.column_names();
    let mut text = names.join(",") + ",y\n";
    let y = ds.y().unwrap();
    for i in 0..ds.n_rows() {
        let row: Vec<String> = ds.row(i).iter().map(|v| format!("{v}")).collect();
        text += &format!("{},{}\n", row.join(","), y[i]);
    }
    fs::write(&data, text).unwrap();
    let mut cols: Vec<serde_json::Value> = names
        .iter()
        .map(|n| serde_json::json!({ "name": n, "kind": "numeric" }))
        .collect();
    cols.push(serde_json::json!({ "name": "y", "kind": "target" }));
    fs::write(&schema, serde_json::to_string_pretty(&cols).unwrap()).unwrap();
    (data, schema)
}

pub fn synthetic_csv(dir: &Path, name: &str, n: usize, n_noise: usize, seed: u64) -> (PathBuf, PathBuf) {
    write_dataset(dir, name, &synthetic::interaction(n, n_noise, 0.1, seed))
}

pub fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}
