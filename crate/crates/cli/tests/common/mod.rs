#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chronoforge_core::synth::write_pipeline_fixture;
use chronoforge_core::tokenizer::train_whitespace;
use serde_json::json;

pub const YEARS: [i32; 3] = [2012, 2013, 2014];
pub const SEED: u64 = 11;

/// Synthetic inputs plus a config under `root`; returns the config path.
pub fn setup(root: &Path) -> PathBuf {
    let fx = write_pipeline_fixture(&root.join("inputs"), &YEARS, SEED).unwrap();
    let seed_text = std::fs::read_to_string(fx.news_root.join("2012").join("part-000.txt")).unwrap();
    let spec = train_whitespace([seed_text.as_str()]);
    let tok = root.join("inputs").join("tokenizer.json");
    spec.save(&tok).unwrap();

    let common_word = seed_text.split_whitespace().next().unwrap().to_string();
    std::fs::write(root.join("inputs").join("terms.txt"), format!("qazix\n{common_word}\n")).unwrap();
    std::fs::write(
        root.join("inputs").join("events.csv"),
        "term,event_year\nqazix,2013\n",
    )
    .unwrap();

    let config = json!({
        "years": YEARS,
        "total_tokens": 6000,
        "seed": SEED,
        "seq_len": 256,
        "tokenizer": "inputs/tokenizer.json",
        "paths": {
            "wiki_dump": "inputs/wiki/history.xml",
            "news_root": "inputs/news",
            "vital_dir": "inputs/vital",
            "output_root": "out"
        },
        "eval": {
            "terms": "inputs/terms.txt",
            "events": "inputs/events.csv",
            "offsets": [-1, 0, 1]
        }
    });
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

pub fn write_config(root: &Path, value: &serde_json::Value) -> PathBuf {
    let path = root.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

pub fn read_config(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir`, relative and sorted.
pub fn list_files(dir: &Path) -> Vec<PathBuf> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push(p.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
