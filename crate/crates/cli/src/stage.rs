//! Stage records: which inputs and parameters produced which outputs.
//!
//! A stage is skipped when its record matches the current input digests and
//! parameters and every recorded output is still on disk unchanged.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: Vec<FileDigest>,
    pub params: serde_json::Value,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<(String, u64)> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(h.finalize()), total))
}

fn display_path(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Runs stages under one output root, caching input digests.
pub struct StageRunner {
    pub output_root: PathBuf,
    /// Input paths are recorded relative to this directory.
    pub input_base: PathBuf,
    cache: HashMap<PathBuf, (String, u64)>,
    /// Stage names in run order.
    pub stages: Vec<String>,
    /// Record paths in run order.
    pub records: Vec<String>,
    pub skipped: Vec<String>,
}

impl StageRunner {
    pub fn new(output_root: PathBuf, input_base: PathBuf) -> Self {
        Self {
            output_root,
            input_base,
            cache: HashMap::new(),
            stages: Vec::new(),
            records: Vec::new(),
            skipped: Vec::new(),
        }
    }

    fn digest_input(&mut self, path: &Path) -> anyhow::Result<FileDigest> {
        let (sha256, bytes) = match self.cache.get(path) {
            Some(d) => d.clone(),
            None => {
                let d = sha256_file(path)?;
                self.cache.insert(path.to_path_buf(), d.clone());
                d
            }
        };
        // outputs of earlier stages are named relative to the output root
        let base = if path.starts_with(&self.output_root) {
            &self.output_root
        } else {
            &self.input_base
        };
        Ok(FileDigest {
            path: display_path(path, base),
            sha256,
            bytes,
        })
    }

    pub fn record_path(&self, stage: &str) -> PathBuf {
        self.output_root.join("stages").join(format!("{stage}.json"))
    }

    fn outputs_intact(&self, record: &StageRecord) -> bool {
        record.outputs.iter().all(|o| {
            let p = self.output_root.join(&o.path);
            matches!(sha256_file(&p), Ok((sha, bytes)) if sha == o.sha256 && bytes == o.bytes)
        })
    }

    /// Run `body` unless an identical earlier run is on record. `body`
    /// returns the files it wrote.
    pub fn run(
        &mut self,
        stage: &str,
        inputs: &[PathBuf],
        params: serde_json::Value,
        body: impl FnOnce() -> anyhow::Result<Vec<PathBuf>>,
    ) -> anyhow::Result<()> {
        let mut digests = Vec::with_capacity(inputs.len());
        for p in inputs {
            digests.push(self.digest_input(p)?);
        }
        let record_path = self.record_path(stage);
        self.stages.push(stage.to_string());
        self.records.push(display_path(&record_path, &self.output_root));
        if let Ok(text) = std::fs::read_to_string(&record_path) {
            if let Ok(old) = serde_json::from_str::<StageRecord>(&text) {
                if old.inputs == digests && old.params == params && self.outputs_intact(&old) {
                    tracing::info!(stage, "skipped, outputs up to date");
                    self.skipped.push(stage.to_string());
                    return Ok(());
                }
            }
        }
        let started = std::time::Instant::now();
        let written = body().with_context(|| format!("stage {stage} failed"))?;
        let mut outputs = Vec::with_capacity(written.len());
        for p in &written {
            let (sha256, bytes) = sha256_file(p)?;
            self.cache.insert(p.clone(), (sha256.clone(), bytes));
            outputs.push(FileDigest {
                path: display_path(p, &self.output_root),
                sha256,
                bytes,
            });
        }
        let record = StageRecord {
            stage: stage.to_string(),
            inputs: digests,
            params,
            outputs,
        };
        std::fs::create_dir_all(record_path.parent().expect("stages dir"))?;
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        std::fs::write(&record_path, text).with_context(|| format!("writing {}", record_path.display()))?;
        tracing::info!(stage, elapsed_ms = started.elapsed().as_millis() as u64, outputs = written.len(), "stage complete");
        Ok(())
    }
}
