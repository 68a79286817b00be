//! Yearly, document-split news collections.
//!
//! The source only dates documents to the year, so a day is synthesized per
//! document with a [`DatePolicy`]; the day feeds the recency weights.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::record::{DocRecord, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Documents separated by one or more blank lines.
    BlankLine,
    /// One document per line.
    PerLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum DatePolicy {
    /// Every document sits on 2 July, the calendar midpoint of a common year.
    MidYear,
    /// A day drawn uniformly from the year, keyed by seed and document.
    Uniform { seed: u64 },
}

impl DatePolicy {
    pub fn tag(&self) -> String {
        match self {
            DatePolicy::MidYear => "mid-year".to_string(),
            DatePolicy::Uniform { seed } => format!("uniform(seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsDoc {
    pub source_file: String,
    /// Position among the emitted documents of `source_file`.
    pub ordinal: u64,
    pub year: i32,
    pub text: String,
}

impl NewsDoc {
    pub fn doc_id(&self) -> String {
        format!("news:{}:{}:{}", self.year, self.source_file, self.ordinal)
    }

    pub fn into_record(self, policy: DatePolicy) -> DocRecord {
        let date = assign_day_timestamp(&self, policy);
        DocRecord {
            id: self.doc_id(),
            source: Source::News,
            page_id: None,
            rev_id: None,
            timestamp: date.and_hms_opt(0, 0, 0).expect("midnight").and_utc(),
            title: None,
            source_file: Some(self.source_file),
            ordinal: Some(self.ordinal),
            text: self.text,
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsIngestReport {
    pub year: i32,
    pub files: Vec<String>,
    pub documents: u64,
    pub dropped_invalid_utf8: u64,
    pub dropped_empty: u64,
}

/// Trim and NFC-normalize; the same normalization the deduplicator hashes.
pub fn normalize_text(text: &str) -> String {
    text.trim().nfc().collect::<String>().trim().to_string()
}

fn is_blank(line: &[u8]) -> bool {
    line.iter().all(u8::is_ascii_whitespace)
}

/// Regular, non-hidden files of a year directory in name order.
pub fn year_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Streams the documents of one year directory in (file name, ordinal) order.
pub struct NewsReader {
    year: i32,
    split: SplitMode,
    files: std::vec::IntoIter<PathBuf>,
    current: Option<(String, BufReader<File>, PathBuf)>,
    ordinal: u64,
    line: Vec<u8>,
    report: NewsIngestReport,
}

impl NewsReader {
    pub fn open(dir: &Path, year: i32, split: SplitMode) -> Result<Self> {
        let files = year_files(dir)?;
        Ok(Self {
            year,
            split,
            files: files.into_iter(),
            current: None,
            ordinal: 0,
            line: Vec::new(),
            report: NewsIngestReport {
                year,
                ..Default::default()
            },
        })
    }

    pub fn report(&self) -> &NewsIngestReport {
        &self.report
    }

    pub fn into_report(self) -> NewsIngestReport {
        self.report
    }

    /// Next raw document of the current file, as bytes.
    fn next_chunk(&mut self) -> Result<Option<Vec<u8>>> {
        let Some((_, reader, path)) = self.current.as_mut() else {
            return Ok(None);
        };
        let mut doc: Vec<u8> = Vec::new();
        loop {
            self.line.clear();
            let n = reader
                .read_until(b'\n', &mut self.line)
                .map_err(|e| Error::io(path.as_path(), e))?;
            if n == 0 {
                return Ok(if doc.is_empty() { None } else { Some(doc) });
            }
            let blank = is_blank(&self.line);
            match self.split {
                SplitMode::PerLine => {
                    if !blank {
                        return Ok(Some(std::mem::take(&mut self.line)));
                    }
                }
                SplitMode::BlankLine => {
                    if blank {
                        if !doc.is_empty() {
                            return Ok(Some(doc));
                        }
                    } else {
                        doc.extend_from_slice(&self.line);
                    }
                }
            }
        }
    }

    fn advance_file(&mut self) -> Result<bool> {
        let Some(path) = self.files.next() else {
            self.current = None;
            return Ok(false);
        };
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.report.files.push(name.clone());
        self.current = Some((name, BufReader::new(file), path));
        self.ordinal = 0;
        Ok(true)
    }

    fn next_doc(&mut self) -> Result<Option<NewsDoc>> {
        loop {
            if self.current.is_none() && !self.advance_file()? {
                return Ok(None);
            }
            let Some(chunk) = self.next_chunk()? else {
                self.current = None;
                continue;
            };
            let Ok(text) = String::from_utf8(chunk) else {
                self.report.dropped_invalid_utf8 += 1;
                continue;
            };
            let text = normalize_text(&text);
            if text.is_empty() {
                self.report.dropped_empty += 1;
                continue;
            }
            let source_file = self.current.as_ref().map(|c| c.0.clone()).unwrap_or_default();
            let doc = NewsDoc {
                source_file,
                ordinal: self.ordinal,
                year: self.year,
                text,
            };
            self.ordinal += 1;
            self.report.documents += 1;
            return Ok(Some(doc));
        }
    }
}

impl Iterator for NewsReader {
    type Item = Result<NewsDoc>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_doc() {
            Ok(Some(doc)) => Some(Ok(doc)),
            Ok(None) => None,
            Err(e) => {
                self.current = None;
                self.files = Vec::new().into_iter();
                Some(Err(e))
            }
        }
    }
}

/// Read every document of one year directory.
pub fn ingest_year(dir: &Path, year: i32, split: SplitMode) -> Result<(Vec<NewsDoc>, NewsIngestReport)> {
    let mut reader = NewsReader::open(dir, year, split)?;
    let docs = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((docs, reader.into_report()))
}

fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// The day a document is dated to under `policy`; always inside its year.
pub fn assign_day_timestamp(doc: &NewsDoc, policy: DatePolicy) -> NaiveDate {
    match policy {
        DatePolicy::MidYear => NaiveDate::from_ymd_opt(doc.year, 7, 2).expect("valid date"),
        DatePolicy::Uniform { seed } => {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(doc.year.to_le_bytes());
            h.update(doc.source_file.as_bytes());
            h.update([0u8]);
            h.update(doc.ordinal.to_le_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let offset = rng.gen_range(0..days_in_year(doc.year));
            let first = NaiveDate::from_ymd_opt(doc.year, 1, 1).expect("valid date");
            first + chrono::Days::new(u64::from(offset))
        }
    }
}

/// Day of the year (0-based) of a date; helper for distribution checks.
pub fn day_of_year(date: NaiveDate) -> u32 {
    date.ordinal0()
}
