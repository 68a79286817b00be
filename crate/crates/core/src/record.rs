//! The document record shared by every stage, and its JSONL encoding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wiki,
    News,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Wiki => "wiki",
            Source::News => "news",
        }
    }
}

/// One cleaned, dated document.
///
/// Wiki records carry `page_id`/`rev_id`/`title`; news records carry
/// `source_file`/`ordinal`. The `id` is unique across both domains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub source: Source,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub page_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rev_id: Option<u64>,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ordinal: Option<u64>,
    pub text: String,
}

impl DocRecord {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }

    pub fn year(&self) -> i32 {
        self.timestamp.year()
    }
}

pub(crate) mod rfc3339 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Format a timestamp the way every output file does.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Writes one JSON value per line with LF endings.
pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl JsonlWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner: BufWriter::new(file),
        })
    }
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.inner, value)?;
        self.inner.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Read a whole JSONL file of records.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(value);
    }
    Ok(out)
}

/// Write records to a JSONL file.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut w = JsonlWriter::create(path)?;
    for r in records {
        w.write(r).map_err(|e| Error::io(path, e))?;
    }
    w.finish().map_err(|e| Error::io(path, e))?;
    Ok(())
}
