//! Wikipedia revision history: snapshot selection, cleaning and reporting.

mod clean;
mod dump;

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

pub use clean::{clean_wikitext, clean_with_report, CleanReport};
pub use dump::{
    is_redirect, parse_timestamp, stream_dump, DumpOptions, IngestStats, SnapshotStream,
    DEFAULT_MAX_TEXT_BYTES,
};

use crate::record::{DocRecord, Source};

/// One revision of one page. Identity is `page_id`; titles change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevisionRecord {
    pub page_id: u64,
    pub rev_id: u64,
    pub timestamp: DateTime<Utc>,
    pub title: String,
    pub wikitext: String,
}

/// A page as it stood at the cutoff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotPage {
    pub page_id: u64,
    pub rev_id: u64,
    #[serde(with = "crate::record::rfc3339")]
    pub timestamp: DateTime<Utc>,
    pub title: String,
    #[serde(rename = "text")]
    pub clean_text: String,
}

impl SnapshotPage {
    pub fn doc_id(page_id: u64) -> String {
        format!("wiki:{page_id}")
    }

    pub fn into_record(self) -> DocRecord {
        DocRecord {
            id: Self::doc_id(self.page_id),
            source: Source::Wiki,
            page_id: Some(self.page_id),
            rev_id: Some(self.rev_id),
            timestamp: self.timestamp,
            title: Some(self.title),
            source_file: None,
            ordinal: None,
            text: self.clean_text,
        }
    }
}

/// The inclusive cutoff instant for a date: 23:59:59 UTC that day.
pub fn cutoff_instant(date: NaiveDate) -> DateTime<Utc> {
    date.and_hms_opt(23, 59, 59)
        .expect("valid time of day")
        .and_utc()
}

/// Latest revision at or before `cutoff`, ties on timestamp going to the
/// larger `rev_id`.
pub fn select_revision(revisions: &[RevisionRecord], cutoff: DateTime<Utc>) -> Option<u64> {
    revisions
        .iter()
        .filter(|r| r.timestamp <= cutoff)
        .max_by_key(|r| (r.timestamp, r.rev_id))
        .map(|r| r.rev_id)
}

/// Count snapshots by calendar year of their chosen revision.
pub fn revision_age_report<'a>(
    pages: impl IntoIterator<Item = &'a SnapshotPage>,
) -> BTreeMap<i32, u64> {
    let mut hist = BTreeMap::new();
    for page in pages {
        *hist.entry(page.timestamp.year()).or_insert(0) += 1;
    }
    hist
}
