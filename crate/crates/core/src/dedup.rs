//! Exact-content deduplication by SHA-256.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::news::normalize_text;
use crate::record::DocRecord;

pub type Digest = [u8; 32];

/// SHA-256 of the UTF-8 bytes of `text` after trim + NFC.
pub fn content_digest(text: &str) -> Digest {
    Sha256::digest(normalize_text(text).as_bytes()).into()
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptDropped {
    pub kept: u64,
    pub dropped: u64,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub scope: String,
    pub kept: u64,
    pub dropped: u64,
    pub by_year: BTreeMap<i32, KeptDropped>,
}

/// Digests seen so far; keeps the first document with each digest.
#[derive(Debug, Default)]
pub struct DigestIndex {
    seen: HashSet<Digest>,
    report: DedupReport,
}

impl DigestIndex {
    pub fn new(scope: impl Into<String>) -> Self {
        Self {
            seen: HashSet::new(),
            report: DedupReport {
                scope: scope.into(),
                ..Default::default()
            },
        }
    }

    /// Record a document; true if it is the first with its content.
    pub fn insert(&mut self, doc: &DocRecord) -> bool {
        let fresh = self.seen.insert(content_digest(&doc.text));
        let year = self.report.by_year.entry(doc.year()).or_default();
        if fresh {
            self.report.kept += 1;
            year.kept += 1;
        } else {
            self.report.dropped += 1;
            year.dropped += 1;
        }
        fresh
    }

    pub fn total(&self) -> u64 {
        self.report.kept + self.report.dropped
    }

    pub fn report(&self) -> &DedupReport {
        &self.report
    }

    pub fn into_report(self) -> DedupReport {
        self.report
    }
}

/// Iterator adapter dropping later exact duplicates.
pub struct DedupStream<I> {
    inner: I,
    index: DigestIndex,
}

impl<I> DedupStream<I> {
    pub fn report(&self) -> &DedupReport {
        self.index.report()
    }

    pub fn into_report(self) -> DedupReport {
        self.index.into_report()
    }
}

impl<I: Iterator<Item = DocRecord>> Iterator for DedupStream<I> {
    type Item = DocRecord;

    fn next(&mut self) -> Option<DocRecord> {
        let index = &mut self.index;
        self.inner.find(|doc| index.insert(doc))
    }
}

pub fn dedup_stream<I: IntoIterator<Item = DocRecord>>(
    docs: I,
    scope: impl Into<String>,
) -> DedupStream<I::IntoIter> {
    DedupStream {
        inner: docs.into_iter(),
        index: DigestIndex::new(scope),
    }
}

/// Deduplicate a whole vector, returning survivors and the report.
pub fn dedup_all(docs: Vec<DocRecord>, scope: &str) -> (Vec<DocRecord>, DedupReport) {
    let mut stream = dedup_stream(docs, scope);
    let kept: Vec<_> = stream.by_ref().collect();
    (kept, stream.into_report())
}
