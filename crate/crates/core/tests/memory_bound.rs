//! Peak RSS while streaming a generated dump must not grow with dump size.

use std::io::{BufReader, Read};

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use chronoforge_core::synth::{write_page, SynthPage, DUMP_FOOTER, DUMP_HEADER};
use chronoforge_core::wiki::{cutoff_instant, stream_dump, DumpOptions, RevisionRecord};

/// Generates a dump of about `limit` bytes on the fly.
struct LazyDump {
    next_page: u64,
    buf: Vec<u8>,
    pos: usize,
    produced: u64,
    limit: u64,
    finished: bool,
}

impl LazyDump {
    fn new(limit: u64) -> Self {
        Self {
            next_page: 0,
            buf: DUMP_HEADER.as_bytes().to_vec(),
            pos: 0,
            produced: 0,
            limit,
            finished: false,
        }
    }

    fn refill(&mut self) {
        self.buf.clear();
        self.pos = 0;
        if self.finished {
            return;
        }
        if self.produced >= self.limit {
            self.buf.extend_from_slice(DUMP_FOOTER.as_bytes());
            self.finished = true;
            return;
        }
        let id = self.next_page;
        self.next_page += 1;
        let t0 = Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0).unwrap();
        let body = format!("Page {id} text with a [[link]] and {{{{tpl}}}}. ").repeat(40);
        let page = SynthPage {
            page_id: id + 1,
            ns: 0,
            redirect: false,
            revisions: (0..6)
                .map(|r| RevisionRecord {
                    page_id: id + 1,
                    rev_id: id * 10 + r,
                    timestamp: t0 + Duration::days((id % 1000) as i64 + 300 * r as i64),
                    title: format!("Page {id}"),
                    wikitext: body.clone(),
                })
                .collect(),
        };
        write_page(&mut self.buf, &page).unwrap();
    }
}

impl Read for LazyDump {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        if self.pos >= self.buf.len() {
            self.refill();
            if self.buf.is_empty() {
                return Ok(0);
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        self.produced += n as u64;
        Ok(n)
    }
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn stream(bytes: u64, ceiling_mib: u64) {
    let before = peak_rss_kib();
    let cutoff = cutoff_instant(NaiveDate::from_ymd_opt(2012, 12, 31).unwrap());
    let mut s = stream_dump(BufReader::new(LazyDump::new(bytes)), DumpOptions::new(cutoff));
    let mut emitted = 0u64;
    for page in s.by_ref() {
        page.unwrap();
        emitted += 1;
    }
    assert!(emitted > 0);
    assert_eq!(s.stats().emitted, emitted);
    if let (Some(b), Some(a)) = (before, peak_rss_kib()) {
        let grown = a.saturating_sub(b) / 1024;
        assert!(grown < ceiling_mib, "peak RSS grew by {grown} MiB on a {} MiB dump", bytes >> 20);
    }
}

#[test]
fn streaming_128_mib_stays_under_ceiling() {
    stream(128 << 20, 64);
}

#[test]
#[ignore = "generates 1 GiB; run with --release -- --ignored"]
fn streaming_1_gib_stays_under_ceiling() {
    stream(1 << 30, 64);
}
