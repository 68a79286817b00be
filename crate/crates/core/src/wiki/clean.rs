//! Wikitext to plain text.
//!
//! The cleaner is a sequence of small rewriting passes. Each pass only ever
//! removes markup, so the whole pipeline is repeated until the text stops
//! changing; the result is therefore a fixpoint and cleaning is idempotent.
//! Nothing here can fail: unbalanced constructs are cut at a heuristic
//! boundary and noted in [`CleanReport`].

use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

/// Which unbalanced constructs were cut heuristically.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub unclosed_comment: bool,
    pub unclosed_ref: bool,
    pub unclosed_template: bool,
    pub unclosed_table: bool,
    pub unclosed_link: bool,
}

impl CleanReport {
    pub fn is_flagged(&self) -> bool {
        self.unclosed_comment
            || self.unclosed_ref
            || self.unclosed_template
            || self.unclosed_table
            || self.unclosed_link
    }
}

// Hard stop for the fixpoint loop; every pass shortens or preserves the text,
// so real inputs converge in two or three rounds.
const MAX_ROUNDS: usize = 32;

/// Strip wikitext markup and return plain prose.
pub fn clean_wikitext(wikitext: &str) -> String {
    clean_with_report(wikitext).0
}

/// Like [`clean_wikitext`], also reporting unbalanced constructs.
pub fn clean_with_report(wikitext: &str) -> (String, CleanReport) {
    let mut report = CleanReport::default();
    let mut current = clean_round(wikitext, &mut report);
    for _ in 0..MAX_ROUNDS {
        let next = clean_round(&current, &mut report);
        if next == current {
            break;
        }
        current = next;
    }
    (current, report)
}

fn clean_round(text: &str, report: &mut CleanReport) -> String {
    let s = strip_comments(text, report);
    let s = strip_refs(&s, report);
    let s = strip_templates(&s, report);
    let s = strip_tables(&s, report);
    let s = rewrite_links(&s, report);
    let s = rewrite_external_links(&s);
    let s = strip_html(&s);
    let s = magic_words().replace_all(&s, "");
    normalize_lines(&s)
}

fn strip_comments(s: &str, report: &mut CleanReport) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("<!--") {
        out.push_str(&rest[..start]);
        match rest[start + 4..].find("-->") {
            Some(end) => rest = &rest[start + 4 + end + 3..],
            None => {
                report.unclosed_comment = true;
                return out;
            }
        }
    }
    out.push_str(rest);
    out
}

fn ref_self_closing() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<ref\b[^<>]*/>").unwrap())
}

fn ref_paired() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)<ref\b[^<>]*>.*?</ref\s*>").unwrap())
}

fn ref_open() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)<ref\b[^<>]*>").unwrap())
}

fn strip_refs(s: &str, report: &mut CleanReport) -> String {
    let s = ref_self_closing().replace_all(s, "");
    let s = ref_paired().replace_all(&s, "");
    // An opening tag with no closing tag swallows the rest of its paragraph.
    let mut out = String::with_capacity(s.len());
    let mut rest: &str = &s;
    while let Some(m) = ref_open().find(rest) {
        report.unclosed_ref = true;
        out.push_str(&rest[..m.start()]);
        let tail = &rest[m.end()..];
        match tail.find("\n\n") {
            Some(p) => rest = &tail[p..],
            None => rest = "",
        }
    }
    out.push_str(rest);
    out
}

fn strip_templates(s: &str, report: &mut CleanReport) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    let mut copied_from = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && bytes.get(i + 1) == Some(&b'{') {
            if depth == 0 {
                out.push_str(&s[copied_from..i]);
            }
            depth += 1;
            i += 2;
        } else if bytes[i] == b'}' && bytes.get(i + 1) == Some(&b'}') {
            if depth == 0 {
                // stray closer
                out.push_str(&s[copied_from..i]);
            } else {
                depth -= 1;
            }
            i += 2;
            if depth == 0 {
                copied_from = i;
            }
        } else {
            i += 1;
        }
    }
    if depth > 0 {
        report.unclosed_template = true;
    } else {
        out.push_str(&s[copied_from..]);
    }
    out
}

fn strip_tables(s: &str, report: &mut CleanReport) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for line in s.split_inclusive('\n') {
        let t = line.trim_start();
        if t.starts_with("{|") {
            depth += 1;
            continue;
        }
        if depth > 0 {
            if t.starts_with("|}") {
                depth -= 1;
            }
            continue;
        }
        out.push_str(line);
    }
    if depth > 0 {
        report.unclosed_table = true;
    }
    out
}

const DROPPED_NAMESPACES: [&str; 4] = ["file", "image", "media", "category"];

fn rewrite_links(s: &str, report: &mut CleanReport) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut copied_from = 0;
    let mut i = 0;
    while i + 1 < bytes.len() {
        if !(bytes[i] == b'[' && bytes[i + 1] == b'[') {
            i += 1;
            continue;
        }
        out.push_str(&s[copied_from..i]);
        match matching_link_end(bytes, i + 2) {
            Some(end) => {
                out.push_str(&link_display(&s[i + 2..end], report));
                i = end + 2;
            }
            None => {
                // unclosed: drop to end of line
                report.unclosed_link = true;
                i = s[i..].find('\n').map_or(bytes.len(), |p| i + p);
            }
        }
        copied_from = i;
    }
    out.push_str(&s[copied_from..]);
    out
}

/// Index of the `]]` closing a link whose body starts at `from`.
fn matching_link_end(bytes: &[u8], from: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut i = from;
    while i + 1 < bytes.len() {
        match (bytes[i], bytes[i + 1]) {
            (b'[', b'[') => {
                depth += 1;
                i += 2;
            }
            (b']', b']') => {
                if depth == 0 {
                    return Some(i);
                }
                depth -= 1;
                i += 2;
            }
            _ => i += 1,
        }
    }
    None
}

fn link_display(inner: &str, report: &mut CleanReport) -> String {
    let parts = split_top_level_pipes(inner);
    let target = parts[0].trim();
    if let Some((ns, _)) = target.split_once(':') {
        let ns = ns.trim().to_ascii_lowercase();
        if DROPPED_NAMESPACES.contains(&ns.as_str()) {
            return String::new();
        }
    }
    let target = target.strip_prefix(':').unwrap_or(target);
    let anchor = match parts.last() {
        Some(last) if parts.len() > 1 && !last.trim().is_empty() => *last,
        _ => target,
    };
    rewrite_links(anchor, report)
}

fn split_top_level_pipes(inner: &str) -> Vec<&str> {
    let bytes = inner.as_bytes();
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'[' if bytes.get(i + 1) == Some(&b'[') => {
                depth += 1;
                i += 2;
                continue;
            }
            b']' if bytes.get(i + 1) == Some(&b']') && depth > 0 => {
                depth -= 1;
                i += 2;
                continue;
            }
            b'|' if depth == 0 => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    parts.push(&inner[start..]);
    parts
}

fn external_link() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[(?:[A-Za-z][A-Za-z0-9+.\-]*:)?//[^\s\[\]]*(?:[ \t]+([^\]\n]*))?\]").unwrap()
    })
}

fn rewrite_external_links(s: &str) -> String {
    external_link()
        .replace_all(s, |caps: &regex::Captures<'_>| {
            caps.get(1).map_or(String::new(), |m| m.as_str().to_string())
        })
        .into_owned()
}

fn line_break() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)<br\s*/?\s*>").unwrap())
}

fn html_tag() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?[A-Za-z][A-Za-z0-9]*(?:\s[^<>]*)?/?>").unwrap())
}

fn magic_words() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"__[A-Z]+__").unwrap())
}

fn strip_html(s: &str) -> String {
    let s = line_break().replace_all(s, "\n");
    let s = html_tag().replace_all(&s, "");
    s.replace(['<', '>'], "")
}

fn heading() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^=+\s*(.*?)\s*=+$").unwrap())
}

fn emphasis() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"''+").unwrap())
}

fn spaces() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[ \t\u{a0}]+").unwrap())
}

fn clean_line(line: &str) -> String {
    let mut line = line.trim();
    if line.len() >= 4 && line.bytes().all(|b| b == b'-') {
        return String::new();
    }
    if let Some(caps) = heading().captures(line) {
        line = caps.get(1).map_or("", |m| m.as_str());
    }
    let line = line.trim_start_matches(['*', '#', ':', ';', ' ', '\t']);
    let line = emphasis().replace_all(line, "");
    spaces().replace_all(&line, " ").trim().to_string()
}

fn normalize_lines(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_blank = false;
    for line in s.lines() {
        let line = clean_line(line);
        if line.is_empty() {
            pending_blank = !out.is_empty();
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
            if pending_blank {
                out.push('\n');
            }
        }
        pending_blank = false;
        out.push_str(&line);
    }
    out
}
