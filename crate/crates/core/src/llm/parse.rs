//! Structured-output extraction from free-form LLM replies.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::text::{normalize_title, title_key};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply contains no parseable item titles")]
    NoItems,
    #[error("expected 3 categories, found {found}")]
    TooFewCategories { found: usize },
}

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:#{1,6}\s*)?(?:(?P<num>\(?\d{1,3}[.):])(?P<ws>\s*)|[-*•+–]\s+)(?P<rest>.+)$").unwrap());
static ITEM_SECTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:#{1,6}\s*)?\**\s*(?:recommendations?|recommended (?:items|products)|final (?:list|selection|recommendations?)|selected (?:items|products)|top[- ]\d*\s*(?:items|products|recommendations)?)\s*\**\s*:?\s*\**\s*$").unwrap()
});
static CATEGORY_SECTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(?:#{1,6}\s*)?\**\s*(?:step 2[^:]*:\s*)?(?:product\s+)?categories\s*\**\s*:\s*\**\s*(?P<inline>.*)$").unwrap());
static CATEGORY_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^category\s*\d*\s*[:.\-]\s*").unwrap());
static BOLD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\*\*(?P<inner>[^*]+)\*\*(?P<tail>.*)$").unwrap());
static TRAILING_PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?P<head>.+?)\s*\((?P<paren>[^()]*)\)\s*$").unwrap());

fn list_entries(lines: &[&str]) -> Vec<String> {
    lines
        .iter()
        .filter_map(|l| LIST_MARKER.captures(l))
        // "4.5 stars" is not a list entry
        .filter(|c| !(c.name("num").is_some() && c["ws"].is_empty() && c["rest"].starts_with(|ch: char| ch.is_ascii_digit())))
        .map(|c| c["rest"].trim().to_string())
        .collect()
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('`', '`'), ('«', '»')] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}

/// A title wrapped in bold or quotes followed by an explanation keeps only the
/// wrapped part.
fn leading_emphasis(s: &str) -> Option<String> {
    if let Some(c) = BOLD.captures(s) {
        let tail = c["tail"].trim_start();
        if tail.is_empty() || tail.starts_with([':', '-', '–', '—', '(']) {
            return Some(c["inner"].trim().to_string());
        }
    }
    for (open, close) in [('"', '"'), ('“', '”')] {
        if let Some(rest) = s.strip_prefix(open) {
            if let Some(end) = rest.find(close) {
                let tail = rest[end + close.len_utf8()..].trim_start();
                if tail.is_empty() || tail.starts_with([':', '-', '–', '—', '(', ',']) {
                    return Some(rest[..end].trim().to_string());
                }
            }
        }
    }
    None
}

fn clean_title(entry: &str) -> String {
    let mut t = leading_emphasis(entry).unwrap_or_else(|| entry.replace("**", ""));
    t = strip_quotes(&t).to_string();
    if let Some(c) = TRAILING_PAREN.captures(&t) {
        if title_key(&c["head"]) == title_key(strip_quotes(&c["paren"])) {
            t = c["head"].to_string();
        }
    }
    normalize_title(strip_quotes(&t))
}

/// Extracts up to `n` titles from numbered or bulleted lines, in reply
/// order, deduplicated case-insensitively.
///
/// When the reply has a recommendations heading, only lines after the last
/// such heading are considered, so a bulleted preference summary above it is
/// ignored.
pub fn parse_item_list(reply: &str, n: usize) -> Result<Vec<String>, ParseError> {
    let lines: Vec<&str> = reply.lines().collect();
    let start = lines.iter().rposition(|l| ITEM_SECTION.is_match(l)).map_or(0, |i| i + 1);
    let mut seen = HashSet::new();
    let titles: Vec<String> = list_entries(&lines[start..])
        .iter()
        .map(|e| clean_title(e))
        .filter(|t| !t.is_empty() && seen.insert(title_key(t)))
        .take(n)
        .collect();
    if titles.is_empty() {
        Err(ParseError::NoItems)
    } else {
        Ok(titles)
    }
}

fn clean_category(entry: &str) -> String {
    let stripped = CATEGORY_PREFIX.replace(entry.trim(), "");
    let mut c = match leading_emphasis(&stripped) {
        Some(inner) => inner,
        None => {
            let plain = stripped.replace("**", "");
            match plain.split_once(':') {
                Some((head, tail)) if !head.trim().is_empty() && !tail.trim().is_empty() => head.to_string(),
                _ => plain,
            }
        }
    };
    c = strip_quotes(&c).trim_end_matches(['.', ':']).to_string();
    normalize_title(&c)
}

/// Returns the first three category names of a summarize reply.
pub fn parse_categories(reply: &str) -> Result<Vec<String>, ParseError> {
    let cats = extract_categories(reply);
    if cats.len() < 3 {
        Err(ParseError::TooFewCategories { found: cats.len() })
    } else {
        Ok(cats)
    }
}

/// Up to three category names, possibly fewer.
pub fn extract_categories(reply: &str) -> Vec<String> {
    let lines: Vec<&str> = reply.lines().collect();
    let mut raw: Vec<String> = Vec::new();
    if let Some(idx) = lines.iter().rposition(|l| CATEGORY_SECTION.is_match(l)) {
        let inline = CATEGORY_SECTION.captures(lines[idx]).map(|c| c["inline"].trim().to_string()).unwrap_or_default();
        if !inline.is_empty() {
            let sep = [';', '/', '|'].into_iter().find(|s| inline.contains(*s));
            match sep {
                Some(sep) => raw.extend(inline.split(sep).map(str::to_string)),
                None => raw.push(inline),
            }
        }
        raw.extend(list_entries(&lines[idx + 1..]));
    }
    if raw.len() < 3 {
        raw = list_entries(&lines);
    }
    let mut seen = HashSet::new();
    raw.iter()
        .map(|e| clean_category(e))
        .filter(|c| !c.is_empty() && seen.insert(title_key(c)))
        .take(3)
        .collect()
}
