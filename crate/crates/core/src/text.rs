//! Title normalization shared by ingestion, parsing and grounding.

/// Trims, strips control characters and collapses internal whitespace runs
/// to single spaces.
pub fn normalize_title(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_control() {
            continue;
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Comparison key for case-insensitive title matching.
pub fn title_key(raw: &str) -> String {
    normalize_title(raw).to_lowercase()
}
