//! Prompt templates with `{{slot}}` markers.
//!
//! A marker may carry a fallback, `{{slot|fallback text}}`, which makes the
//! slot optional: when the binding omits it (or binds it to an empty
//! string) the fallback is rendered instead. All other slots are required.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::normalize_title;

/// Version of the built-in template wording. Bump when any file under
/// `templates/` changes.
pub const TEMPLATE_SET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateName {
    SummarizeShort,
    SummarizeLong,
    RecommendCategory,
    Collaborate,
    Vote,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::SummarizeShort,
        TemplateName::SummarizeLong,
        TemplateName::RecommendCategory,
        TemplateName::Collaborate,
        TemplateName::Vote,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::SummarizeShort => "summarize-short",
            TemplateName::SummarizeLong => "summarize-long",
            TemplateName::RecommendCategory => "recommend-category",
            TemplateName::Collaborate => "collaborate",
            TemplateName::Vote => "vote",
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateName::SummarizeShort => include_str!("../templates/summarize-short.txt"),
            TemplateName::SummarizeLong => include_str!("../templates/summarize-long.txt"),
            TemplateName::RecommendCategory => include_str!("../templates/recommend-category.txt"),
            TemplateName::Collaborate => include_str!("../templates/collaborate.txt"),
            TemplateName::Vote => include_str!("../templates/vote.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing slot(s) for template {template}: {}", missing.join(", "))]
    MissingSlots { template: TemplateName, missing: Vec<String> },
    #[error("malformed slot marker in template {template} at byte {offset}")]
    Malformed { template: TemplateName, offset: usize },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("cannot serialize an empty sequence")]
    EmptySequence,
    #[error("failed to read template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot { name: String, fallback: Option<String> },
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    name: TemplateName,
    segments: Vec<Segment>,
    required: BTreeSet<String>,
    optional: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn parse(name: TemplateName, body: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut required = BTreeSet::new();
        let mut optional = BTreeSet::new();
        let mut rest = body;
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                segments.push(Segment::Text(rest[..start].to_string()));
            }
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or(PromptError::Malformed { template: name, offset: offset + start })?;
            let inner = &after[..end];
            let (slot, fallback) = match inner.split_once('|') {
                Some((s, f)) => (s.trim(), Some(f.to_string())),
                None => (inner.trim(), None),
            };
            let valid = slot.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && slot.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(PromptError::Malformed { template: name, offset: offset + start });
            }
            if fallback.is_some() {
                optional.insert(slot.to_string());
            } else {
                required.insert(slot.to_string());
            }
            segments.push(Segment::Slot { name: slot.to_string(), fallback });
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        // a slot used both with and without fallback is required
        optional.retain(|s| !required.contains(s));
        Ok(Self { name, segments, required, optional })
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn required_slots(&self) -> &BTreeSet<String> {
        &self.required
    }

    pub fn optional_slots(&self) -> &BTreeSet<String> {
        &self.optional
    }

    pub fn render(&self, binding: &SlotBinding) -> Result<String, PromptError> {
        let missing: Vec<String> = self
            .required
            .iter()
            .filter(|s| binding.get(s).is_none_or(str::is_empty))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(PromptError::MissingSlots { template: self.name, missing });
        }
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot { name, fallback } => match binding.get(name).filter(|v| !v.is_empty()) {
                    Some(v) => out.push_str(v),
                    None => out.push_str(fallback.as_deref().unwrap_or_default()),
                },
            }
        }
        Ok(out)
    }
}

/// Slot name to value. Ordered so that fingerprints are stable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotBinding(BTreeMap<String, String>);

impl SlotBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, slot: &str, value: impl Into<String>) -> Self {
        self.set(slot, value);
        self
    }

    /// Empty values are dropped, which makes optional slots fall back.
    pub fn set(&mut self, slot: &str, value: impl Into<String>) {
        let value = value.into();
        if value.is_empty() {
            self.0.remove(slot);
        } else {
            self.0.insert(slot.to_string(), value);
        }
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// A rendered prompt that still knows where it came from, so mock and
/// cassette backends can key on the template and bindings instead of the
/// wording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub template: TemplateName,
    pub binding: SlotBinding,
    pub text: String,
}

impl Prompt {
    /// Raw text prompt, e.g. for smoke tests against a live endpoint.
    pub fn raw(template: TemplateName, text: impl Into<String>) -> Self {
        Self { template, binding: SlotBinding::new(), text: text.into() }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint(self.template, &self.binding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// SHA-256 over the template name and the sorted bindings, truncated to 128
/// bits of hex.
pub fn fingerprint(template: TemplateName, binding: &SlotBinding) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(template.as_str().as_bytes());
    for (k, v) in binding.iter() {
        h.update([0u8]);
        h.update(k.as_bytes());
        h.update([1u8]);
        h.update(v.as_bytes());
    }
    Fingerprint(hex::encode(&h.finalize()[..16]))
}

/// The full set of templates used by the strategies.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let templates = TemplateName::ALL
            .into_iter()
            .map(|n| (n, PromptTemplate::parse(n, n.builtin_body()).expect("built-in templates parse")))
            .collect();
        Self { templates }
    }

    /// Loads `<name>.txt` for every template from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{name}.txt"));
            let body = fs::read_to_string(&path).map_err(|source| PromptError::Io { path: path.display().to_string(), source })?;
            templates.insert(name, PromptTemplate::parse(name, &body)?);
        }
        Ok(Self { templates })
    }

    pub fn template(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn prompt(&self, name: TemplateName, binding: SlotBinding) -> Result<Prompt, PromptError> {
        let text = self.template(name).render(&binding)?;
        Ok(Prompt { template: name, binding, text })
    }
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Numbered, chronological, one normalized title per line.
pub fn sequence_to_text<S: AsRef<str>>(titles: &[S]) -> Result<String, PromptError> {
    if titles.is_empty() {
        return Err(PromptError::EmptySequence);
    }
    Ok(numbered(titles))
}

pub(crate) fn numbered<S: AsRef<str>>(titles: &[S]) -> String {
    titles
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, normalize_title(t.as_ref())))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders candidate lists for the vote prompt as `List k:` blocks.
pub fn candidates_to_text<S: AsRef<str>>(lists: &[Vec<S>]) -> String {
    lists
        .iter()
        .enumerate()
        .map(|(i, l)| format!("List {}:\n{}", i + 1, numbered(l)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders retrieved neighbour sequences for the collaboration prompt.
pub fn similar_to_text<S: AsRef<str>>(sequences: &[Vec<S>]) -> String {
    sequences
        .iter()
        .enumerate()
        .map(|(i, l)| format!("User {}:\n{}", i + 1, numbered(l)))
        .collect::<Vec<_>>()
        .join("\n\n")
}
