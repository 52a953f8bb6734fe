use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{Env, Neighbourhood, StrategyError, UserInput};
use crate::graph::{Branch, ThoughtGraph, ThoughtId, ThoughtKind, ThoughtSpec};
use crate::llm::{extract_categories, parse_categories, parse_item_list};
use crate::prompts::{candidates_to_text, sequence_to_text, Fingerprint, Prompt, SlotBinding, TemplateName};
use crate::text::title_key;

/// Draw offset used for the single re-prompt after a parse failure.
const RETRY_DRAW: u32 = 1 << 20;

/// Seed for one backend call. Identical prompts with the same draw number
/// get the same seed, wherever they occur in the graph.
pub fn derive_seed(base: u64, user: &str, fingerprint: &Fingerprint, draw: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(user.as_bytes());
    h.update([0]);
    h.update(fingerprint.0.as_bytes());
    h.update(draw.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Keeps only vote titles that occur in a parent list, spelled as in the
/// parent, then tops the result up to `n` by walking the parent lists
/// round-robin in rank order.
pub fn close_vote<S: AsRef<str>>(voted: &[S], parents: &[Vec<String>], n: usize) -> Vec<String> {
    let mut canon: HashMap<String, &str> = HashMap::new();
    for list in parents {
        for t in list {
            canon.entry(title_key(t)).or_insert(t);
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in voted {
        if out.len() >= n {
            return out;
        }
        let key = title_key(t.as_ref());
        if let Some(c) = canon.get(&key) {
            if seen.insert(key) {
                out.push(c.to_string());
            }
        }
    }
    let depth = parents.iter().map(Vec::len).max().unwrap_or(0);
    for rank in 0..depth {
        for list in parents {
            if out.len() >= n {
                return out;
            }
            if let Some(t) = list.get(rank) {
                if seen.insert(title_key(t)) {
                    out.push(t.clone());
                }
            }
        }
    }
    out
}

/// A parsed summarize reply.
pub(crate) struct Summary {
    pub spec: ThoughtSpec,
    pub categories: Vec<String>,
    pub preferences: String,
}

/// Usable item list of a thought, if it has one.
pub(crate) fn usable_items(spec: &ThoughtSpec) -> Option<&Vec<String>> {
    match spec.kind {
        ThoughtKind::ItemList | ThoughtKind::VoteResult if !spec.degraded => spec.items.as_ref(),
        _ => None,
    }
}

/// Inserts a vote over `parents`: an aggregation when there are two or more,
/// otherwise a single-child generation from the lone parent.
pub(crate) fn attach_vote(graph: &mut ThoughtGraph, parents: &[ThoughtId], spec: ThoughtSpec) -> Result<ThoughtId, StrategyError> {
    Ok(match parents {
        [only] => graph.generate(*only, vec![spec])?[0],
        _ => graph.aggregate(parents, spec)?,
    })
}

fn preference_text(reply: &str, categories: &[String]) -> String {
    let mut kept = Vec::new();
    for line in reply.lines() {
        let l = line.trim();
        let lower = l.trim_start_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase();
        if lower.starts_with("categor") || lower.starts_with("step 2") {
            break;
        }
        if !l.is_empty() {
            kept.push(l);
        }
    }
    let mut text = kept.join(" ");
    for prefix in ["step 1.", "step 1:", "preferences:", "preference summary:"] {
        if text.to_ascii_lowercase().starts_with(prefix) {
            text = text[prefix.len()..].trim().to_string();
        }
    }
    if text.is_empty() {
        format!("Interested in {}.", categories.join(", "))
    } else {
        text
    }
}

/// Per-user execution context: issues backend calls, counts them, and turns
/// replies into thought specs.
pub struct Session<'a> {
    env: &'a Env<'a>,
    input: &'a UserInput,
    concurrent: bool,
    calls: AtomicU64,
}

impl<'a> Session<'a> {
    pub fn new(env: &'a Env<'a>, input: &'a UserInput, concurrent: bool) -> Self {
        Self { env, input, concurrent, calls: AtomicU64::new(0) }
    }

    pub fn input(&self) -> &UserInput {
        self.input
    }

    pub fn neighbours(&self) -> Option<&Neighbourhood> {
        self.env.neighbours
    }

    /// Backend calls issued so far, re-prompts included.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Order-preserving map, parallel when the session is concurrent.
    pub(crate) fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        if self.concurrent {
            items.into_par_iter().map(f).collect()
        } else {
            items.into_iter().map(f).collect()
        }
    }

    pub(crate) fn prompt(&self, template: TemplateName, binding: SlotBinding) -> Result<Prompt, StrategyError> {
        Ok(self.env.prompts.prompt(template, binding)?)
    }

    fn ask(&self, prompt: &Prompt, draw: u32) -> Result<String, StrategyError> {
        let seed = derive_seed(self.env.seed, &self.input.user, &prompt.fingerprint(), draw);
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.env.gateway.complete(prompt, seed)?)
    }

    /// Calls once, and once more with a fresh draw if `parse` rejects the
    /// reply. Returns the last reply and its parse, if any.
    fn ask_parsed<T>(&self, prompt: &Prompt, draw: u32, parse: impl Fn(&str) -> Option<T>) -> Result<(String, Option<T>), StrategyError> {
        let reply = self.ask(prompt, draw)?;
        if let Some(v) = parse(&reply) {
            return Ok((reply, Some(v)));
        }
        log::debug!("unparseable {} reply for user {}; re-prompting", prompt.template, self.input.user);
        let reply = self.ask(prompt, draw + RETRY_DRAW)?;
        let parsed = parse(&reply);
        Ok((reply, parsed))
    }

    /// Summarize prompt over `titles`. A reply with fewer than three
    /// categories after the re-prompt keeps whatever it named; one naming
    /// none becomes a degraded thought.
    pub(crate) fn summarize(
        &self,
        template: TemplateName,
        titles: &[String],
        focus: Option<&str>,
        branch: Branch,
        draw: u32,
    ) -> Result<Summary, StrategyError> {
        let mut binding = SlotBinding::new().with("sequence", sequence_to_text(titles)?);
        if let Some(f) = focus {
            binding.set("focus", f);
        }
        let prompt = self.prompt(template, binding)?;
        let (reply, parsed) = self.ask_parsed(&prompt, draw, |r| parse_categories(r).ok())?;
        let categories = parsed.unwrap_or_else(|| extract_categories(&reply));
        let preferences = preference_text(&reply, &categories);
        let mut spec = ThoughtSpec::new(ThoughtKind::CategoryList, branch, template.as_str(), reply);
        if categories.is_empty() {
            spec.kind = ThoughtKind::Raw;
            spec = spec.degraded();
        }
        Ok(Summary { spec, categories, preferences })
    }

    /// An item-list thought: up to `n` titles parsed from the reply. When
    /// `allowed` is given, titles outside it are dropped and the rest take
    /// its spelling.
    pub(crate) fn items(
        &self,
        prompt: &Prompt,
        branch: Branch,
        n: usize,
        draw: u32,
        allowed: Option<&HashMap<String, String>>,
    ) -> Result<ThoughtSpec, StrategyError> {
        let parse = |reply: &str| -> Option<Vec<String>> {
            let titles = parse_item_list(reply, usize::MAX).ok()?;
            let kept: Vec<String> = match allowed {
                Some(map) => titles.iter().filter_map(|t| map.get(&title_key(t)).cloned()).collect(),
                None => titles,
            };
            let mut seen = HashSet::new();
            let kept: Vec<String> = kept.into_iter().filter(|t| seen.insert(title_key(t))).take(n).collect();
            (!kept.is_empty()).then_some(kept)
        };
        let (reply, parsed) = self.ask_parsed(prompt, draw, parse)?;
        let template = prompt.template.as_str();
        Ok(match parsed {
            Some(list) => ThoughtSpec::new(ThoughtKind::ItemList, branch, template, reply).with_items(list),
            None => ThoughtSpec::new(ThoughtKind::Raw, branch, template, reply).degraded(),
        })
    }

    /// Vote over the parent lists. The result always satisfies
    /// [`close_vote`], so an unparseable vote is filled from the parents.
    pub(crate) fn vote(&self, parents: &[Vec<String>], branch: Branch, n: usize) -> Result<ThoughtSpec, StrategyError> {
        let binding = SlotBinding::new().with("candidates", candidates_to_text(parents)).with("N", n.to_string());
        let prompt = self.prompt(TemplateName::Vote, binding)?;
        let (reply, parsed) = self.ask_parsed(&prompt, 0, |r| parse_item_list(r, usize::MAX).ok())?;
        let items = close_vote(&parsed.unwrap_or_default(), parents, n);
        Ok(ThoughtSpec::new(ThoughtKind::VoteResult, branch, TemplateName::Vote.as_str(), reply).with_items(items))
    }
}
