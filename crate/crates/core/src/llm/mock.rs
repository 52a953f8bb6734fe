use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::parse::parse_item_list;
use super::{GenerationParams, LlmBackend, LlmError};
use crate::prompts::{Fingerprint, Prompt, TemplateName};
use crate::text::title_key;

/// Produces a reply for a prompt without a model.
pub trait Responder: Send + Sync {
    fn respond(&self, prompt: &Prompt, seed: u64) -> String;
}

/// Closure adapter for [`Responder`].
pub struct FnResponder<F>(pub F);

impl<F> Responder for FnResponder<F>
where
    F: Fn(&Prompt, u64) -> String + Send + Sync,
{
    fn respond(&self, prompt: &Prompt, seed: u64) -> String {
        (self.0)(prompt, seed)
    }
}

/// Table of canned replies keyed by prompt fingerprint, with an optional
/// responder for prompts that are not in the table.
#[derive(Default)]
pub struct ScriptedMock {
    script: HashMap<Fingerprint, String>,
    fallback: Option<Box<dyn Responder>>,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fingerprint: Fingerprint, reply: impl Into<String>) {
        self.script.insert(fingerprint, reply.into());
    }

    pub fn with_reply(mut self, prompt: &Prompt, reply: impl Into<String>) -> Self {
        self.insert(prompt.fingerprint(), reply);
        self
    }

    pub fn with_fallback(mut self, responder: impl Responder + 'static) -> Self {
        self.fallback = Some(Box::new(responder));
        self
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }
}

impl LlmBackend for ScriptedMock {
    fn name(&self) -> &str {
        "scripted-mock"
    }

    fn complete(&self, prompt: &Prompt, _params: &GenerationParams, seed: u64) -> Result<String, LlmError> {
        let fp = prompt.fingerprint();
        if let Some(reply) = self.script.get(&fp) {
            return Ok(reply.clone());
        }
        match &self.fallback {
            Some(r) => Ok(r.respond(prompt, seed)),
            None => Err(LlmError::ScriptMiss { template: prompt.template.to_string(), fingerprint: fp }),
        }
    }
}

fn tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 2)
        .map(str::to_lowercase)
        .collect()
}

/// Titles from every numbered line of a slot, regardless of block headers.
fn slot_titles(prompt: &Prompt, slot: &str) -> Vec<String> {
    prompt.binding.get(slot).and_then(|s| parse_item_list(s, usize::MAX).ok()).unwrap_or_default()
}

fn slot_n(prompt: &Prompt) -> usize {
    prompt.binding.get("N").and_then(|n| n.parse().ok()).unwrap_or(10)
}

fn numbered_reply(titles: &[String]) -> String {
    titles.iter().enumerate().map(|(i, t)| format!("{}. {}", i + 1, t)).collect::<Vec<_>>().join("\n")
}

/// Deterministic stand-in for a model, driven by the prompt bindings.
///
/// Summaries name three categories after the newest items of the sequence;
/// recommendations rank a fixed title vocabulary by word overlap with the
/// request, plus seeded jitter; collaborations pick from the neighbour
/// histories; votes are Borda counts over the candidate lists.
pub struct SyntheticResponder {
    vocabulary: Vec<(String, HashSet<String>)>,
}

impl SyntheticResponder {
    pub fn new<S: Into<String>>(vocabulary: impl IntoIterator<Item = S>) -> Self {
        let mut seen = HashSet::new();
        let vocabulary = vocabulary
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| seen.insert(title_key(t)))
            .map(|t| {
                let toks = tokens(&t);
                (t, toks)
            })
            .collect();
        Self { vocabulary }
    }

    fn summarize(&self, prompt: &Prompt) -> String {
        let seq = slot_titles(prompt, "sequence");
        let mut cats: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for t in seq.iter().rev() {
            let c = format!("Products like {t}");
            if seen.insert(title_key(&c)) {
                cats.push(c);
            }
        }
        let fillers = ["Popular Bestsellers", "New Releases", "Highly Rated Items"];
        for f in fillers {
            if cats.len() >= 3 {
                break;
            }
            cats.push(f.to_string());
        }
        cats.truncate(3);
        format!(
            "Preferences: The user recently engaged with {} items.\nCategories:\n1. {}\n2. {}\n3. {}",
            seq.len(),
            cats[0],
            cats[1],
            cats[2]
        )
    }

    fn recommend(&self, prompt: &Prompt, seed: u64) -> String {
        let n = slot_n(prompt);
        let mut query = tokens(prompt.binding.get("category").unwrap_or_default());
        query.extend(tokens(prompt.binding.get("history").unwrap_or_default()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scored: Vec<(f64, usize)> = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, (_, toks))| (toks.intersection(&query).count() as f64 + rng.random::<f64>() * 1.5, i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let picks: Vec<String> = scored.iter().take(n).map(|&(_, i)| self.vocabulary[i].0.clone()).collect();
        if picks.is_empty() {
            return "I have no products to suggest.".into();
        }
        numbered_reply(&picks)
    }

    fn collaborate(&self, prompt: &Prompt, seed: u64) -> String {
        let n = slot_n(prompt);
        let history: HashSet<String> = slot_titles(prompt, "history").iter().map(|t| title_key(t)).collect();
        let mut pool: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for t in slot_titles(prompt, "similar") {
            if !history.contains(&title_key(&t)) && seen.insert(title_key(&t)) {
                pool.push(t);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.shuffle(&mut rng);
        pool.truncate(n);
        format!("Preferences: Shared interests with similar users.\nRecommendations:\n{}", numbered_reply(&pool))
    }

    fn vote(&self, prompt: &Prompt) -> String {
        let n = slot_n(prompt);
        let text = prompt.binding.get("candidates").unwrap_or_default();
        let mut scores: Vec<(String, usize, usize)> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for block in text.split("\n\n") {
            let Ok(list) = parse_item_list(block, usize::MAX) else { continue };
            let len = list.len();
            for (rank, t) in list.into_iter().enumerate() {
                let key = title_key(&t);
                let slot = *index.entry(key).or_insert_with(|| {
                    scores.push((t.clone(), 0, scores.len()));
                    scores.len() - 1
                });
                scores[slot].1 += len - rank;
            }
        }
        scores.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let picks: Vec<String> = scores.into_iter().take(n).map(|s| s.0).collect();
        numbered_reply(&picks)
    }
}

impl Responder for SyntheticResponder {
    fn respond(&self, prompt: &Prompt, seed: u64) -> String {
        match prompt.template {
            TemplateName::SummarizeShort | TemplateName::SummarizeLong => self.summarize(prompt),
            TemplateName::RecommendCategory => self.recommend(prompt, seed),
            TemplateName::Collaborate => self.collaborate(prompt, seed),
            TemplateName::Vote => self.vote(prompt),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::parse::parse_categories;
    use crate::prompts::{candidates_to_text, PromptLibrary, SlotBinding};

    #[test]
    fn scripted_lookup() {
        let lib = PromptLibrary::builtin();
        let p = lib.prompt(TemplateName::Vote, SlotBinding::new().with("N", "2").with("candidates", "List 1:\n1. X")).unwrap();
        let mock = ScriptedMock::new().with_reply(&p, "1. X\n2. Y");
        assert_eq!(mock.complete(&p, &GenerationParams::default(), 7).unwrap(), "1. X\n2. Y");
        let other = lib.prompt(TemplateName::Vote, SlotBinding::new().with("N", "3").with("candidates", "List 1:\n1. X")).unwrap();
        assert!(matches!(mock.complete(&other, &GenerationParams::default(), 7), Err(LlmError::ScriptMiss { .. })));
    }

    #[test]
    fn synthetic_outputs_parse() {
        let lib = PromptLibrary::builtin();
        let r = SyntheticResponder::new(["Trail Mix", "Fruit Nut Mix", "Oat Cookies", "Green Tea"]);
        let s = lib.prompt(TemplateName::SummarizeShort, SlotBinding::new().with("sequence", "1. Oat Cookies\n2. Green Tea")).unwrap();
        assert_eq!(parse_categories(&r.respond(&s, 0)).unwrap().len(), 3);

        let rec = lib
            .prompt(TemplateName::RecommendCategory, SlotBinding::new().with("N", "3").with("category", "Nut Mix").with("summary", "s"))
            .unwrap();
        let items = parse_item_list(&r.respond(&rec, 1), 3).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(r.respond(&rec, 1), r.respond(&rec, 1));

        let lists = vec![vec!["A", "B"], vec!["B", "C"], vec!["B", "A"]];
        let v = lib
            .prompt(TemplateName::Vote, SlotBinding::new().with("N", "2").with("candidates", candidates_to_text(&lists)))
            .unwrap();
        assert_eq!(parse_item_list(&r.respond(&v, 0), 2).unwrap(), ["B", "A"]);
    }
}
