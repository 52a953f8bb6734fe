//! Short-term, long-term and collaborative branches joined by a final vote.
//!
//! Each branch is built as its own fragment rooted at a stand-in for the
//! input vertex. Fragments may be built concurrently and are then absorbed
//! into the run graph in the fixed order short, long, collab.

use std::collections::HashMap;

use super::session::{attach_vote, usable_items};
use super::{Outcome, ReasoningStrategy, RecommendationSet, Session, StrategyConfig, StrategyError};
use crate::graph::{Branch, ThoughtGraph, ThoughtId, ThoughtKind, ThoughtSpec};
use crate::prompts::{sequence_to_text, similar_to_text, SlotBinding, TemplateName};
use crate::text::title_key;

pub struct GraphOfThoughts;

struct Fragment {
    branch: Branch,
    graph: ThoughtGraph,
    /// Branch result in fragment ids.
    set: Option<(ThoughtId, Vec<String>)>,
}

impl Fragment {
    fn new(branch: Branch) -> Result<(Self, ThoughtId), StrategyError> {
        let mut graph = ThoughtGraph::new();
        let root = graph.add_root(ThoughtSpec::new(ThoughtKind::Raw, Branch::Input, "input", ""))?;
        Ok((Self { branch, graph, set: None }, root))
    }

    /// Adds the branch vote over `parents` and records it as the result.
    fn close(&mut self, session: &Session<'_>, parents: &[(ThoughtId, Vec<String>)], n: usize) -> Result<(), StrategyError> {
        if parents.is_empty() {
            log::warn!("{} branch degraded for user {}", self.branch, session.input().user);
            return Ok(());
        }
        let lists: Vec<Vec<String>> = parents.iter().map(|p| p.1.clone()).collect();
        let ids: Vec<ThoughtId> = parents.iter().map(|p| p.0).collect();
        let spec = session.vote(&lists, self.branch, n)?;
        let items = spec.items.clone().unwrap_or_default();
        let id = attach_vote(&mut self.graph, &ids, spec)?;
        self.set = Some((id, items));
        Ok(())
    }
}

/// Inserts `specs` as children of `source` and returns the ids and lists of
/// the usable ones.
fn insert_items(graph: &mut ThoughtGraph, source: ThoughtId, specs: Vec<ThoughtSpec>) -> Result<Vec<(ThoughtId, Vec<String>)>, StrategyError> {
    let lists: Vec<Option<Vec<String>>> = specs.iter().map(|s| usable_items(s).cloned()).collect();
    let ids = graph.generate(source, specs)?;
    Ok(ids.into_iter().zip(lists).filter_map(|(id, l)| l.map(|l| (id, l))).collect())
}

fn sequence_branch(session: &Session<'_>, cfg: &StrategyConfig, branch: Branch) -> Result<Fragment, StrategyError> {
    let all = &session.input().titles;
    let (template, titles) = match branch {
        Branch::Short => (TemplateName::SummarizeShort, &all[all.len().saturating_sub(cfg.s_short)..]),
        _ => (TemplateName::SummarizeLong, &all[..]),
    };
    let (mut frag, root) = Fragment::new(branch)?;
    let summary = session.summarize(template, titles, None, branch, 0)?;
    let sid = frag.graph.generate(root, vec![summary.spec])?[0];
    let history = sequence_to_text(titles)?;
    let categories: Vec<(usize, String)> = summary.categories.into_iter().take(cfg.categories).enumerate().collect();

    let per_category = session.map(categories, |(_, category)| -> Result<_, StrategyError> {
        let binding = SlotBinding::new()
            .with("history", history.as_str())
            .with("summary", summary.preferences.as_str())
            .with("N", cfg.n.to_string())
            .with("category", category);
        let prompt = session.prompt(TemplateName::RecommendCategory, binding)?;
        let draws: Vec<u32> = (0..cfg.repetitions as u32).collect();
        let reps = session.map(draws, |j| session.items(&prompt, branch, cfg.n, j, None)).into_iter().collect::<Result<Vec<_>, _>>()?;
        let lists: Vec<Vec<String>> = reps.iter().filter_map(|s| usable_items(s).cloned()).collect();
        let vote = if lists.is_empty() { None } else { Some(session.vote(&lists, branch, cfg.n)?) };
        Ok((reps, vote))
    });

    let mut category_sets = Vec::new();
    for result in per_category {
        let (reps, vote) = result?;
        let usable = insert_items(&mut frag.graph, sid, reps)?;
        if let Some(spec) = vote {
            let items = spec.items.clone().unwrap_or_default();
            let ids: Vec<ThoughtId> = usable.iter().map(|u| u.0).collect();
            category_sets.push((attach_vote(&mut frag.graph, &ids, spec)?, items));
        }
    }
    frag.close(session, &category_sets, cfg.n)?;
    Ok(frag)
}

fn collab_branch(session: &Session<'_>, cfg: &StrategyConfig) -> Result<Option<Fragment>, StrategyError> {
    let user = &session.input().user;
    let similar = match session.neighbours() {
        Some(nb) => nb.similar(user, cfg.collab_k)?,
        None => Vec::new(),
    };
    if similar.is_empty() {
        log::warn!("no similar sequences for user {user}; collaborative branch skipped");
        return Ok(None);
    }
    let mut allowed: HashMap<String, String> = HashMap::new();
    for (_, titles) in &similar {
        for t in titles {
            allowed.entry(title_key(t)).or_insert_with(|| t.clone());
        }
    }
    let sequences: Vec<Vec<String>> = similar.iter().map(|s| s.1.clone()).collect();
    let binding = SlotBinding::new()
        .with("history", sequence_to_text(&session.input().titles)?)
        .with("similar", similar_to_text(&sequences))
        .with("N", cfg.n.to_string());
    let prompt = session.prompt(TemplateName::Collaborate, binding)?;
    let (mut frag, root) = Fragment::new(Branch::Collab)?;
    let draws: Vec<u32> = (0..cfg.repetitions as u32).collect();
    let reps = session
        .map(draws, |j| session.items(&prompt, Branch::Collab, cfg.n, j, Some(&allowed)))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let usable = insert_items(&mut frag.graph, root, reps)?;
    frag.close(session, &usable, cfg.n)?;
    Ok(Some(frag))
}

impl ReasoningStrategy for GraphOfThoughts {
    fn name(&self) -> &'static str {
        "got4rec"
    }

    fn reason(&self, session: &Session<'_>, cfg: &StrategyConfig) -> Result<Outcome, StrategyError> {
        let branches = cfg.branches();
        if branches.is_empty() {
            return Err(StrategyError::InvalidConfig("no reasoning branch enabled".into()));
        }
        let mut graph = ThoughtGraph::new();
        let root = graph.add_root(ThoughtSpec::new(
            ThoughtKind::Raw,
            Branch::Input,
            "input",
            sequence_to_text(&session.input().titles)?,
        ))?;
        let built = session.map(branches, |b| match b {
            Branch::Collab => collab_branch(session, cfg),
            _ => sequence_branch(session, cfg, b).map(Some),
        });
        let mut branch_sets = Vec::new();
        for frag in built {
            let Some(frag) = frag? else { continue };
            let added = graph.absorb(root, frag.graph)?;
            if let Some((id, items)) = frag.set {
                branch_sets.push(RecommendationSet { branch: frag.branch, items, thought: added[id.0 as usize - 1] });
            }
        }
        if branch_sets.is_empty() {
            return Err(StrategyError::AllDegraded);
        }
        let lists: Vec<Vec<String>> = branch_sets.iter().map(|s| s.items.clone()).collect();
        let spec = session.vote(&lists, Branch::Final, cfg.n)?;
        let items = spec.items.clone().unwrap_or_default();
        let parents: Vec<ThoughtId> = branch_sets.iter().map(|s| s.thought).collect();
        let id = attach_vote(&mut graph, &parents, spec)?;
        Ok(Outcome { graph, final_set: RecommendationSet { branch: Branch::Final, items, thought: id }, branch_sets })
    }
}
