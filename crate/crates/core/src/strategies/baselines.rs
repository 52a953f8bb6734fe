//! Chain, self-consistency and tree baselines over the same graph.
//!
//! A chain is input, long-term summary, then one recommendation over all
//! summarized categories. Self-consistency runs `k` chains and votes. The
//! tree refines categories level by level, recommends at the leaves and
//! votes back up to the root.

use super::session::{attach_vote, usable_items, Summary};
use super::{Outcome, ReasoningStrategy, RecommendationSet, Session, StrategyConfig, StrategyError};
use crate::graph::{Branch, ThoughtGraph, ThoughtId, ThoughtKind, ThoughtSpec};
use crate::prompts::{sequence_to_text, SlotBinding, TemplateName};

/// Every baseline thought summarizes the full sequence, so they share the
/// long-term label.
const LABEL: Branch = Branch::Long;

fn input_root(session: &Session<'_>) -> Result<(ThoughtGraph, ThoughtId), StrategyError> {
    let mut graph = ThoughtGraph::new();
    let root = graph.add_root(ThoughtSpec::new(
        ThoughtKind::Raw,
        Branch::Input,
        "input",
        sequence_to_text(&session.input().titles)?,
    ))?;
    Ok((graph, root))
}

fn recommend(session: &Session<'_>, cfg: &StrategyConfig, category: &str, preferences: &str, draw: u32) -> Result<ThoughtSpec, StrategyError> {
    let binding = SlotBinding::new()
        .with("history", sequence_to_text(&session.input().titles)?)
        .with("summary", preferences)
        .with("N", cfg.n.to_string())
        .with("category", category);
    let prompt = session.prompt(TemplateName::RecommendCategory, binding)?;
    session.items(&prompt, LABEL, cfg.n, draw, None)
}

/// Builds `k` chains off the root; returns the usable final lists.
fn chains(session: &Session<'_>, cfg: &StrategyConfig, graph: &mut ThoughtGraph, root: ThoughtId, k: usize) -> Result<Vec<(ThoughtId, Vec<String>)>, StrategyError> {
    let titles = &session.input().titles;
    let draws: Vec<u32> = (0..k as u32).collect();
    let built = session.map(draws, |draw| -> Result<(ThoughtSpec, Option<ThoughtSpec>), StrategyError> {
        let s = session.summarize(TemplateName::SummarizeLong, titles, None, LABEL, draw)?;
        if s.categories.is_empty() {
            return Ok((s.spec, None));
        }
        let rec = recommend(session, cfg, &s.categories.join("; "), &s.preferences, draw)?;
        Ok((s.spec, Some(rec)))
    });
    let mut summaries = Vec::with_capacity(k);
    let mut recs = Vec::with_capacity(k);
    for b in built {
        let (s, r) = b?;
        summaries.push(s);
        recs.push(r);
    }
    let ids = graph.generate(root, summaries)?;
    let mut out = Vec::new();
    for (sid, rec) in ids.into_iter().zip(recs) {
        let Some(rec) = rec else { continue };
        let items = usable_items(&rec).cloned();
        let rid = graph.generate(sid, vec![rec])?[0];
        if let Some(items) = items {
            out.push((rid, items));
        }
    }
    Ok(out)
}

fn vote_final(
    session: &Session<'_>,
    cfg: &StrategyConfig,
    mut graph: ThoughtGraph,
    parents: &[(ThoughtId, Vec<String>)],
) -> Result<Outcome, StrategyError> {
    if parents.is_empty() {
        return Err(StrategyError::AllDegraded);
    }
    let lists: Vec<Vec<String>> = parents.iter().map(|p| p.1.clone()).collect();
    let ids: Vec<ThoughtId> = parents.iter().map(|p| p.0).collect();
    let spec = session.vote(&lists, Branch::Final, cfg.n)?;
    let items = spec.items.clone().unwrap_or_default();
    let id = attach_vote(&mut graph, &ids, spec)?;
    Ok(Outcome { graph, final_set: RecommendationSet { branch: Branch::Final, items, thought: id }, branch_sets: Vec::new() })
}

pub struct ChainOfThought;

impl ReasoningStrategy for ChainOfThought {
    fn name(&self) -> &'static str {
        "cot"
    }

    fn reason(&self, session: &Session<'_>, cfg: &StrategyConfig) -> Result<Outcome, StrategyError> {
        let (mut graph, root) = input_root(session)?;
        let mut ends = chains(session, cfg, &mut graph, root, 1)?;
        let (id, items) = ends.pop().ok_or(StrategyError::AllDegraded)?;
        let final_set = RecommendationSet { branch: LABEL, items, thought: id };
        Ok(Outcome { graph, branch_sets: vec![final_set.clone()], final_set })
    }
}

pub struct SelfConsistency;

impl ReasoningStrategy for SelfConsistency {
    fn name(&self) -> &'static str {
        "cot_sc"
    }

    fn reason(&self, session: &Session<'_>, cfg: &StrategyConfig) -> Result<Outcome, StrategyError> {
        let (mut graph, root) = input_root(session)?;
        let ends = chains(session, cfg, &mut graph, root, cfg.cot_sc_k)?;
        vote_final(session, cfg, graph, &ends)
    }
}

pub struct TreeOfThoughts;

/// A thought and the item list it produced.
type Scored = (ThoughtId, Vec<String>);

struct Node {
    id: ThoughtId,
    level: usize,
    categories: Vec<String>,
    preferences: String,
    children: Vec<usize>,
    /// Item list of a leaf, or the vote over an inner node's children.
    result: Option<(ThoughtId, Vec<String>)>,
}

enum Expansion {
    Inner(Summary),
    Leaf(ThoughtSpec),
}

impl TreeOfThoughts {
    fn expand(session: &Session<'_>, cfg: &StrategyConfig, parent: &Node, j: usize, leaf: bool) -> Result<Expansion, StrategyError> {
        let category = &parent.categories[j % parent.categories.len()];
        if leaf {
            return recommend(session, cfg, category, &parent.preferences, j as u32).map(Expansion::Leaf);
        }
        let focus = format!("Narrow the three categories down to products related to \"{category}\".");
        session
            .summarize(TemplateName::SummarizeLong, &session.input().titles, Some(&focus), LABEL, j as u32)
            .map(Expansion::Inner)
    }
}

impl ReasoningStrategy for TreeOfThoughts {
    fn name(&self) -> &'static str {
        "tot"
    }

    fn reason(&self, session: &Session<'_>, cfg: &StrategyConfig) -> Result<Outcome, StrategyError> {
        let (b, depth) = (cfg.tot_breadth, cfg.tot_depth);
        let (mut graph, root) = input_root(session)?;
        let mut nodes: Vec<Node> = Vec::new();

        let draws: Vec<u32> = (0..b as u32).collect();
        let first = session
            .map(draws, |j| session.summarize(TemplateName::SummarizeLong, &session.input().titles, None, LABEL, j))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let meta: Vec<(Vec<String>, String)> = first.iter().map(|s| (s.categories.clone(), s.preferences.clone())).collect();
        let ids = graph.generate(root, first.into_iter().map(|s| s.spec).collect())?;
        let mut frontier = Vec::new();
        for (id, (categories, preferences)) in ids.into_iter().zip(meta) {
            frontier.push(nodes.len());
            nodes.push(Node { id, level: 1, categories, preferences, children: Vec::new(), result: None });
        }

        for level in 2..=depth {
            let leaf = level == depth;
            let parents: Vec<usize> = frontier.iter().copied().filter(|&p| !nodes[p].categories.is_empty()).collect();
            let jobs: Vec<(usize, usize)> = parents.iter().flat_map(|&p| (0..b).map(move |j| (p, j))).collect();
            let expanded = session.map(jobs, |(p, j)| Self::expand(session, cfg, &nodes[p], j, leaf));
            let mut expanded = expanded.into_iter();
            frontier = Vec::new();
            for &p in &parents {
                let batch = expanded.by_ref().take(b).collect::<Result<Vec<_>, _>>()?;
                let mut specs = Vec::with_capacity(b);
                let mut info = Vec::with_capacity(b);
                for e in batch {
                    match e {
                        Expansion::Inner(s) => {
                            info.push((s.categories, s.preferences, None));
                            specs.push(s.spec);
                        }
                        Expansion::Leaf(spec) => {
                            info.push((Vec::new(), String::new(), usable_items(&spec).cloned()));
                            specs.push(spec);
                        }
                    }
                }
                let ids = graph.generate(nodes[p].id, specs)?;
                for (id, (categories, preferences, items)) in ids.into_iter().zip(info) {
                    let idx = nodes.len();
                    nodes[p].children.push(idx);
                    frontier.push(idx);
                    nodes.push(Node { id, level, categories, preferences, children: Vec::new(), result: items.map(|l| (id, l)) });
                }
            }
        }

        for level in (1..depth).rev() {
            let jobs: Vec<(usize, Vec<Scored>)> = (0..nodes.len())
                .filter(|&i| nodes[i].level == level)
                .map(|i| (i, nodes[i].children.iter().filter_map(|&c| nodes[c].result.clone()).collect::<Vec<_>>()))
                .filter(|(_, inputs)| !inputs.is_empty())
                .collect();
            let votes = session.map(jobs.clone(), |(_, inputs)| {
                let lists: Vec<Vec<String>> = inputs.iter().map(|x| x.1.clone()).collect();
                session.vote(&lists, LABEL, cfg.n)
            });
            for ((i, inputs), spec) in jobs.into_iter().zip(votes) {
                let spec = spec?;
                let items = spec.items.clone().unwrap_or_default();
                let parents: Vec<ThoughtId> = inputs.iter().map(|x| x.0).collect();
                let id = attach_vote(&mut graph, &parents, spec)?;
                nodes[i].result = Some((id, items));
            }
        }

        let tops: Vec<(ThoughtId, Vec<String>)> = nodes.iter().filter(|n| n.level == 1).filter_map(|n| n.result.clone()).collect();
        vote_final(session, cfg, graph, &tops)
    }
}
