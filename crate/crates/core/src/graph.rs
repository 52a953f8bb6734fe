//! Thought graph: vertices are LLM responses, edges record which thought a
//! new thought was generated from or aggregated over.
//!
//! Only two transformations mutate a graph after its roots are placed:
//! [`ThoughtGraph::generate`] (one parent, `k >= 1` children) and
//! [`ThoughtGraph::aggregate`] (`>= 2` parents, one child). Every mutation is
//! appended to a transformation log that can be replayed to rebuild the graph.
//!
//! Latency and volume both count vertices inclusively, so a chain of `n`
//! thoughts has latency `n` and volume `n`.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::title_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThoughtId(pub u32);

impl fmt::Display for ThoughtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThoughtKind {
    Summary,
    CategoryList,
    ItemList,
    VoteResult,
    Raw,
}

impl ThoughtKind {
    fn requires_items(self) -> bool {
        matches!(self, ThoughtKind::ItemList | ThoughtKind::VoteResult)
    }
}

/// Which part of the reasoning process a thought belongs to.
///
/// `Input` marks the root holding the user's own sequence; it is shared by
/// every branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Input,
    Short,
    Long,
    Collab,
    Final,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Input => "input",
            Branch::Short => "short",
            Branch::Long => "long",
            Branch::Collab => "collab",
            Branch::Final => "final",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "input" => Ok(Branch::Input),
            "short" => Ok(Branch::Short),
            "long" => Ok(Branch::Long),
            "collab" | "collaborative" => Ok(Branch::Collab),
            "final" => Ok(Branch::Final),
            other => Err(format!("unknown branch `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub id: ThoughtId,
    pub kind: ThoughtKind,
    pub branch: Branch,
    pub prompt_used: String,
    pub created_at_step: u32,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<String>>,
    /// Reply could not be parsed even after a re-prompt; excluded from
    /// aggregation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}

/// Content of a thought before it is placed in a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ThoughtSpec {
    pub kind: ThoughtKind,
    pub branch: Branch,
    pub prompt_used: String,
    pub content: String,
    pub items: Option<Vec<String>>,
    pub degraded: bool,
}

impl ThoughtSpec {
    pub fn new(kind: ThoughtKind, branch: Branch, prompt_used: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            kind,
            branch,
            prompt_used: prompt_used.into(),
            content: content.into(),
            items: None,
            degraded: false,
        }
    }

    pub fn with_items(mut self, items: Vec<String>) -> Self {
        self.items = Some(items);
        self
    }

    pub fn degraded(mut self) -> Self {
        self.degraded = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformationKind {
    Generate,
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformationRecord {
    pub kind: TransformationKind,
    pub inputs: Vec<ThoughtId>,
    pub outputs: Vec<ThoughtId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fanout: Option<u32>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown thought id {0}")]
    UnknownThought(ThoughtId),
    #[error("generate needs at least one child thought")]
    EmptyGeneration,
    #[error("aggregate needs at least 2 distinct inputs, got {0}")]
    TooFewInputs(usize),
    #[error("thought of kind {kind:?} must carry a non-empty, duplicate-free item list")]
    InvalidItems { kind: ThoughtKind },
    #[error("replay log references thought {0} before it exists")]
    BadReplay(ThoughtId),
}

/// Directed acyclic thought graph.
///
/// Ids are dense indices assigned in insertion order, so every edge goes from
/// a lower id (and step) to a higher one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThoughtGraph {
    vertices: Vec<Thought>,
    edges: Vec<(ThoughtId, ThoughtId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    final_thought: Option<ThoughtId>,
    log: Vec<TransformationRecord>,
    #[serde(skip)]
    step: u32,
}

impl ThoughtGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Thought] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(ThoughtId, ThoughtId)] {
        &self.edges
    }

    pub fn transformations(&self) -> &[TransformationRecord] {
        &self.log
    }

    pub fn get(&self, id: ThoughtId) -> Option<&Thought> {
        self.vertices.get(id.0 as usize)
    }

    pub fn final_thought(&self) -> Option<ThoughtId> {
        self.final_thought
    }

    pub fn set_final(&mut self, id: ThoughtId) -> Result<(), GraphError> {
        self.check(id)?;
        self.final_thought = Some(id);
        Ok(())
    }

    pub fn roots(&self) -> Vec<ThoughtId> {
        let with_parent: HashSet<ThoughtId> = self.edges.iter().map(|&(_, c)| c).collect();
        self.vertices.iter().map(|t| t.id).filter(|id| !with_parent.contains(id)).collect()
    }

    pub fn parents(&self, id: ThoughtId) -> Vec<ThoughtId> {
        self.edges.iter().filter(|&&(_, c)| c == id).map(|&(p, _)| p).collect()
    }

    pub fn children(&self, id: ThoughtId) -> Vec<ThoughtId> {
        self.edges.iter().filter(|&&(p, _)| p == id).map(|&(_, c)| c).collect()
    }

    pub fn in_degree(&self, id: ThoughtId) -> usize {
        self.edges.iter().filter(|&&(_, c)| c == id).count()
    }

    pub fn count_branch(&self, branch: Branch) -> usize {
        self.vertices.iter().filter(|t| t.branch == branch).count()
    }

    fn check(&self, id: ThoughtId) -> Result<(), GraphError> {
        if (id.0 as usize) < self.vertices.len() {
            Ok(())
        } else {
            Err(GraphError::UnknownThought(id))
        }
    }

    fn push(&mut self, spec: ThoughtSpec) -> Result<ThoughtId, GraphError> {
        validate_items(&spec)?;
        let id = ThoughtId(self.vertices.len() as u32);
        self.vertices.push(Thought {
            id,
            kind: spec.kind,
            branch: spec.branch,
            prompt_used: spec.prompt_used,
            created_at_step: self.step,
            content: spec.content,
            items: spec.items,
            degraded: spec.degraded,
        });
        self.step += 1;
        Ok(id)
    }

    /// Adds a parentless thought.
    pub fn add_root(&mut self, spec: ThoughtSpec) -> Result<ThoughtId, GraphError> {
        self.push(spec)
    }

    /// Generation transformation: `children.len()` new thoughts, each with
    /// the single parent `source`.
    pub fn generate(&mut self, source: ThoughtId, children: Vec<ThoughtSpec>) -> Result<Vec<ThoughtId>, GraphError> {
        self.check(source)?;
        if children.is_empty() {
            return Err(GraphError::EmptyGeneration);
        }
        for c in &children {
            validate_items(c)?;
        }
        let fanout = children.len() as u32;
        let mut outputs = Vec::with_capacity(children.len());
        for spec in children {
            let id = self.push(spec)?;
            self.edges.push((source, id));
            outputs.push(id);
        }
        self.log.push(TransformationRecord {
            kind: TransformationKind::Generate,
            inputs: vec![source],
            outputs: outputs.clone(),
            fanout: Some(fanout),
        });
        Ok(outputs)
    }

    /// Aggregation transformation: one new thought with an incoming edge from
    /// every input.
    pub fn aggregate(&mut self, inputs: &[ThoughtId], spec: ThoughtSpec) -> Result<ThoughtId, GraphError> {
        let distinct: BTreeSet<ThoughtId> = inputs.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(GraphError::TooFewInputs(distinct.len()));
        }
        for &id in inputs {
            self.check(id)?;
        }
        validate_items(&spec)?;
        let id = self.push(spec)?;
        let mut ordered = Vec::with_capacity(distinct.len());
        for &p in inputs {
            if !ordered.contains(&p) {
                ordered.push(p);
                self.edges.push((p, id));
            }
        }
        self.log.push(TransformationRecord {
            kind: TransformationKind::Aggregate,
            inputs: ordered,
            outputs: vec![id],
            fanout: None,
        });
        Ok(id)
    }

    /// Copies every vertex of `fragment` except its vertex 0 into `self`,
    /// treating fragment vertex 0 as an alias for `anchor`.
    ///
    /// Fragments let independent branches be built concurrently and then
    /// inserted in a fixed order, so ids do not depend on scheduling.
    pub fn absorb(&mut self, anchor: ThoughtId, fragment: ThoughtGraph) -> Result<Vec<ThoughtId>, GraphError> {
        self.check(anchor)?;
        if fragment.is_empty() {
            return Ok(Vec::new());
        }
        let mut map = Vec::with_capacity(fragment.len());
        map.push(anchor);
        let mut added = Vec::new();
        for t in fragment.vertices.into_iter().skip(1) {
            let id = self.push(ThoughtSpec {
                kind: t.kind,
                branch: t.branch,
                prompt_used: t.prompt_used,
                content: t.content,
                items: t.items,
                degraded: t.degraded,
            })?;
            map.push(id);
            added.push(id);
        }
        let remap = |id: ThoughtId| map[id.0 as usize];
        self.edges.extend(fragment.edges.into_iter().map(|(p, c)| (remap(p), remap(c))));
        self.log.extend(fragment.log.into_iter().map(|r| TransformationRecord {
            kind: r.kind,
            inputs: r.inputs.into_iter().map(remap).collect(),
            outputs: r.outputs.into_iter().map(remap).collect(),
            fanout: r.fanout,
        }));
        Ok(added)
    }

    /// Rebuilds a graph from its roots and transformation log.
    pub fn replay(&self) -> Result<ThoughtGraph, GraphError> {
        let mut rebuilt = ThoughtGraph::new();
        let produced: HashSet<ThoughtId> = self.log.iter().flat_map(|r| r.outputs.iter().copied()).collect();
        let spec_of = |id: ThoughtId| -> Result<ThoughtSpec, GraphError> {
            let t = self.get(id).ok_or(GraphError::BadReplay(id))?;
            Ok(ThoughtSpec {
                kind: t.kind,
                branch: t.branch,
                prompt_used: t.prompt_used.clone(),
                content: t.content.clone(),
                items: t.items.clone(),
                degraded: t.degraded,
            })
        };
        // old id -> new id
        let mut map = vec![None; self.vertices.len()];
        let lookup = |map: &[Option<ThoughtId>], id: ThoughtId| map.get(id.0 as usize).copied().flatten().ok_or(GraphError::BadReplay(id));
        let mut pending_roots: VecDeque<ThoughtId> =
            self.vertices.iter().map(|t| t.id).filter(|id| !produced.contains(id)).collect();
        for rec in &self.log {
            // roots are placed lazily, in id order, before the first record whose
            // outputs follow them
            let first_out = rec.outputs.iter().min().copied().unwrap_or(ThoughtId(u32::MAX));
            while pending_roots.front().is_some_and(|r| *r < first_out) {
                let r = pending_roots.pop_front().unwrap();
                map[r.0 as usize] = Some(rebuilt.add_root(spec_of(r)?)?);
            }
            match rec.kind {
                TransformationKind::Generate => {
                    let src = lookup(&map, rec.inputs[0])?;
                    let specs = rec.outputs.iter().map(|&o| spec_of(o)).collect::<Result<Vec<_>, _>>()?;
                    let ids = rebuilt.generate(src, specs)?;
                    for (&o, n) in rec.outputs.iter().zip(ids) {
                        map[o.0 as usize] = Some(n);
                    }
                }
                TransformationKind::Aggregate => {
                    let inputs = rec.inputs.iter().map(|&i| lookup(&map, i)).collect::<Result<Vec<_>, _>>()?;
                    let out = rec.outputs[0];
                    map[out.0 as usize] = Some(rebuilt.aggregate(&inputs, spec_of(out)?)?);
                }
            }
        }
        while let Some(r) = pending_roots.pop_front() {
            map[r.0 as usize] = Some(rebuilt.add_root(spec_of(r)?)?);
        }
        if let Some(f) = self.final_thought {
            rebuilt.final_thought = Some(lookup(&map, f)?);
        }
        Ok(rebuilt)
    }

    /// Vertices that have a directed path to `target`, excluding `target`.
    pub fn ancestors(&self, target: ThoughtId) -> Result<BTreeSet<ThoughtId>, GraphError> {
        self.check(target)?;
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([target]);
        while let Some(v) = queue.pop_front() {
            for p in self.parents(v) {
                if seen.insert(p) {
                    queue.push_back(p);
                }
            }
        }
        Ok(seen)
    }

    /// Vertex count of the longest directed path from any root to `target`,
    /// both endpoints included.
    pub fn latency(&self, target: ThoughtId) -> Result<usize, GraphError> {
        self.check(target)?;
        // ids are a topological order
        let mut longest = vec![1usize; target.0 as usize + 1];
        let mut incoming: Vec<Vec<ThoughtId>> = vec![Vec::new(); target.0 as usize + 1];
        for &(p, c) in &self.edges {
            if c <= target {
                incoming[c.0 as usize].push(p);
            }
        }
        for v in 0..=target.0 as usize {
            for p in &incoming[v] {
                longest[v] = longest[v].max(longest[p.0 as usize] + 1);
            }
        }
        Ok(longest[target.0 as usize])
    }

    /// Edge count of the longest root-to-`target` path.
    pub fn latency_hops(&self, target: ThoughtId) -> Result<usize, GraphError> {
        Ok(self.latency(target)? - 1)
    }

    /// Number of thoughts with a path to `target`, plus `target` itself.
    pub fn volume(&self, target: ThoughtId) -> Result<usize, GraphError> {
        Ok(self.ancestors(target)?.len() + 1)
    }

    /// Kahn's algorithm; true when every vertex can be ordered.
    pub fn is_acyclic(&self) -> bool {
        let n = self.vertices.len();
        let mut indeg = vec![0usize; n];
        for &(_, c) in &self.edges {
            indeg[c.0 as usize] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut visited = 0;
        while let Some(v) = queue.pop_front() {
            visited += 1;
            for &(p, c) in &self.edges {
                if p.0 as usize == v {
                    indeg[c.0 as usize] -= 1;
                    if indeg[c.0 as usize] == 0 {
                        queue.push_back(c.0 as usize);
                    }
                }
            }
        }
        visited == n
    }

    /// One JSON record per line: vertices first in id order, then edges in
    /// insertion order.
    pub fn export_lines(&self) -> String {
        #[derive(Serialize)]
        #[serde(tag = "record", rename_all = "kebab-case")]
        enum Line<'a> {
            Vertex(&'a Thought),
            Edge { from: ThoughtId, to: ThoughtId },
            Final { id: ThoughtId },
        }
        let mut out = String::new();
        let mut emit = |line: Line<'_>| {
            out.push_str(&serde_json::to_string(&line).expect("graph records serialize"));
            out.push('\n');
        };
        for t in &self.vertices {
            emit(Line::Vertex(t));
        }
        for &(from, to) in &self.edges {
            emit(Line::Edge { from, to });
        }
        if let Some(id) = self.final_thought {
            emit(Line::Final { id });
        }
        out
    }
}

fn validate_items(spec: &ThoughtSpec) -> Result<(), GraphError> {
    if !spec.kind.requires_items() {
        return Ok(());
    }
    let items = match &spec.items {
        Some(items) if !items.is_empty() => items,
        _ => return Err(GraphError::InvalidItems { kind: spec.kind }),
    };
    let mut seen = HashSet::new();
    if items.iter().all(|t| seen.insert(title_key(t))) {
        Ok(())
    } else {
        Err(GraphError::InvalidItems { kind: spec.kind })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(content: &str) -> ThoughtSpec {
        ThoughtSpec::new(ThoughtKind::Raw, Branch::Input, "none", content)
    }

    fn list(items: &[&str]) -> ThoughtSpec {
        ThoughtSpec::new(ThoughtKind::ItemList, Branch::Short, "recommend-category", "")
            .with_items(items.iter().map(|s| s.to_string()).collect())
    }

    fn chain(n: usize) -> (ThoughtGraph, ThoughtId) {
        let mut g = ThoughtGraph::new();
        let mut last = g.add_root(raw("seq")).unwrap();
        for i in 1..n {
            last = g.generate(last, vec![raw(&format!("step {i}"))]).unwrap()[0];
        }
        (g, last)
    }

    #[test]
    fn root_has_no_edges() {
        let mut g = ThoughtGraph::new();
        let a = g.add_root(raw("user sequence text")).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges().is_empty());
        let b = g.add_root(raw("other")).unwrap();
        assert_ne!(a, b);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn generate_three_children_single_parent() {
        let mut g = ThoughtGraph::new();
        let root = g.add_root(raw("r")).unwrap();
        let kids = g.generate(root, vec![raw("c1"), raw("c2"), raw("c3")]).unwrap();
        assert_eq!(kids.len(), 3);
        for k in &kids {
            assert_eq!(g.parents(*k), vec![root]);
        }
        let rec = &g.transformations()[0];
        assert_eq!(rec.kind, TransformationKind::Generate);
        assert_eq!(rec.fanout, Some(3));
        assert_eq!(rec.inputs, vec![root]);
    }

    #[test]
    fn generate_k1_extends_chain() {
        let (mut g, last) = chain(3);
        assert_eq!(g.latency(last).unwrap(), 3);
        let next = g.generate(last, vec![raw("x")]).unwrap()[0];
        assert_eq!(g.latency(next).unwrap(), 4);
    }

    #[test]
    fn two_level_binary_generation_has_seven_vertices() {
        let mut g = ThoughtGraph::new();
        let root = g.add_root(raw("r")).unwrap();
        let kids = g.generate(root, vec![raw("a"), raw("b")]).unwrap();
        for k in kids {
            g.generate(k, vec![raw("x"), raw("y")]).unwrap();
        }
        assert_eq!(g.len(), 7);
        assert_eq!(g.edges().len(), 6);
    }

    #[test]
    fn generate_errors() {
        let mut g = ThoughtGraph::new();
        assert_eq!(g.generate(ThoughtId(0), vec![raw("x")]), Err(GraphError::UnknownThought(ThoughtId(0))));
        let r = g.add_root(raw("r")).unwrap();
        assert_eq!(g.generate(r, vec![]), Err(GraphError::EmptyGeneration));
    }

    #[test]
    fn aggregate_three_lists_in_degree_three() {
        let mut g = ThoughtGraph::new();
        let root = g.add_root(raw("r")).unwrap();
        let lists = g.generate(root, vec![list(&["a"]), list(&["b"]), list(&["c"])]).unwrap();
        let vote = ThoughtSpec::new(ThoughtKind::VoteResult, Branch::Short, "vote", "").with_items(vec!["a".into()]);
        let v = g.aggregate(&lists, vote).unwrap();
        assert_eq!(g.in_degree(v), 3);
        assert_eq!(g.get(v).unwrap().kind, ThoughtKind::VoteResult);
    }

    #[test]
    fn aggregate_twice_gives_distinct_vertices() {
        let mut g = ThoughtGraph::new();
        let a = g.add_root(raw("a")).unwrap();
        let b = g.add_root(raw("b")).unwrap();
        let x = g.aggregate(&[a, b], raw("same")).unwrap();
        let y = g.aggregate(&[a, b], raw("same")).unwrap();
        assert_ne!(x, y);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn aggregate_errors() {
        let mut g = ThoughtGraph::new();
        let a = g.add_root(raw("a")).unwrap();
        assert_eq!(g.aggregate(&[a], raw("x")), Err(GraphError::TooFewInputs(1)));
        assert_eq!(g.aggregate(&[a, a], raw("x")), Err(GraphError::TooFewInputs(1)));
        assert_eq!(g.aggregate(&[a, ThoughtId(9)], raw("x")), Err(GraphError::UnknownThought(ThoughtId(9))));
        assert_eq!(g.len(), 1);
    }

    fn diamond() -> (ThoughtGraph, ThoughtId) {
        let mut g = ThoughtGraph::new();
        let root = g.add_root(raw("r")).unwrap();
        let ab = g.generate(root, vec![raw("a"), raw("b")]).unwrap();
        let f = g.aggregate(&ab, raw("f")).unwrap();
        (g, f)
    }

    #[test]
    fn diamond_counts() {
        let (g, f) = diamond();
        assert_eq!(g.len(), 4);
        assert_eq!(g.edges().len(), 4);
        assert_eq!(g.latency(f).unwrap(), 3);
        assert_eq!(g.volume(f).unwrap(), 4);
    }

    #[test]
    fn chain_latency_and_volume() {
        let (g, last) = chain(5);
        assert_eq!(g.latency(last).unwrap(), 5);
        assert_eq!(g.volume(last).unwrap(), 5);
        let (g, only) = chain(1);
        assert_eq!(g.latency(only).unwrap(), 1);
        assert_eq!(g.volume(only).unwrap(), 1);
    }

    #[test]
    fn item_list_invariants_enforced() {
        let mut g = ThoughtGraph::new();
        let r = g.add_root(raw("r")).unwrap();
        let empty = ThoughtSpec::new(ThoughtKind::ItemList, Branch::Short, "p", "");
        assert!(matches!(g.generate(r, vec![empty]), Err(GraphError::InvalidItems { .. })));
        assert!(matches!(g.generate(r, vec![list(&["Trail Mix", " trail  mix"])]), Err(GraphError::InvalidItems { .. })));
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn absorb_remaps_fragment() {
        let mut main = ThoughtGraph::new();
        let root = main.add_root(raw("seq")).unwrap();
        main.add_root(raw("other")).unwrap();

        let mut frag = ThoughtGraph::new();
        let anchor = frag.add_root(raw("seq")).unwrap();
        let s = frag.generate(anchor, vec![raw("summary")]).unwrap()[0];
        frag.generate(s, vec![list(&["a"]), list(&["b"])]).unwrap();

        let added = main.absorb(root, frag).unwrap();
        assert_eq!(added, vec![ThoughtId(2), ThoughtId(3), ThoughtId(4)]);
        assert_eq!(main.parents(ThoughtId(2)), vec![root]);
        assert_eq!(main.parents(ThoughtId(4)), vec![ThoughtId(2)]);
        assert_eq!(main.transformations()[0].inputs, vec![root]);
        assert!(main.is_acyclic());
    }

    #[test]
    fn export_is_deterministic_and_line_per_record() {
        let (mut g, f) = diamond();
        g.set_final(f).unwrap();
        let text = g.export_lines();
        assert_eq!(text, g.clone().export_lines());
        assert_eq!(text.lines().count(), 4 + 4 + 1);
        assert!(text.lines().next().unwrap().starts_with(r#"{"record":"vertex","id":0,"kind":"raw""#));
    }
}
