//! Reasoning strategies: the three-branch graph pipeline and the chain,
//! self-consistency and tree baselines, all registered by name.
//!
//! Every strategy builds a [`ThoughtGraph`] whose final vertex carries the
//! recommendation list. Runs are deterministic for a fixed backend and seed:
//! per-call seeds come from the prompt fingerprint, and concurrently built
//! pieces are inserted in a fixed order.

mod baselines;
mod got4rec;
mod session;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Branch, GraphError, ThoughtGraph, ThoughtId};
use crate::llm::{Gateway, LlmError};
use crate::prompts::{PromptError, PromptLibrary};
use crate::retrieval::{RetrievalError, SequenceIndex};

pub use baselines::{ChainOfThought, SelfConsistency, TreeOfThoughts};
pub use got4rec::GraphOfThoughts;
pub use session::{close_vote, derive_seed, Session};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
    #[error("unknown strategy `{name}` (available: {available})")]
    UnknownStrategy { name: String, available: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("every branch degraded; no recommendation list produced")]
    AllDegraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub strategy: String,
    /// Items per recommendation set.
    pub n: usize,
    /// Most recent interactions forming the short-term slice.
    pub s_short: usize,
    /// Generations per category (and per collaborative branch).
    pub repetitions: usize,
    pub categories: usize,
    /// Similar sequences retrieved for the collaborative branch.
    pub collab_k: usize,
    pub enabled_branches: Vec<Branch>,
    pub cot_sc_k: usize,
    pub tot_breadth: usize,
    pub tot_depth: usize,
    /// Issue independent calls concurrently. Results do not depend on it.
    pub concurrent: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: "got4rec".into(),
            n: 20,
            s_short: 3,
            repetitions: 3,
            categories: 3,
            collab_k: 3,
            enabled_branches: vec![Branch::Short, Branch::Long, Branch::Collab],
            cot_sc_k: 3,
            tot_breadth: 2,
            tot_depth: 2,
            concurrent: true,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |m: &str| Err(StrategyError::InvalidConfig(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.s_short == 0 {
            return bad("s_short must be at least 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if !(1..=3).contains(&self.categories) {
            return bad("categories must be between 1 and 3");
        }
        if self.collab_k == 0 {
            return bad("collab_k must be at least 1");
        }
        if self.cot_sc_k == 0 || self.tot_breadth == 0 {
            return bad("cot_sc_k and tot_breadth must be at least 1");
        }
        if self.tot_depth < 2 {
            return bad("tot_depth must be at least 2");
        }
        if (self.tot_breadth as u64).checked_pow(self.tot_depth as u32).is_none_or(|leaves| leaves > 256) {
            return bad("tot_breadth^tot_depth must not exceed 256");
        }
        let mut seen = Vec::new();
        for b in &self.enabled_branches {
            if !matches!(b, Branch::Short | Branch::Long | Branch::Collab) {
                return Err(StrategyError::InvalidConfig(format!("`{b}` is not a reasoning branch")));
            }
            if seen.contains(b) {
                return Err(StrategyError::InvalidConfig(format!("branch `{b}` listed twice")));
            }
            seen.push(*b);
        }
        Ok(())
    }

    /// Enabled branches in execution order.
    pub fn branches(&self) -> Vec<Branch> {
        [Branch::Short, Branch::Long, Branch::Collab].into_iter().filter(|b| self.enabled_branches.contains(b)).collect()
    }

    pub fn disable(&mut self, branch: Branch) {
        self.enabled_branches.retain(|b| *b != branch);
    }
}

/// A ranked, duplicate-free list of item titles and the thought it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub branch: Branch,
    pub items: Vec<String>,
    pub thought: ThoughtId,
}

/// What a user's model input looks like to a strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserInput {
    pub user: String,
    /// Chronological titles, oldest first.
    pub titles: Vec<String>,
}

/// Similar-user lookup for the collaborative branch.
pub struct Neighbourhood {
    index: SequenceIndex,
    titles: HashMap<String, Vec<String>>,
}

impl Neighbourhood {
    pub fn new(index: SequenceIndex, titles: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        Self { index, titles: titles.into_iter().collect() }
    }

    /// Title sequences of the `k` users nearest to `user`, nearest first.
    /// Empty when `user` has no stored vector or nobody else is indexed.
    pub fn similar(&self, user: &str, k: usize) -> Result<Vec<(String, Vec<String>)>, StrategyError> {
        let Some(query) = self.index.vector(user) else {
            return Ok(Vec::new());
        };
        if self.index.matrix().len() < 2 {
            return Ok(Vec::new());
        }
        let hits = self.index.retrieve_similar(query, k, Some(user))?;
        Ok(hits
            .into_iter()
            .filter_map(|h| self.titles.get(&h.id).map(|t| (h.id, t.clone())))
            .filter(|(_, t)| !t.is_empty())
            .collect())
    }
}

/// Shared, read-only resources for a batch of runs.
pub struct Env<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptLibrary,
    pub neighbours: Option<&'a Neighbourhood>,
    pub seed: u64,
}

/// A strategy's result before it is wrapped into a [`RunRecord`].
#[derive(Debug, Clone)]
pub struct Outcome {
    pub graph: ThoughtGraph,
    pub final_set: RecommendationSet,
    pub branch_sets: Vec<RecommendationSet>,
}

pub trait ReasoningStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn reason(&self, session: &Session<'_>, cfg: &StrategyConfig) -> Result<Outcome, StrategyError>;
}

/// Strategies selectable by name.
pub struct StrategyRegistry {
    strategies: BTreeMap<&'static str, Box<dyn ReasoningStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { strategies: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(GraphOfThoughts));
        r.register(Box::new(ChainOfThought));
        r.register(Box::new(SelfConsistency));
        r.register(Box::new(TreeOfThoughts));
        r
    }

    pub fn register(&mut self, strategy: Box<dyn ReasoningStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn ReasoningStrategy, StrategyError> {
        self.strategies.get(name).map(|s| s.as_ref()).ok_or_else(|| StrategyError::UnknownStrategy {
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// The backend could not produce a reply.
    Backend,
    /// Every reply that feeds the final vote failed to parse.
    Degraded,
    /// The user's input could not be turned into prompts.
    Data,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<&StrategyError> for Failure {
    fn from(e: &StrategyError) -> Self {
        let kind = match e {
            StrategyError::Llm(_) => FailureKind::Backend,
            StrategyError::AllDegraded => FailureKind::Degraded,
            StrategyError::Prompt(_) | StrategyError::Retrieval(_) => FailureKind::Data,
            _ => FailureKind::Internal,
        };
        Self { kind, message: e.to_string() }
    }
}

/// Everything a run produced for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub user: String,
    pub strategy: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_set: Option<RecommendationSet>,
    pub branch_sets: Vec<RecommendationSet>,
    pub latency: usize,
    pub volume: usize,
    pub llm_calls: u64,
    pub degraded_thoughts: usize,
    pub graph: ThoughtGraph,
}

impl RunRecord {
    pub fn final_items(&self) -> &[String] {
        self.final_set.as_ref().map(|s| s.items.as_slice()).unwrap_or_default()
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Runs `strategy` for one user. Errors become a failed record, except for
/// an invalid config.
pub fn run_user(
    strategy: &dyn ReasoningStrategy,
    input: &UserInput,
    cfg: &StrategyConfig,
    env: &Env<'_>,
) -> Result<RunRecord, StrategyError> {
    cfg.validate()?;
    let session = Session::new(env, input, cfg.concurrent);
    let result = strategy.reason(&session, cfg).and_then(|mut out| {
        out.graph.set_final(out.final_set.thought)?;
        let latency = out.graph.latency(out.final_set.thought)?;
        let volume = out.graph.volume(out.final_set.thought)?;
        Ok((out, latency, volume))
    });
    let llm_calls = session.calls();
    Ok(match result {
        Ok((out, latency, volume)) => RunRecord {
            user: input.user.clone(),
            strategy: strategy.name().to_string(),
            status: RunStatus::Completed,
            failure: None,
            degraded_thoughts: out.graph.vertices().iter().filter(|t| t.degraded).count(),
            final_set: Some(out.final_set),
            branch_sets: out.branch_sets,
            latency,
            volume,
            llm_calls,
            graph: out.graph,
        },
        Err(e) => {
            log::warn!("run for user {} failed: {e}", input.user);
            RunRecord {
                user: input.user.clone(),
                strategy: strategy.name().to_string(),
                status: RunStatus::Failed,
                failure: Some(Failure::from(&e)),
                final_set: None,
                branch_sets: Vec::new(),
                latency: 0,
                volume: 0,
                llm_calls,
                degraded_thoughts: 0,
                graph: ThoughtGraph::new(),
            }
        }
    })
}
