//! Turning interaction cases into candidate reasoning chains.

mod agent;
mod outline;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeKind;

pub use agent::{
    Agent, AgentError, AgentProfile, PromptRegistry, PromptTask, ReferenceResponder, Responder,
    ScriptedResponder, UnavailableResponder,
};
pub use outline::{parse_chain_outline, serialize_outline};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExtractError {
    #[error("case `{0}` has no turns")]
    EmptyCase(String),
    #[error("case `{case_id}` is malformed: {reason}")]
    InvalidCase { case_id: String, reason: String },
    #[error(transparent)]
    AgentFailure(#[from] AgentError),
    #[error("no prompt template registered for strategy `{0}`")]
    UnknownStrategy(String),
    #[error("outline parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("confidence {value} on line {line} is outside [0, 1]")]
    ConfidenceOutOfRange { line: usize, value: f64 },
    #[error("invalid chain `{chain_id}`: {reason}")]
    InvalidChain { chain_id: String, reason: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no agents supplied")]
    NoAgents,
    #[error("every case in the corpus failed")]
    AllCasesFailed(Vec<CaseFailure>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// One multi-turn interaction and its outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub case_id: String,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_type: Option<String>,
}

impl Case {
    pub fn check(&self) -> Result<(), ExtractError> {
        if self.turns.is_empty() {
            return Err(ExtractError::EmptyCase(self.case_id.clone()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::System };
            if turn.role != expected {
                return Err(ExtractError::InvalidCase {
                    case_id: self.case_id.clone(),
                    reason: format!("turn {} should be {:?}", i + 1, expected),
                });
            }
            if turn.text.trim().is_empty() {
                return Err(ExtractError::InvalidCase {
                    case_id: self.case_id.clone(),
                    reason: format!("turn {} is empty", i + 1),
                });
            }
        }
        Ok(())
    }
}

/// Parses a corpus file: a JSON array of cases.
pub fn parse_corpus(json: &str) -> Result<Vec<Case>, serde_json::Error> {
    serde_json::from_str(json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_key: Option<String>,
}

impl ChainStep {
    pub fn new(id: &str, label: &str) -> Self {
        Self {
            id: id.to_string(),
            kind: NodeKind::Action,
            label: label.to_string(),
            slot_key: None,
        }
    }
}

/// A parent-child edge with the extracting agent's confidence `P_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub from: String,
    pub to: String,
    pub confidence: f64,
}

/// A rooted tree extracted from one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateChain {
    pub chain_id: String,
    pub source_case_id: String,
    pub root: String,
    pub steps: Vec<ChainStep>,
    pub links: Vec<ChainLink>,
}

impl CandidateChain {
    pub fn step(&self, id: &str) -> Option<&ChainStep> {
        self.steps.iter().find(|s| s.id == id)
    }

    pub fn with_ids(mut self, chain_id: &str, source_case_id: &str) -> Self {
        self.chain_id = chain_id.to_string();
        self.source_case_id = source_case_id.to_string();
        self
    }

    /// Leaves become `Terminal`, everything else `Action`.
    pub(crate) fn assign_structural_kinds(&mut self) {
        let parents: BTreeSet<&str> = self.links.iter().map(|l| l.from.as_str()).collect();
        for step in &mut self.steps {
            if step.slot_key.is_none() {
                step.kind = if parents.contains(step.id.as_str()) {
                    NodeKind::Action
                } else {
                    NodeKind::Terminal
                };
            }
        }
    }

    /// Checks the tree invariants: one root, one parent per other step,
    /// everything reachable from the root, confidences in range.
    pub fn check(&self) -> Result<(), ExtractError> {
        let fail = |reason: String| ExtractError::InvalidChain {
            chain_id: self.chain_id.clone(),
            reason,
        };
        let ids: BTreeSet<&str> = self.steps.iter().map(|s| s.id.as_str()).collect();
        if ids.len() != self.steps.len() {
            return Err(fail("duplicate step ids".into()));
        }
        if !ids.contains(self.root.as_str()) {
            return Err(fail(format!("root `{}` is not a step", self.root)));
        }
        for s in &self.steps {
            if s.label.trim().is_empty() {
                return Err(fail(format!("step `{}` has an empty label", s.id)));
            }
        }
        let mut has_parent = BTreeSet::new();
        for l in &self.links {
            if !ids.contains(l.from.as_str()) || !ids.contains(l.to.as_str()) {
                return Err(fail(format!("link {} -> {} references a missing step", l.from, l.to)));
            }
            if !(0.0..=1.0).contains(&l.confidence) {
                return Err(fail(format!("link {} -> {} has confidence {}", l.from, l.to, l.confidence)));
            }
            if l.to == self.root || !has_parent.insert(l.to.as_str()) {
                return Err(fail(format!("step `{}` has more than one parent", l.to)));
            }
        }
        // n - 1 links with single parents form a tree iff everything hangs off the root
        let mut seen = BTreeSet::from([self.root.as_str()]);
        let mut frontier = vec![self.root.as_str()];
        while let Some(at) = frontier.pop() {
            for l in self.links.iter().filter(|l| l.from == at) {
                if seen.insert(l.to.as_str()) {
                    frontier.push(l.to.as_str());
                }
            }
        }
        if seen.len() != ids.len() {
            return Err(fail("some steps are not reachable from the root".into()));
        }
        Ok(())
    }

    /// Same shape, labels, kinds and confidences, ignoring step ids and
    /// sibling order.
    pub fn is_isomorphic(&self, other: &CandidateChain) -> bool {
        self.canonical_form() == other.canonical_form()
    }

    /// A string equal for exactly the chains isomorphic to this one.
    pub fn canonical_form(&self) -> String {
        // children sorted by their own canonical form, bottom-up
        let order = preorder(self);
        let mut forms: BTreeMap<&str, String> = BTreeMap::new();
        for id in order.iter().rev() {
            let Some(step) = self.step(id) else { continue };
            let mut children: Vec<String> = self
                .links
                .iter()
                .filter(|l| &l.from == id)
                .map(|l| format!("{:?}>{}", l.confidence, forms.get(l.to.as_str()).cloned().unwrap_or_default()))
                .collect();
            children.sort();
            let form = format!(
                "({:?}|{}|{:?}[{}])",
                step.kind,
                step.slot_key.as_deref().unwrap_or(""),
                step.label,
                children.join(",")
            );
            forms.insert(id.as_str(), form);
        }
        forms.remove(self.root.as_str()).unwrap_or_default()
    }
}

fn preorder(chain: &CandidateChain) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![chain.root.clone()];
    while let Some(id) = stack.pop() {
        let children: Vec<String> = chain
            .links
            .iter()
            .filter(|l| l.from == id)
            .map(|l| l.to.clone())
            .collect();
        out.push(id);
        stack.extend(children.into_iter().rev());
    }
    out
}

/// Extracts one chain from one case. The chain id is the case id.
pub fn extract_chain(
    agent: &Agent,
    registry: &PromptRegistry,
    case: &Case,
) -> Result<CandidateChain, ExtractError> {
    case.check()?;
    let prompt = registry
        .render(&agent.profile.strategy_id, &PromptTask::Extract(case))
        .ok_or_else(|| ExtractError::UnknownStrategy(agent.profile.strategy_id.clone()))?;
    let text = agent.respond(&prompt)?;
    let chain = parse_chain_outline(&text)?.with_ids(&case.case_id, &case.case_id);
    chain.check()?;
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub index: usize,
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusExtraction {
    pub chains: Vec<CandidateChain>,
    pub failures: Vec<CaseFailure>,
}

/// Picks the first agent whose strategy matches the case type, else the
/// agent with the `default` strategy, else the first agent.
pub fn assign_agent<'a>(agents: &'a [Agent], case: &Case) -> &'a Agent {
    case.case_type
        .as_deref()
        .and_then(|t| agents.iter().find(|a| a.profile.strategy_id == t))
        .or_else(|| agents.iter().find(|a| a.profile.strategy_id == "default"))
        .unwrap_or(&agents[0])
}

/// Extracts every case, in parallel, keeping corpus order. Chain ids are
/// `<case_id>#<corpus index>` so repeated cases stay distinguishable.
pub fn extract_corpus(
    agents: &[Agent],
    registry: &PromptRegistry,
    corpus: &[Case],
) -> Result<CorpusExtraction, ExtractError> {
    if corpus.is_empty() {
        return Err(ExtractError::EmptyCorpus);
    }
    if agents.is_empty() {
        return Err(ExtractError::NoAgents);
    }
    let results: Vec<Result<CandidateChain, ExtractError>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let agent = assign_agent(agents, case);
            extract_chain(agent, registry, case).map(|c| {
                let id = format!("{}#{i}", case.case_id);
                c.with_ids(&id, &case.case_id)
            })
        })
        .collect();
    let mut chains = Vec::new();
    let mut failures = Vec::new();
    for (i, (result, case)) in results.into_iter().zip(corpus).enumerate() {
        match result {
            Ok(c) => chains.push(c),
            Err(e) => failures.push(CaseFailure {
                index: i,
                case_id: case.case_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if chains.is_empty() {
        return Err(ExtractError::AllCasesFailed(failures));
    }
    Ok(CorpusExtraction { chains, failures })
}
