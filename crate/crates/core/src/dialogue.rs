//! Multi-turn sessions over a pinned graph snapshot. The graph decides every
//! branch; the agent only phrases conclusions, and the rule gate checks the
//! phrasing before it reaches the user.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditOp;
use crate::condition::{Literal, WorkingMemory};
use crate::engine::{Engine, EngineError};
use crate::evolution::{feedback_to_delta, Feedback};
use crate::extraction::{Agent, AgentError, PromptRegistry, PromptTask};
use crate::graph::{CanvasGraph, ChainEdge, EdgeId, GraphStage, NodeId, NodeKind, ValidationReport};
use crate::rulebook::{verify_output, RuleSet, Verdict};

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("graph is not promoted to Active")]
    GraphNotPromoted,
    #[error("graph fails validation: {} issue(s)", .0.issues.len())]
    InvalidGraph(ValidationReport),
    #[error("graph has no roots")]
    NoRoots,
    #[error("session is {0:?}, not Open")]
    SessionClosed(SessionStatus),
    #[error("cannot parse utterance at column {column}: {message}")]
    UtteranceParse { column: usize, message: String },
    #[error("nothing to ask at `{0}`")]
    NothingToAsk(NodeId),
    #[error("feedback path does not match the visited path")]
    PathMismatch,
    #[error("feedback needs a finished session")]
    SessionNotFinished,
    #[error("session belongs to graph `{session}`, engine holds `{engine}`")]
    GraphMismatch { session: String, engine: String },
    #[error("no prompt template for strategy `{0}`")]
    UnknownStrategy(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Open,
    AwaitingReview,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub session_id: String,
    pub graph_id: String,
    pub graph_version: u64,
    pub active_node: NodeId,
    pub visited_path: Vec<EdgeId>,
    pub working_memory: WorkingMemory,
    pub turn_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_question: Option<String>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SystemMove {
    Ask { question: String, slot: String },
    Answer { text: String, terminal: NodeId, verdict: Verdict },
    Refuse { rule_ids: Vec<String> },
    Escalate { review_item_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub turn: u64,
    pub user_text: String,
    pub system_move: SystemMove,
}

/// A session and the graph snapshot it runs on.
#[derive(Debug, Clone)]
pub struct Session {
    pub state: DialogueState,
    graph: Arc<CanvasGraph>,
    transcript: Vec<TranscriptEntry>,
}

/// Starts at the smallest root of a promoted, valid graph.
pub fn open_session(graph: Arc<CanvasGraph>, session_id: &str) -> Result<Session, DialogueError> {
    if graph.stage != GraphStage::Active {
        return Err(DialogueError::GraphNotPromoted);
    }
    let report = graph.validate();
    if !report.is_empty() {
        return Err(DialogueError::InvalidGraph(report));
    }
    let root = graph.roots.iter().next().cloned().ok_or(DialogueError::NoRoots)?;
    Ok(Session {
        state: DialogueState {
            session_id: session_id.to_string(),
            graph_id: graph.graph_id.clone(),
            graph_version: graph.version,
            active_node: root,
            visited_path: Vec::new(),
            working_memory: WorkingMemory::new(),
            turn_count: 0,
            pending_question: None,
            status: SessionStatus::Open,
        },
        graph,
        transcript: Vec::new(),
    })
}

fn parse_err(column: usize, message: impl Into<String>) -> DialogueError {
    DialogueError::UtteranceParse {
        column,
        message: message.into(),
    }
}

fn parse_value(raw: &str, column: usize) -> Result<Literal, DialogueError> {
    let v = raw.trim();
    let unquoted = v
        .strip_prefix('\'')
        .and_then(|s| s.strip_suffix('\''))
        .or_else(|| v.strip_prefix('"').and_then(|s| s.strip_suffix('"')));
    if let Some(s) = unquoted {
        return Ok(Literal::Str(s.to_string()));
    }
    if !v.chars().any(char::is_alphanumeric) {
        return Err(parse_err(column, format!("`{v}` is not a value")));
    }
    let numeric = v.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '-');
    match v.parse::<f64>() {
        Ok(n) if numeric && n.is_finite() => Ok(Literal::Num(n)),
        _ => Ok(Literal::Str(v.to_string())),
    }
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `name=value; name=value`, or a bare value answering `pending`. Blank
/// input assigns nothing.
pub fn parse_utterance(text: &str, pending: Option<&str>) -> Result<Vec<(String, Literal)>, DialogueError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    if !text.contains('=') {
        let slot = pending.ok_or_else(|| parse_err(1, "no question is pending; use name=value"))?;
        return Ok(vec![(slot.to_string(), parse_value(text, 1)?)]);
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for part in text.split(';') {
        let column = offset + 1;
        offset += part.chars().count() + 1;
        if part.trim().is_empty() {
            continue;
        }
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| parse_err(column, format!("expected name=value in `{}`", part.trim())))?;
        let name = name.trim();
        if !is_name(name) {
            return Err(parse_err(column, format!("`{name}` is not a slot name")));
        }
        let value_col = column + part.find('=').map_or(0, |i| part[..i].chars().count() + 1);
        out.push((name.to_string(), parse_value(value, value_col)?));
    }
    Ok(out)
}

/// Picks the unset slot most outgoing guards depend on (ties: alphabetical).
/// A Decision node's own slot is always a candidate while unset.
pub fn propose_clarification(state: &DialogueState, graph: &CanvasGraph) -> Result<(String, String), DialogueError> {
    let node = graph
        .node(&state.active_node)
        .ok_or_else(|| DialogueError::NothingToAsk(state.active_node.clone()))?;
    let memory = &state.working_memory;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    if let Some(slot) = node.slot_key.as_deref().filter(|s| !memory.contains_key(*s)) {
        counts.insert(slot, 0);
    }
    for e in graph.live_out_edges(&node.id) {
        if let Some(guard) = &e.guard {
            for slot in guard.slots().into_iter().filter(|s| !memory.contains_key(*s)) {
                *counts.entry(slot).or_default() += 1;
            }
        }
    }
    // max count, first (alphabetical) on ties
    let slot = counts
        .iter()
        .fold(None::<(&str, usize)>, |best, (s, c)| match best {
            Some((_, bc)) if bc >= *c => best,
            _ => Some((s, *c)),
        })
        .map(|(s, _)| s.to_string())
        .ok_or_else(|| DialogueError::NothingToAsk(node.id.clone()))?;
    let question = match (&node.slot_key, node.kind) {
        (Some(own), NodeKind::Decision) if *own == slot && node.label.trim_end().ends_with('?') => node.label.clone(),
        _ => format!("What is {slot}?"),
    };
    Ok((slot, question))
}

/// Highest weight, then highest confidence, then smallest id.
fn best<'a>(edges: impl Iterator<Item = &'a ChainEdge>) -> Option<&'a ChainEdge> {
    edges.fold(None, |best: Option<&ChainEdge>, e| match best {
        Some(b) => {
            let order = e
                .weight
                .total_cmp(&b.weight)
                .then(e.confidence.total_cmp(&b.confidence))
                .then(b.id.cmp(&e.id));
            if order.is_gt() {
                Some(e)
            } else {
                Some(b)
            }
        }
        None => Some(e),
    })
}

enum Halt {
    Terminal,
    Ask,
    Stuck,
}

/// Follows satisfied edges as far as they go. At Decision nodes guarded
/// edges win; unguarded ones are a fallback once nothing is left to ask.
fn walk(graph: &CanvasGraph, state: &mut DialogueState) -> Halt {
    loop {
        let Some(node) = graph.node(&state.active_node) else {
            return Halt::Stuck;
        };
        if node.kind == NodeKind::Terminal {
            return Halt::Terminal;
        }
        let memory = &state.working_memory;
        let satisfied: Vec<&ChainEdge> = graph
            .live_out_edges(&node.id)
            .filter(|e| e.guard.as_ref().is_none_or(|g| g.eval(memory)))
            .collect();
        let chosen = if node.kind == NodeKind::Decision {
            let guarded = best(satisfied.iter().copied().filter(|e| e.guard.is_some()));
            match guarded {
                Some(e) => Some(e),
                None if propose_clarification(state, graph).is_ok() => return Halt::Ask,
                None => best(satisfied.iter().copied()),
            }
        } else {
            best(satisfied.iter().copied())
        };
        match chosen {
            Some(e) => {
                state.visited_path.push(e.id.clone());
                state.active_node = e.to.clone();
            }
            None if propose_clarification(state, graph).is_ok() => return Halt::Ask,
            None => return Halt::Stuck,
        }
    }
}

/// The per-step collaborators: rules for the gate, the agent and its
/// prompts, and the engine that owns the live graph.
pub struct StepContext<'a> {
    pub ruleset: &'a RuleSet,
    pub agent: &'a Agent,
    pub registry: &'a PromptRegistry,
    pub engine: &'a mut Engine,
}

impl Session {
    pub fn graph(&self) -> &Arc<CanvasGraph> {
        &self.graph
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn transcript_json(&self) -> String {
        serde_json::to_string_pretty(&self.transcript).expect("transcript serializes")
    }

    /// One user turn. On error the session is unchanged.
    pub fn step(&mut self, utterance: &str, ctx: StepContext<'_>) -> Result<SystemMove, DialogueError> {
        if self.state.status != SessionStatus::Open {
            return Err(DialogueError::SessionClosed(self.state.status));
        }
        if ctx.engine.graph_id() != self.state.graph_id {
            return Err(DialogueError::GraphMismatch {
                session: self.state.graph_id.clone(),
                engine: ctx.engine.graph_id().to_string(),
            });
        }
        let assignments = parse_utterance(utterance, self.state.pending_question.as_deref())?;
        let mut state = self.state.clone();
        for (slot, value) in assignments {
            if state.pending_question.as_deref() == Some(slot.as_str()) {
                state.pending_question = None;
            }
            state.working_memory.insert(slot, value);
        }

        let mv = match walk(&self.graph, &mut state) {
            Halt::Terminal => {
                let node = &self.graph.nodes[&state.active_node];
                let prompt = ctx
                    .registry
                    .render(
                        &ctx.agent.profile.strategy_id,
                        &PromptTask::Answer {
                            conclusion: &node.label,
                            memory: &state.working_memory,
                        },
                    )
                    .ok_or_else(|| DialogueError::UnknownStrategy(ctx.agent.profile.strategy_id.clone()))?;
                let text = ctx.agent.respond(&prompt)?;
                match verify_output(&text, &state.working_memory, ctx.ruleset) {
                    Verdict::Blocked(rule_ids) => {
                        let refusal = AuditOp::GateRefusal {
                            session_id: state.session_id.clone(),
                            rule_ids: rule_ids.clone(),
                        };
                        match ctx.engine.commit(refusal) {
                            Err(EngineError::Rejected { .. }) => {}
                            Err(other) => return Err(other.into()),
                            Ok(_) => unreachable!("gate refusals never apply"),
                        }
                        SystemMove::Refuse { rule_ids }
                    }
                    verdict => {
                        state.status = SessionStatus::Closed;
                        state.pending_question = None;
                        SystemMove::Answer {
                            text,
                            terminal: node.id.clone(),
                            verdict,
                        }
                    }
                }
            }
            Halt::Ask => {
                let (slot, question) = propose_clarification(&state, &self.graph)?;
                state.pending_question = Some(slot.clone());
                SystemMove::Ask { question, slot }
            }
            Halt::Stuck => {
                let proposal = ctx
                    .engine
                    .explore(&state.active_node, &state.working_memory, ctx.agent, ctx.registry)?;
                state.status = SessionStatus::AwaitingReview;
                state.pending_question = None;
                SystemMove::Escalate {
                    review_item_id: proposal.review_item_id,
                }
            }
        };

        state.turn_count += 1;
        self.transcript.push(TranscriptEntry {
            turn: state.turn_count,
            user_text: utterance.to_string(),
            system_move: mv.clone(),
        });
        self.state = state;
        Ok(mv)
    }

    /// Applies outcome feedback to every edge on the visited path, through
    /// the engine so each update is audited.
    pub fn integrate_feedback(&self, feedback: &Feedback, engine: &mut Engine) -> Result<FeedbackSummary, DialogueError> {
        if self.state.status != SessionStatus::Closed {
            return Err(DialogueError::SessionNotFinished);
        }
        if feedback.visited_edge_ids != self.state.visited_path {
            return Err(DialogueError::PathMismatch);
        }
        let deltas = feedback_to_delta(feedback, engine.graph(), engine.config())?;
        let mut entries = Vec::new();
        for id in &feedback.visited_edge_ids {
            let d = deltas[id];
            let before = engine.graph().edges[id].clone();
            let new_p = engine.update_confidence(id, d.delta_p)?;
            let new_w = engine.accumulate_weight(id, d.delta_w)?;
            entries.push(EdgeUpdate {
                edge_id: id.clone(),
                old_p: before.confidence,
                new_p,
                old_w: before.weight,
                new_w,
            });
        }
        Ok(FeedbackSummary { entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeUpdate {
    pub edge_id: EdgeId,
    pub old_p: f64,
    pub new_p: f64,
    pub old_w: f64,
    pub new_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub entries: Vec<EdgeUpdate>,
}

#[cfg(test)]
mod tests;
