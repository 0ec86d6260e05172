//! The agent seam: the engine builds prompts, a responder turns a prompt
//! into text, the engine parses the text. Providers plug in behind
//! [`Responder`]; [`ReferenceResponder`] is the deterministic stand-in.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::WorkingMemory;

use super::Case;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("agent failure: {0}")]
pub struct AgentError(pub String);

pub trait Responder: Send + Sync {
    fn respond(&self, prompt: &str) -> Result<String, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub agent_id: String,
    /// Key into the [`PromptRegistry`].
    pub strategy_id: String,
    #[serde(default)]
    pub description: String,
}

impl AgentProfile {
    pub fn new(agent_id: &str, strategy_id: &str) -> Self {
        Self {
            agent_id: agent_id.to_string(),
            strategy_id: strategy_id.to_string(),
            description: String::new(),
        }
    }
}

/// A profile bound to the responder that serves it.
#[derive(Clone)]
pub struct Agent {
    pub profile: AgentProfile,
    responder: Arc<dyn Responder>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent").field("profile", &self.profile).finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(profile: AgentProfile, responder: Arc<dyn Responder>) -> Self {
        Self { profile, responder }
    }

    /// The default-strategy profile backed by [`ReferenceResponder`].
    pub fn reference() -> Self {
        Self::new(AgentProfile::new("reference", "default"), Arc::new(ReferenceResponder))
    }

    pub fn respond(&self, prompt: &str) -> Result<String, AgentError> {
        self.responder.respond(prompt)
    }
}

/// What the engine is asking an agent to do.
#[derive(Debug, Clone)]
pub enum PromptTask<'a> {
    Extract(&'a Case),
    /// Continue reasoning past a dead end at the named step.
    Continue { from_label: &'a str, memory: &'a WorkingMemory },
    /// Phrase the conclusion reached at a terminal step.
    Answer { conclusion: &'a str, memory: &'a WorkingMemory },
}

/// Instruction blocks keyed by strategy id.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<String, String>,
}

impl Default for PromptRegistry {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(
            "default".to_string(),
            "Extract the reasoning steps the system took, one per exchange, ending with the outcome.".to_string(),
        );
        templates.insert(
            "triage".to_string(),
            "Extract the clinical questioning sequence: each question asked, the finding it established, and the final assessment.".to_string(),
        );
        templates.insert(
            "advisory".to_string(),
            "Extract the decision points of the consultation and the advice given at the end.".to_string(),
        );
        Self { templates }
    }
}

impl PromptRegistry {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, strategy_id: &str, instructions: &str) {
        self.templates
            .insert(strategy_id.to_string(), instructions.to_string());
    }

    pub fn contains(&self, strategy_id: &str) -> bool {
        self.templates.contains_key(strategy_id)
    }

    pub fn strategies(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, strategy_id: &str, task: &PromptTask<'_>) -> Option<String> {
        let instructions = self.templates.get(strategy_id)?;
        let mut out = String::new();
        match task {
            PromptTask::Extract(case) => {
                out.push_str("TASK: extract\n");
                out.push_str(&format!("STRATEGY: {strategy_id}\n{instructions}\n"));
                out.push_str("Reply with a numbered outline, one step per line, e.g. `1. step`, `1.1 next step @0.9`.\n");
                out.push_str(&format!("CASE: {}\n", one_line(&case.case_id)));
                for turn in &case.turns {
                    let tag = match turn.role {
                        super::Role::User => "USER",
                        super::Role::System => "SYSTEM",
                    };
                    out.push_str(&format!("{tag}: {}\n", one_line(&turn.text)));
                }
                if let Some(outcome) = &case.outcome_label {
                    out.push_str(&format!("OUTCOME: {}\n", one_line(outcome)));
                }
            }
            PromptTask::Continue { from_label, memory } => {
                out.push_str("TASK: continue\n");
                out.push_str(&format!("STRATEGY: {strategy_id}\n{instructions}\n"));
                out.push_str("Reply with a numbered outline of the next steps.\n");
                out.push_str(&format!("FROM: {}\n", one_line(from_label)));
                out.push_str(&format!("SLOTS: {}\n", render_memory(memory)));
            }
            PromptTask::Answer { conclusion, memory } => {
                out.push_str("TASK: answer\n");
                out.push_str(&format!("STRATEGY: {strategy_id}\n"));
                out.push_str("Phrase the conclusion for the user in one sentence.\n");
                out.push_str(&format!("CONCLUSION: {}\n", one_line(conclusion)));
                out.push_str(&format!("SLOTS: {}\n", render_memory(memory)));
            }
        }
        out.push_str("END\n");
        Some(out)
    }
}

fn render_memory(memory: &WorkingMemory) -> String {
    memory
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Collapses whitespace runs so a value fits on one prompt line.
fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Makes free text safe as an outline label: one line, no ` @` suffix marker.
fn outline_label(text: &str) -> String {
    one_line(&text.replace('@', " at "))
}

/// Deterministic responder: one step per answered user turn, the outcome as
/// the final step, every edge at confidence 1.0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceResponder;

impl Responder for ReferenceResponder {
    fn respond(&self, prompt: &str) -> Result<String, AgentError> {
        let mut lines = prompt.lines();
        let task = lines
            .next()
            .and_then(|l| l.strip_prefix("TASK: "))
            .ok_or_else(|| AgentError("prompt has no TASK header".into()))?;
        let field = |name: &str| {
            prompt
                .lines()
                .find_map(|l| l.strip_prefix(name).map(str::to_string))
        };
        match task {
            "extract" => {
                let mut labels: Vec<String> = prompt
                    .lines()
                    .filter_map(|l| l.strip_prefix("SYSTEM: "))
                    .map(outline_label)
                    .filter(|l| !l.is_empty())
                    .collect();
                labels.push(
                    field("OUTCOME: ")
                        .map(|o| outline_label(&o))
                        .filter(|o| !o.is_empty())
                        .unwrap_or_else(|| "outcome unresolved".to_string()),
                );
                let mut out = String::new();
                let mut index = String::from("1");
                for (depth, label) in labels.iter().enumerate() {
                    if depth == 0 {
                        out.push_str(&format!("1. {label}\n"));
                    } else {
                        index.push_str(".1");
                        out.push_str(&format!("{index} {label}\n"));
                    }
                }
                Ok(out)
            }
            "continue" => {
                let from = field("FROM: ").unwrap_or_default();
                Ok(format!(
                    "1. investigate {}\n1.1 refer to expert review\n",
                    outline_label(&from)
                ))
            }
            "answer" => {
                let conclusion = field("CONCLUSION: ").unwrap_or_default();
                Ok(format!("Conclusion: {conclusion}."))
            }
            other => Err(AgentError(format!("unsupported task `{other}`"))),
        }
    }
}

/// Replies with fixed text regardless of the prompt.
#[derive(Debug, Clone)]
pub struct ScriptedResponder(pub String);

impl Responder for ScriptedResponder {
    fn respond(&self, _prompt: &str) -> Result<String, AgentError> {
        Ok(self.0.clone())
    }
}

/// A responder that is never reachable.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnavailableResponder;

impl Responder for UnavailableResponder {
    fn respond(&self, _prompt: &str) -> Result<String, AgentError> {
        Err(AgentError("responder unavailable".into()))
    }
}
