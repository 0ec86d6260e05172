//! Learning from use: feedback-driven confidence and weight updates, and
//! agent exploration past dead ends.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audit::{Actor, AuditOp, EditOp, EditPayload, RejectCode};
use crate::condition::WorkingMemory;
use crate::config::EngineConfig;
use crate::engine::{Engine, EngineError};
use crate::extraction::{parse_chain_outline, Agent, ExtractError, PromptRegistry, PromptTask};
use crate::graph::{CanvasGraph, ChainNode, EdgeId, EdgeSpec, EdgeStatus, NodeId};
use crate::review::ReviewKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub session_id: String,
    pub visited_edge_ids: Vec<EdgeId>,
    pub outcome: Outcome,
    #[serde(default)]
    pub expert_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub delta_p: f64,
    pub delta_w: f64,
}

/// Success: (+1, +1); Failure: (-1, 0); Neutral: (0, 0). Expert feedback
/// scales `delta_p` by `config.expert_feedback_multiplier`.
pub fn feedback_to_delta(
    feedback: &Feedback,
    graph: &CanvasGraph,
    config: &EngineConfig,
) -> Result<BTreeMap<EdgeId, Delta>, EngineError> {
    let (mut delta_p, delta_w) = match feedback.outcome {
        Outcome::Success => (1.0, 1.0),
        Outcome::Failure => (-1.0, 0.0),
        Outcome::Neutral => (0.0, 0.0),
    };
    if feedback.expert_flag {
        delta_p *= config.expert_feedback_multiplier;
    }
    feedback
        .visited_edge_ids
        .iter()
        .map(|id| {
            graph
                .edge(id)
                .map(|_| (id.clone(), Delta { delta_p, delta_w }))
                .ok_or_else(|| EngineError::UnknownEdge(id.clone()))
        })
        .collect()
}

/// A provisional subchain attached by [`Engine::explore`], awaiting review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationProposal {
    pub review_item_id: String,
    pub attached_at: NodeId,
    pub node_ids: Vec<NodeId>,
    pub edge_ids: Vec<EdgeId>,
}

fn unknown_edge(err: EngineError, id: &EdgeId) -> EngineError {
    match err {
        EngineError::Rejected { ref rejection, .. } if rejection.code == RejectCode::NotFound => {
            EngineError::UnknownEdge(id.clone())
        }
        other => other,
    }
}

impl Engine {
    /// `P <- clamp(P + alpha * delta_p, 0, 1)`. Audited even when `delta_p` is 0.
    pub fn update_confidence(&mut self, edge_id: &EdgeId, delta_p: f64) -> Result<f64, EngineError> {
        let alpha = self.config().alpha;
        self.commit(AuditOp::ConfidenceUpdate {
            edge_id: edge_id.clone(),
            delta_p,
            alpha,
        })
        .map_err(|e| unknown_edge(e, edge_id))?;
        Ok(self.graph().edges[edge_id].confidence)
    }

    /// `w <- max(w + delta_w, 0)`.
    pub fn accumulate_weight(&mut self, edge_id: &EdgeId, delta_w: f64) -> Result<f64, EngineError> {
        self.commit(AuditOp::WeightUpdate {
            edge_id: edge_id.clone(),
            delta_w,
        })
        .map_err(|e| unknown_edge(e, edge_id))?;
        Ok(self.graph().edges[edge_id].weight)
    }

    /// Asks the agent how to continue from a dead end at `at` and attaches the
    /// answer as Provisional nodes and edges at the initial confidence, plus
    /// an ExplorationProposal review item. Nothing changes on error.
    pub fn explore(
        &mut self,
        at: &NodeId,
        memory: &WorkingMemory,
        agent: &Agent,
        registry: &PromptRegistry,
    ) -> Result<ExplorationProposal, EngineError> {
        let graph = self.graph();
        let node = graph.node(at).ok_or_else(|| EngineError::UnknownNode(at.clone()))?;
        if graph
            .live_out_edges(at)
            .any(|e| e.guard.as_ref().is_none_or(|g| g.eval(memory)))
        {
            return Err(EngineError::Precondition(format!(
                "node `{at}` already has a satisfied outgoing edge"
            )));
        }
        let prompt = registry
            .render(
                &agent.profile.strategy_id,
                &PromptTask::Continue {
                    from_label: &node.label,
                    memory,
                },
            )
            .ok_or_else(|| ExtractError::UnknownStrategy(agent.profile.strategy_id.clone()))?;
        let text = agent.respond(&prompt).map_err(ExtractError::from)?;
        let chain = parse_chain_outline(&text)?;

        let p0 = self.config().initial_confidence_p0;
        let mut ids: BTreeMap<&str, NodeId> = BTreeMap::new();
        let mut seq = 0usize;
        for step in &chain.steps {
            let id = loop {
                seq += 1;
                let candidate = NodeId(format!("x{seq:04}"));
                if graph.node(&candidate).is_none() {
                    break candidate;
                }
            };
            ids.insert(step.id.as_str(), id);
        }
        let mut ops = Vec::new();
        let actor = Actor::Agent(agent.profile.agent_id.clone());
        for step in &chain.steps {
            let mut node = ChainNode::new(ids[step.id.as_str()].clone(), step.kind, &step.label).with_provenance("explored");
            node.slot_key = step.slot_key.clone();
            ops.push(AuditOp::Edit(EditOp::new(
                EditPayload::AddNode { node, root: false },
                actor.clone(),
            )));
        }
        let mut links = vec![(at.clone(), ids[chain.root.as_str()].clone())];
        links.extend(
            chain
                .links
                .iter()
                .map(|l| (ids[l.from.as_str()].clone(), ids[l.to.as_str()].clone())),
        );
        for (from, to) in links {
            ops.push(AuditOp::Edit(EditOp::new(
                EditPayload::AddEdge {
                    edge: EdgeSpec::new(from, to, p0).status(EdgeStatus::Provisional),
                },
                actor.clone(),
            )));
        }

        let before: Vec<EdgeId> = graph.edges.keys().cloned().collect();
        self.commit(AuditOp::Batch {
            reason: format!("explore from {at}"),
            actor,
            ops,
        })?;
        let edge_ids: Vec<EdgeId> = self
            .graph()
            .edges
            .keys()
            .filter(|k| before.binary_search(k).is_err())
            .cloned()
            .collect();
        let item = self.reviews.enqueue(
            ReviewKind::ExplorationProposal,
            edge_ids.iter().map(|e| e.0.clone()).collect(),
            None,
        );
        Ok(ExplorationProposal {
            review_item_id: item.item_id,
            attached_at: at.clone(),
            node_ids: chain.steps.iter().map(|s| ids[s.id.as_str()].clone()).collect(),
            edge_ids,
        })
    }
}
