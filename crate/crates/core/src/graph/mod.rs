//! The canvas graph: a rooted DAG of reasoning steps whose edges carry a
//! consensus confidence and an experience weight.
//!
//! Only `Active` and `Shortcut` edges ("live" edges) participate in the
//! acyclicity invariant and in traversal. `Provisional` edges are staged
//! proposals, `Retired` edges are kept for the audit trail, and
//! `PruneCandidate` edges are flagged for review and not traversed.
//!
//! Every mutation bumps `version` by one and re-establishes the root set:
//! a node that is unreachable from the roots but has live incident edges is
//! the descendant of some unreachable live source, and that source becomes
//! a root.

mod analysis;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::Condition;

pub use analysis::{Issue, ValidationReport};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub String);

macro_rules! string_id {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
        impl From<String> for $t {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
        impl $t {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(NodeId);
string_id!(EdgeId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Decision,
    Action,
    Observation,
    Question,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    /// Working-memory slot a decision branches on. Required iff `Decision`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_key: Option<String>,
    /// Case ids this node was extracted from, or `expert` / `explored`.
    #[serde(default)]
    pub provenance: BTreeSet<String>,
}

impl ChainNode {
    pub fn new(id: impl Into<NodeId>, kind: NodeKind, label: &str) -> Self {
        Self {
            id: id.into(),
            kind,
            label: label.to_string(),
            slot_key: None,
            provenance: BTreeSet::new(),
        }
    }

    pub fn decision(id: impl Into<NodeId>, label: &str, slot: &str) -> Self {
        Self {
            slot_key: Some(slot.to_string()),
            ..Self::new(id, NodeKind::Decision, label)
        }
    }

    pub fn with_provenance(mut self, tag: &str) -> Self {
        self.provenance.insert(tag.to_string());
        self
    }

    pub fn check(&self) -> Result<(), String> {
        if self.label.trim().is_empty() {
            return Err("label is empty".into());
        }
        match (self.kind, &self.slot_key) {
            (NodeKind::Decision, None) => Err("decision node needs a slot_key".into()),
            (NodeKind::Decision, Some(s)) if s.trim().is_empty() => {
                Err("decision node needs a non-empty slot_key".into())
            }
            (NodeKind::Decision, Some(_)) => Ok(()),
            (_, Some(_)) => Err("only decision nodes carry a slot_key".into()),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeStatus {
    Active,
    Provisional,
    Shortcut,
    PruneCandidate,
    Retired,
}

impl EdgeStatus {
    /// Live edges are traversable and subject to the acyclicity invariant.
    pub fn is_live(self) -> bool {
        matches!(self, EdgeStatus::Active | EdgeStatus::Shortcut)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub chain_id: String,
    /// Source node ids of the supporting chain edge.
    pub source_edge_path: Vec<String>,
    pub source_confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub entries: Vec<SupportEntry>,
}

impl SupportSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds entries whose chain id is not already present.
    pub fn union_with(&mut self, other: &SupportSet) {
        for entry in &other.entries {
            if !self.entries.iter().any(|e| e.chain_id == entry.chain_id) {
                self.entries.push(entry.clone());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEdge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub confidence: f64,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Condition>,
    pub status: EdgeStatus,
    #[serde(default)]
    pub support: SupportSet,
    /// Interior node ids compressed away. Present iff `Shortcut`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut_provenance: Option<Vec<NodeId>>,
}

/// Everything needed to insert an edge. The id is generated when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<EdgeId>,
    pub from: NodeId,
    pub to: NodeId,
    pub confidence: f64,
    #[serde(default = "active")]
    pub status: EdgeStatus,
    #[serde(default)]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Condition>,
    #[serde(default, skip_serializing_if = "SupportSet::is_empty")]
    pub support: SupportSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut_provenance: Option<Vec<NodeId>>,
}

fn active() -> EdgeStatus {
    EdgeStatus::Active
}

impl EdgeSpec {
    pub fn new(from: impl Into<NodeId>, to: impl Into<NodeId>, confidence: f64) -> Self {
        Self {
            id: None,
            from: from.into(),
            to: to.into(),
            confidence,
            status: EdgeStatus::Active,
            weight: 0.0,
            guard: None,
            support: SupportSet::default(),
            shortcut_provenance: None,
        }
    }

    pub fn status(mut self, status: EdgeStatus) -> Self {
        self.status = status;
        self
    }

    pub fn guard(mut self, guard: Condition) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn id(mut self, id: impl Into<EdgeId>) -> Self {
        self.id = Some(id.into());
        self
    }
}

/// Whether the graph as a whole has passed expert verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphStage {
    Provisional,
    Active,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "id")]
pub enum ElementRef {
    Node(NodeId),
    Edge(EdgeId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    /// Nodes promoted to roots because the removal orphaned them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub new_roots: Vec<NodeId>,
}

/// Partial update of a node; `None` leaves the field unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<NodeKind>,
    /// `Some(None)` clears the slot key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_key: Option<Option<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgePatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    /// `Some(None)` removes the guard.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Option<Condition>>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid node `{id}`: {reason}")]
    InvalidNode { id: NodeId, reason: String },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown edge `{0}`")]
    UnknownEdge(EdgeId),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("edge would close a cycle through {}", join(.cycle))]
    CycleRejected { cycle: Vec<NodeId> },
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("weight {0} must be finite and non-negative")]
    InvalidWeight(f64),
    #[error("self-loop on `{0}`")]
    SelfLoop(NodeId),
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
}

fn join(ids: &[NodeId]) -> String {
    ids.iter().map(|n| n.0.as_str()).collect::<Vec<_>>().join(" -> ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasGraph {
    pub graph_id: String,
    pub stage: GraphStage,
    pub nodes: BTreeMap<NodeId, ChainNode>,
    pub edges: BTreeMap<EdgeId, ChainEdge>,
    pub roots: BTreeSet<NodeId>,
    pub version: u64,
    /// Counter behind generated edge ids.
    pub next_edge_seq: u64,
}

impl CanvasGraph {
    pub fn new(graph_id: &str) -> Self {
        Self {
            graph_id: graph_id.to_string(),
            stage: GraphStage::Active,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            roots: BTreeSet::new(),
            version: 0,
            next_edge_seq: 1,
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&ChainNode> {
        self.nodes.get(id)
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&ChainEdge> {
        self.edges.get(id)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Outgoing edges of `node` in edge-id order.
    pub fn out_edges<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = &'a ChainEdge> + 'a {
        self.edges.values().filter(move |e| &e.from == node)
    }

    pub fn live_out_edges<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = &'a ChainEdge> + 'a {
        self.out_edges(node).filter(|e| e.status.is_live())
    }

    pub fn live_edges(&self) -> impl Iterator<Item = &ChainEdge> {
        self.edges.values().filter(|e| e.status.is_live())
    }

    fn bump(&mut self) {
        self.version += 1;
    }

    /// Inserts a node as a plain (non-root) node.
    pub fn add_node(&mut self, node: ChainNode) -> Result<NodeId, GraphError> {
        self.insert_node(node, false)
    }

    pub fn add_root(&mut self, node: ChainNode) -> Result<NodeId, GraphError> {
        self.insert_node(node, true)
    }

    pub fn insert_node(&mut self, node: ChainNode, root: bool) -> Result<NodeId, GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateId(node.id.0.clone()));
        }
        node.check().map_err(|reason| GraphError::InvalidNode {
            id: node.id.clone(),
            reason,
        })?;
        let id = node.id.clone();
        self.nodes.insert(id.clone(), node);
        if root {
            self.roots.insert(id.clone());
        }
        self.normalize_roots();
        self.bump();
        Ok(id)
    }

    pub fn add_edge(
        &mut self,
        from: &NodeId,
        to: &NodeId,
        confidence: f64,
        status: EdgeStatus,
    ) -> Result<EdgeId, GraphError> {
        self.insert_edge(EdgeSpec::new(from.clone(), to.clone(), confidence).status(status))
    }

    pub fn insert_edge(&mut self, spec: EdgeSpec) -> Result<EdgeId, GraphError> {
        for end in [&spec.from, &spec.to] {
            if !self.nodes.contains_key(end) {
                return Err(GraphError::UnknownNode(end.clone()));
            }
        }
        if spec.from == spec.to {
            return Err(GraphError::SelfLoop(spec.from));
        }
        if !(0.0..=1.0).contains(&spec.confidence) {
            return Err(GraphError::ConfidenceOutOfRange(spec.confidence));
        }
        if !(spec.weight.is_finite() && spec.weight >= 0.0) {
            return Err(GraphError::InvalidWeight(spec.weight));
        }
        check_shortcut_fields(spec.status, spec.shortcut_provenance.as_deref())?;
        if let Some(id) = &spec.id {
            if self.edges.contains_key(id) {
                return Err(GraphError::DuplicateId(id.0.clone()));
            }
        }
        if spec.status.is_live() {
            if let Some(cycle) = self.live_path(&spec.to, &spec.from) {
                return Err(GraphError::CycleRejected { cycle });
            }
        }
        let id = match spec.id {
            Some(id) => id,
            None => self.fresh_edge_id(),
        };
        self.edges.insert(
            id.clone(),
            ChainEdge {
                id: id.clone(),
                from: spec.from,
                to: spec.to,
                confidence: spec.confidence,
                weight: spec.weight,
                guard: spec.guard,
                status: spec.status,
                support: spec.support,
                shortcut_provenance: spec.shortcut_provenance,
            },
        );
        self.normalize_roots();
        self.bump();
        Ok(id)
    }

    fn fresh_edge_id(&mut self) -> EdgeId {
        loop {
            let id = EdgeId(format!("e{:06}", self.next_edge_seq));
            self.next_edge_seq += 1;
            if !self.edges.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn remove_element(&mut self, target: &ElementRef) -> Result<RemovalReport, GraphError> {
        let mut report = RemovalReport::default();
        match target {
            ElementRef::Edge(id) => {
                if self.edges.remove(id).is_none() {
                    return Err(GraphError::NotFound(id.0.clone()));
                }
                report.edges.push(id.clone());
            }
            ElementRef::Node(id) => {
                if self.nodes.remove(id).is_none() {
                    return Err(GraphError::NotFound(id.0.clone()));
                }
                self.roots.remove(id);
                let incident: Vec<EdgeId> = self
                    .edges
                    .values()
                    .filter(|e| &e.from == id || &e.to == id)
                    .map(|e| e.id.clone())
                    .collect();
                for e in &incident {
                    self.edges.remove(e);
                }
                report.nodes.push(id.clone());
                report.edges = incident;
            }
        }
        report.new_roots = self.normalize_roots();
        self.bump();
        Ok(report)
    }

    /// Changes an edge's status. Making an edge live re-checks acyclicity.
    pub fn set_edge_status(&mut self, id: &EdgeId, status: EdgeStatus) -> Result<(), GraphError> {
        let edge = self
            .edges
            .get(id)
            .ok_or_else(|| GraphError::UnknownEdge(id.clone()))?;
        if status == EdgeStatus::Shortcut {
            check_shortcut_fields(status, edge.shortcut_provenance.as_deref())?;
        }
        if status.is_live() && !edge.status.is_live() {
            if let Some(cycle) = self.live_path(&edge.to, &edge.from) {
                return Err(GraphError::CycleRejected { cycle });
            }
        }
        let edge = self.edges.get_mut(id).expect("checked above");
        edge.status = status;
        if status != EdgeStatus::Shortcut {
            // the compressed path lives on in the audit log
            edge.shortcut_provenance = None;
        }
        self.normalize_roots();
        self.bump();
        Ok(())
    }

    pub fn modify_node(&mut self, id: &NodeId, patch: &NodePatch) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get(id)
            .ok_or_else(|| GraphError::NotFound(id.0.clone()))?;
        let mut updated = node.clone();
        if let Some(label) = &patch.label {
            updated.label = label.clone();
        }
        if let Some(kind) = patch.kind {
            updated.kind = kind;
        }
        if let Some(slot) = &patch.slot_key {
            updated.slot_key = slot.clone();
        }
        updated.check().map_err(|reason| GraphError::InvalidNode {
            id: id.clone(),
            reason,
        })?;
        self.nodes.insert(id.clone(), updated);
        self.bump();
        Ok(())
    }

    pub fn modify_edge(&mut self, id: &EdgeId, patch: &EdgePatch) -> Result<(), GraphError> {
        let edge = self
            .edges
            .get(id)
            .ok_or_else(|| GraphError::NotFound(id.0.clone()))?;
        let mut updated = edge.clone();
        if let Some(c) = patch.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(GraphError::ConfidenceOutOfRange(c));
            }
            updated.confidence = c;
        }
        if let Some(w) = patch.weight {
            if !(w.is_finite() && w >= 0.0) {
                return Err(GraphError::InvalidWeight(w));
            }
            updated.weight = w;
        }
        if let Some(guard) = &patch.guard {
            updated.guard = guard.clone();
        }
        self.edges.insert(id.clone(), updated);
        self.bump();
        Ok(())
    }

    pub fn set_confidence(&mut self, id: &EdgeId, confidence: f64) -> Result<(), GraphError> {
        self.modify_edge(
            id,
            &EdgePatch {
                confidence: Some(confidence),
                ..EdgePatch::default()
            },
        )
    }

    pub fn set_weight(&mut self, id: &EdgeId, weight: f64) -> Result<(), GraphError> {
        self.modify_edge(
            id,
            &EdgePatch {
                weight: Some(weight),
                ..EdgePatch::default()
            },
        )
    }

    pub fn mark_root(&mut self, id: &NodeId) -> Result<(), GraphError> {
        if !self.nodes.contains_key(id) {
            return Err(GraphError::UnknownNode(id.clone()));
        }
        self.roots.insert(id.clone());
        self.bump();
        Ok(())
    }

    pub fn set_stage(&mut self, stage: GraphStage) {
        self.stage = stage;
        self.bump();
    }

    /// Re-establishes the root invariant and returns newly added roots.
    fn normalize_roots(&mut self) -> Vec<NodeId> {
        let nodes = &self.nodes;
        self.roots.retain(|r| nodes.contains_key(r));
        let mut added = Vec::new();
        let reachable = self.reachable_from_roots();
        let mut has_live = BTreeSet::new();
        let mut has_live_incoming = BTreeSet::new();
        for e in self.live_edges() {
            has_live.insert(e.from.clone());
            has_live.insert(e.to.clone());
            has_live_incoming.insert(e.to.clone());
        }
        for id in has_live.iter() {
            if !reachable.contains(id) && !has_live_incoming.contains(id) {
                added.push(id.clone());
            }
        }
        if self.roots.is_empty() && added.is_empty() {
            if let Some(first) = self.nodes.keys().find(|n| !has_live_incoming.contains(*n)) {
                added.push(first.clone());
            }
        }
        self.roots.extend(added.iter().cloned());
        added
    }

    pub fn validate(&self) -> ValidationReport {
        analysis::validate(self)
    }

    pub fn enumerate_paths(
        &self,
        from: &NodeId,
        to: &NodeId,
        max_len: usize,
    ) -> Result<Vec<Vec<NodeId>>, GraphError> {
        analysis::enumerate_paths(self, from, to, max_len)
    }

    /// Nodes reachable from the roots over live edges, roots included.
    pub fn reachable_from_roots(&self) -> BTreeSet<NodeId> {
        analysis::reachable(self, self.roots.iter().cloned())
    }

    /// A live path `from -> ... -> to` as node ids, if one exists.
    pub fn live_path(&self, from: &NodeId, to: &NodeId) -> Option<Vec<NodeId>> {
        analysis::live_path(self, from, to)
    }

    /// Edge ids of one live cycle, if any.
    pub fn find_live_cycle(&self) -> Option<Vec<EdgeId>> {
        analysis::find_cycle(self, |e| e.status.is_live())
    }
}

fn check_shortcut_fields(status: EdgeStatus, provenance: Option<&[NodeId]>) -> Result<(), GraphError> {
    match (status, provenance) {
        (EdgeStatus::Shortcut, Some(p)) if !p.is_empty() => Ok(()),
        (EdgeStatus::Shortcut, _) => Err(GraphError::InvalidEdge(
            "shortcut edges need a non-empty shortcut_provenance".into(),
        )),
        (_, Some(_)) => Err(GraphError::InvalidEdge(
            "only shortcut edges carry shortcut_provenance".into(),
        )),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests;
