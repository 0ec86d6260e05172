//! The event log every graph mutation goes through. Applying the `Applied`
//! records in order to an empty graph rebuilds the live graph exactly.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    CanvasGraph, ChainNode, EdgeId, EdgePatch, EdgeSpec, EdgeStatus, ElementRef, GraphError, GraphStage, NodeId,
    NodePatch,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Actor {
    Expert(String),
    Agent(String),
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op_kind", deny_unknown_fields)]
pub enum EditPayload {
    AddNode {
        node: ChainNode,
        #[serde(default)]
        root: bool,
    },
    RemoveNode {
        id: NodeId,
    },
    AddEdge {
        edge: EdgeSpec,
    },
    RemoveEdge {
        id: EdgeId,
    },
    ModifyNode {
        id: NodeId,
        patch: NodePatch,
    },
    ModifyEdge {
        id: EdgeId,
        patch: EdgePatch,
    },
    /// Provisional (or flagged) to Active.
    PromoteEdge {
        id: EdgeId,
    },
    RetireEdge {
        id: EdgeId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditOp {
    pub payload: EditPayload,
    pub actor: Actor,
}

impl EditOp {
    pub fn new(payload: EditPayload, actor: Actor) -> Self {
        Self { payload, actor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AuditOp {
    /// Replaces the whole graph (keeping the graph id). Bootstraps a log.
    Import { graph: Box<CanvasGraph> },
    Edit(EditOp),
    ConfidenceUpdate { edge_id: EdgeId, delta_p: f64, alpha: f64 },
    WeightUpdate { edge_id: EdgeId, delta_w: f64 },
    Compress { chain: Vec<NodeId>, tau_w: f64 },
    SetStage { stage: GraphStage },
    /// Several ops applied all-or-nothing.
    Batch { reason: String, actor: Actor, ops: Vec<AuditOp> },
    /// A generated answer blocked by the gate. Always recorded as rejected.
    GateRefusal { session_id: String, rule_ids: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    CycleRejected,
    NotFound,
    InvalidPayload,
    NotACandidate,
    GateBlocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("{code:?}: {message}")]
pub struct Rejection {
    pub code: RejectCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<Vec<NodeId>>,
}

impl Rejection {
    pub fn new(code: RejectCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            cycle: None,
        }
    }
}

impl From<GraphError> for Rejection {
    fn from(err: GraphError) -> Self {
        let code = match &err {
            GraphError::CycleRejected { .. } => RejectCode::CycleRejected,
            GraphError::UnknownNode(_) | GraphError::UnknownEdge(_) | GraphError::NotFound(_) => RejectCode::NotFound,
            _ => RejectCode::InvalidPayload,
        };
        let cycle = match &err {
            GraphError::CycleRejected { cycle } => Some(cycle.clone()),
            _ => None,
        };
        Self {
            code,
            message: err.to_string(),
            cycle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum AuditResult {
    Applied,
    Rejected(Rejection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub graph_id: String,
    pub pre_version: u64,
    pub op: AuditOp,
    pub result: AuditResult,
}

/// Applies `op` to `graph` in place. Callers apply to a copy and keep it only
/// on success; the version is set by the caller.
pub fn apply(graph: &mut CanvasGraph, op: &AuditOp) -> Result<(), Rejection> {
    match op {
        AuditOp::Import { graph: imported } => {
            let id = graph.graph_id.clone();
            *graph = (**imported).clone();
            graph.graph_id = id;
            Ok(())
        }
        AuditOp::Edit(edit) => apply_edit(graph, &edit.payload),
        AuditOp::ConfidenceUpdate { edge_id, delta_p, alpha } => {
            let p = edge(graph, edge_id)?.confidence;
            let next = p + alpha * delta_p;
            if !next.is_finite() {
                return Err(Rejection::new(RejectCode::InvalidPayload, "non-finite confidence update"));
            }
            Ok(graph.set_confidence(edge_id, next.clamp(0.0, 1.0))?)
        }
        AuditOp::WeightUpdate { edge_id, delta_w } => {
            let w = edge(graph, edge_id)?.weight;
            let next = w + delta_w;
            if !next.is_finite() {
                return Err(Rejection::new(RejectCode::InvalidPayload, "non-finite weight update"));
            }
            Ok(graph.set_weight(edge_id, next.max(0.0))?)
        }
        AuditOp::Compress { chain, tau_w } => crate::consolidation::compress_in_place(graph, chain, *tau_w).map(|_| ()),
        AuditOp::SetStage { stage } => {
            graph.set_stage(*stage);
            Ok(())
        }
        AuditOp::Batch { ops, .. } => ops.iter().try_for_each(|op| apply(graph, op)),
        AuditOp::GateRefusal { rule_ids, .. } => Err(Rejection::new(
            RejectCode::GateBlocked,
            format!("answer blocked by {}", rule_ids.join(", ")),
        )),
    }
}

fn edge<'a>(graph: &'a CanvasGraph, id: &EdgeId) -> Result<&'a crate::graph::ChainEdge, Rejection> {
    graph
        .edge(id)
        .ok_or_else(|| Rejection::new(RejectCode::NotFound, format!("unknown edge `{id}`")))
}

fn apply_edit(graph: &mut CanvasGraph, payload: &EditPayload) -> Result<(), Rejection> {
    match payload {
        EditPayload::AddNode { node, root } => graph.insert_node(node.clone(), *root).map(|_| ()),
        EditPayload::RemoveNode { id } => graph.remove_element(&ElementRef::Node(id.clone())).map(|_| ()),
        EditPayload::AddEdge { edge } => graph.insert_edge(edge.clone()).map(|_| ()),
        EditPayload::RemoveEdge { id } => graph.remove_element(&ElementRef::Edge(id.clone())).map(|_| ()),
        EditPayload::ModifyNode { id, patch } => graph.modify_node(id, patch),
        EditPayload::ModifyEdge { id, patch } => graph.modify_edge(id, patch),
        EditPayload::PromoteEdge { id } => {
            let status = edge(graph, id)?.status;
            if !matches!(status, EdgeStatus::Provisional | EdgeStatus::PruneCandidate) {
                return Err(Rejection::new(
                    RejectCode::InvalidPayload,
                    format!("edge `{id}` is {status:?}, not Provisional"),
                ));
            }
            graph.set_edge_status(id, EdgeStatus::Active)
        }
        EditPayload::RetireEdge { id } => graph.set_edge_status(id, EdgeStatus::Retired),
    }
    .map_err(Rejection::from)
}

/// In-memory records plus an optional append-only NDJSON file.
#[derive(Debug, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    sink: Option<(PathBuf, File)>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a log file and loads its records.
    pub fn open(path: &Path) -> Result<Self, ReplayError> {
        let records = if path.exists() { read_records(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records,
            sink: Some((path.to_path_buf(), file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn next_seq(&self) -> u64 {
        self.records.last().map_or(1, |r| r.seq + 1)
    }

    /// Writes and syncs the record before keeping it in memory.
    pub fn append(&mut self, record: AuditRecord) -> io::Result<()> {
        if let Some((_, file)) = &mut self.sink {
            let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn since(&self, from_seq: u64) -> &[AuditRecord] {
        let start = self.records.partition_point(|r| r.seq < from_seq);
        &self.records[start..]
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("audit record {0} is corrupt: {1}")]
    CorruptRecord(u64, String),
    #[error("audit sequence gap: expected {0}, found {1}")]
    SequenceGap(u64, u64),
    #[error("audit record {seq} does not replay: {reason}")]
    Diverged { seq: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parses an NDJSON log, checking the sequence is gapless from 1.
pub fn read_records(path: &Path) -> Result<Vec<AuditRecord>, ReplayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<AuditRecord> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let expected = out.last().map_or(1, |r| r.seq + 1);
        let record: AuditRecord =
            serde_json::from_str(&line).map_err(|e| ReplayError::CorruptRecord(expected, e.to_string()))?;
        if record.seq != expected {
            return Err(ReplayError::SequenceGap(expected, record.seq));
        }
        out.push(record);
    }
    Ok(out)
}

/// Rebuilds a graph from records, stopping after `up_to_seq` if given.
pub fn replay_records(records: &[AuditRecord], up_to_seq: Option<u64>) -> Result<CanvasGraph, ReplayError> {
    let mut graph = CanvasGraph::new(records.first().map_or("", |r| r.graph_id.as_str()));
    for (i, record) in records.iter().enumerate() {
        let expected = i as u64 + 1;
        if record.seq != expected {
            return Err(ReplayError::SequenceGap(expected, record.seq));
        }
        if up_to_seq.is_some_and(|limit| record.seq > limit) {
            break;
        }
        if record.result != AuditResult::Applied {
            continue;
        }
        if record.pre_version != graph.version {
            return Err(ReplayError::Diverged {
                seq: record.seq,
                reason: format!("pre_version {} but graph is at {}", record.pre_version, graph.version),
            });
        }
        let pre = graph.version;
        apply(&mut graph, &record.op).map_err(|r| ReplayError::Diverged {
            seq: record.seq,
            reason: r.to_string(),
        })?;
        graph.version = pre + 1;
    }
    Ok(graph)
}
