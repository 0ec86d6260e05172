//! The single writer for one graph: every mutation is committed here, and
//! every attempt, applied or not, lands in the audit log.

use std::io;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::audit::{self, AuditLog, AuditOp, AuditRecord, AuditResult, EditOp, Rejection, ReplayError};
use crate::config::{ConfigError, EngineConfig};
use crate::extraction::ExtractError;
use crate::graph::{CanvasGraph, EdgeId, NodeId, ValidationReport};
use crate::review::{ReviewItem, ReviewQueue};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("rejected (audit seq {seq}): {rejection}")]
    Rejected { seq: u64, rejection: Rejection },
    #[error("graph fails validation: {} issue(s)", .0.issues.len())]
    InvalidGraph(ValidationReport),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown edge `{0}`")]
    UnknownEdge(EdgeId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("review item `{0}` not found")]
    ReviewNotFound(String),
    #[error("review item `{0}` is already resolved")]
    AlreadyResolved(String),
    #[error("chain is not a current jump candidate")]
    NotACandidate,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("audit log: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl EngineError {
    pub fn rejection(&self) -> Option<&Rejection> {
        match self {
            EngineError::Rejected { rejection, .. } => Some(rejection),
            _ => None,
        }
    }
}

/// What an edit attempt came to. Both outcomes are audited.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EditResult {
    pub seq: u64,
    pub version: u64,
    pub result: AuditResult,
}

#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    graph: CanvasGraph,
    log: AuditLog,
    pub(crate) reviews: ReviewQueue,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Engine {
    /// Starts a fresh log whose first record imports `graph`.
    pub fn new(graph: CanvasGraph, config: EngineConfig) -> Result<Self, EngineError> {
        Self::with_log(graph, config, AuditLog::in_memory())
    }

    /// Like [`Engine::new`], writing to an empty `log`.
    pub fn with_log(graph: CanvasGraph, config: EngineConfig, log: AuditLog) -> Result<Self, EngineError> {
        config.validate()?;
        let report = graph.validate();
        if !report.is_empty() {
            return Err(EngineError::InvalidGraph(report));
        }
        if !log.records().is_empty() {
            return Err(EngineError::Precondition("audit log is not empty".into()));
        }
        let mut engine = Self {
            config,
            graph: CanvasGraph::new(&graph.graph_id),
            log,
            reviews: ReviewQueue::new(),
        };
        engine.commit(AuditOp::Import { graph: Box::new(graph) })?;
        Ok(engine)
    }

    /// Reassembles an engine from persisted parts. The graph must equal the
    /// replay of the log.
    pub fn restore(config: EngineConfig, log: AuditLog, reviews: ReviewQueue) -> Result<Self, EngineError> {
        config.validate()?;
        let graph = audit::replay_records(log.records(), None)?;
        Ok(Self {
            config,
            graph,
            log,
            reviews,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn graph(&self) -> &CanvasGraph {
        &self.graph
    }

    pub fn graph_id(&self) -> &str {
        &self.graph.graph_id
    }

    pub fn version(&self) -> u64 {
        self.graph.version
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    pub fn reviews(&self) -> &ReviewQueue {
        &self.reviews
    }

    /// Takes over a review item created outside the engine, e.g. by a merge.
    pub fn adopt_review(&mut self, item: ReviewItem) {
        self.reviews.adopt(item);
    }

    /// Records an attempt refused before reaching the graph.
    pub(crate) fn reject(&mut self, op: AuditOp, rejection: Rejection) -> EngineError {
        let seq = self.log.next_seq();
        let record = AuditRecord {
            seq,
            timestamp_ms: now_ms(),
            graph_id: self.graph.graph_id.clone(),
            pre_version: self.graph.version,
            op,
            result: AuditResult::Rejected(rejection.clone()),
        };
        match self.log.append(record) {
            Ok(()) => EngineError::Rejected { seq, rejection },
            Err(e) => EngineError::Io(e),
        }
    }

    /// Applies `op` to a copy; on success the copy becomes the graph at
    /// version + 1. The attempt is recorded either way.
    pub fn commit(&mut self, op: AuditOp) -> Result<u64, EngineError> {
        let pre_version = self.graph.version;
        let mut next = self.graph.clone();
        let outcome = audit::apply(&mut next, &op);
        let seq = self.log.next_seq();
        let record = AuditRecord {
            seq,
            timestamp_ms: now_ms(),
            graph_id: self.graph.graph_id.clone(),
            pre_version,
            op,
            result: match &outcome {
                Ok(()) => AuditResult::Applied,
                Err(r) => AuditResult::Rejected(r.clone()),
            },
        };
        self.log.append(record)?;
        match outcome {
            Ok(()) => {
                next.version = pre_version + 1;
                self.graph = next;
                Ok(self.graph.version)
            }
            Err(rejection) => Err(EngineError::Rejected { seq, rejection }),
        }
    }

    /// Commits an expert or agent edit, reporting rejection in the result
    /// rather than as an error.
    pub fn apply_edit(&mut self, edit: EditOp) -> Result<EditResult, EngineError> {
        match self.commit(AuditOp::Edit(edit)) {
            Ok(version) => Ok(EditResult {
                seq: self.log.next_seq() - 1,
                version,
                result: AuditResult::Applied,
            }),
            Err(EngineError::Rejected { seq, rejection }) => Ok(EditResult {
                seq,
                version: self.graph.version,
                result: AuditResult::Rejected(rejection),
            }),
            Err(other) => Err(other),
        }
    }
}
