//! Items awaiting an expert verdict.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{EdgeId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewKind {
    MergeVerification,
    ExplorationProposal,
    PruneCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewStatus {
    Pending,
    Approved,
    Rejected,
}

/// Why an indirect two-hop path was flagged: `w_ik * w_kj / w_ij < epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvidence {
    pub i: NodeId,
    pub k: NodeId,
    pub j: NodeId,
    pub ratio: f64,
    pub edge_ik: EdgeId,
    pub edge_kj: EdgeId,
    pub edge_ij: EdgeId,
}

impl PruneEvidence {
    pub fn triple(&self) -> (NodeId, NodeId, NodeId) {
        (self.i.clone(), self.k.clone(), self.j.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub kind: ReviewKind,
    /// Edge or node ids (or the graph id for merge verification).
    pub subject_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<PruneEvidence>,
    pub status: ReviewStatus,
    /// For rejected prune candidates: last prune scan the triple is skipped in.
    #[serde(default)]
    pub cooldown_until_turn: u64,
}

impl ReviewItem {
    pub fn pending(item_id: &str, kind: ReviewKind, subject_ids: Vec<String>) -> Self {
        Self {
            item_id: item_id.to_string(),
            kind,
            subject_ids,
            evidence: None,
            status: ReviewStatus::Pending,
            cooldown_until_turn: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cooldown {
    pub triple: (NodeId, NodeId, NodeId),
    pub until_scan: u64,
}

/// Per-graph queue of review items plus prune-scan bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    items: BTreeMap<String, ReviewItem>,
    next_seq: u64,
    /// Number of prune scans run so far.
    pub prune_scans: u64,
    cooldowns: Vec<Cooldown>,
}

impl ReviewQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> String {
        loop {
            self.next_seq += 1;
            let id = format!("r{:06}", self.next_seq);
            if !self.items.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn enqueue(
        &mut self,
        kind: ReviewKind,
        subject_ids: Vec<String>,
        evidence: Option<PruneEvidence>,
    ) -> ReviewItem {
        let id = self.next_id();
        let mut item = ReviewItem::pending(&id, kind, subject_ids);
        item.evidence = evidence;
        self.items.insert(id, item.clone());
        item
    }

    /// Adopts an item created elsewhere (e.g. by a merge), keeping its id.
    pub fn adopt(&mut self, item: ReviewItem) {
        self.items.insert(item.item_id.clone(), item);
    }

    pub fn get(&self, item_id: &str) -> Option<&ReviewItem> {
        self.items.get(item_id)
    }

    pub(crate) fn get_mut(&mut self, item_id: &str) -> Option<&mut ReviewItem> {
        self.items.get_mut(item_id)
    }

    pub fn items(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items.values()
    }

    pub fn pending(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items
            .values()
            .filter(|i| i.status == ReviewStatus::Pending)
    }

    pub fn is_cooling(&self, triple: &(NodeId, NodeId, NodeId), scan: u64) -> bool {
        self.cooldowns
            .iter()
            .any(|c| &c.triple == triple && scan <= c.until_scan)
    }

    pub(crate) fn start_cooldown(&mut self, triple: (NodeId, NodeId, NodeId), until_scan: u64) {
        self.cooldowns.retain(|c| c.triple != triple);
        self.cooldowns.push(Cooldown { triple, until_scan });
    }

    pub fn has_pending_prune(&self, triple: &(NodeId, NodeId, NodeId)) -> bool {
        self.pending().any(|i| {
            i.kind == ReviewKind::PruneCandidate
                && i.evidence.as_ref().is_some_and(|e| &e.triple() == triple)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReviewVerdict {
    Approve,
    Reject,
}
