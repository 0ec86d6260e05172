//! Consolidating experience: compressing habitual chains into shortcuts,
//! flagging redundant indirect paths, and resolving expert reviews.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::audit::{Actor, AuditOp, EditOp, EditPayload, RejectCode, Rejection};
use crate::condition::Condition;
use crate::config::EngineConfig;
use crate::engine::{Engine, EngineError};
use crate::graph::{CanvasGraph, ChainEdge, EdgeId, EdgeSpec, EdgeStatus, GraphStage, NodeId, SupportSet};
use crate::review::{PruneEvidence, ReviewItem, ReviewKind, ReviewStatus, ReviewVerdict};

/// A chain of heavy edges that can be compressed, valid only at `version`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpCandidate {
    pub chain: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    pub version: u64,
}

type Adjacency<'a> = BTreeMap<&'a NodeId, Vec<&'a ChainEdge>>;

fn active_degrees(graph: &CanvasGraph) -> (Adjacency<'_>, Adjacency<'_>) {
    let mut ins: BTreeMap<&NodeId, Vec<&ChainEdge>> = BTreeMap::new();
    let mut outs: BTreeMap<&NodeId, Vec<&ChainEdge>> = BTreeMap::new();
    for e in graph.edges.values().filter(|e| e.status == EdgeStatus::Active) {
        outs.entry(&e.from).or_default().push(e);
        ins.entry(&e.to).or_default().push(e);
    }
    (ins, outs)
}

/// Maximal chains of at least two Active edges with weight above `tau_w`
/// whose interior nodes have exactly one Active edge in and one out.
/// Chains are made vertex-disjoint greedily in node-id order.
pub fn detect_jump(graph: &CanvasGraph, config: &EngineConfig) -> Vec<JumpCandidate> {
    detect_jump_at(graph, config.tau_w)
}

fn detect_jump_at(graph: &CanvasGraph, tau_w: f64) -> Vec<JumpCandidate> {
    let (ins, outs) = active_degrees(graph);
    let heavy = |e: &ChainEdge| e.weight > tau_w;
    let interior = |n: &NodeId| -> Option<&ChainEdge> {
        match (ins.get(n).map(Vec::as_slice), outs.get(n).map(Vec::as_slice)) {
            (Some([i]), Some([o])) if heavy(i) && heavy(o) => Some(*o),
            _ => None,
        }
    };

    let mut chains: Vec<(Vec<NodeId>, Vec<EdgeId>)> = Vec::new();
    for e in graph.edges.values().filter(|e| e.status == EdgeStatus::Active && heavy(e)) {
        // start only where the chain cannot extend backwards
        if interior(&e.from).is_some() {
            continue;
        }
        let mut nodes = vec![e.from.clone(), e.to.clone()];
        let mut edges = vec![e.id.clone()];
        let mut at = e.to.clone();
        while let Some(next) = interior(&at) {
            nodes.push(next.to.clone());
            edges.push(next.id.clone());
            at = next.to.clone();
        }
        if edges.len() >= 2 {
            chains.push((nodes, edges));
        }
    }
    chains.sort();

    let mut used: BTreeSet<NodeId> = BTreeSet::new();
    let mut out = Vec::new();
    for (nodes, edges) in chains {
        if nodes.iter().any(|n| used.contains(n)) {
            continue;
        }
        used.extend(nodes.iter().cloned());
        out.push(JumpCandidate {
            chain: nodes,
            edges,
            version: graph.version,
        });
    }
    out
}

/// Replaces a current jump candidate by one Shortcut edge and retires the
/// compressed edges. Returns the shortcut's id.
pub(crate) fn compress_in_place(graph: &mut CanvasGraph, chain: &[NodeId], tau_w: f64) -> Result<EdgeId, Rejection> {
    let candidate = detect_jump_at(graph, tau_w)
        .into_iter()
        .find(|c| c.chain == chain)
        .ok_or_else(|| Rejection::new(RejectCode::NotACandidate, "chain is not a current jump candidate"))?;
    let compressed: Vec<ChainEdge> = candidate.edges.iter().map(|id| graph.edges[id].clone()).collect();
    let weight = compressed.iter().map(|e| e.weight).fold(f64::INFINITY, f64::min);
    let confidence = compressed.iter().map(|e| e.confidence).product::<f64>();
    let guard = Condition::all(compressed.iter().filter_map(|e| e.guard.clone()));
    let mut support = SupportSet::default();
    for e in &compressed {
        support.union_with(&e.support);
    }
    let interior = chain[1..chain.len() - 1].to_vec();
    let before: BTreeSet<EdgeId> = graph.edges.keys().cloned().collect();
    let mut spec = EdgeSpec::new(chain[0].clone(), chain[chain.len() - 1].clone(), confidence)
        .status(EdgeStatus::Shortcut)
        .weight(weight);
    spec.guard = guard;
    spec.support = support;
    spec.shortcut_provenance = Some(interior);
    graph.insert_edge(spec)?;
    // back to front, so no interior node is ever left as an orphaned source
    for id in candidate.edges.iter().rev() {
        graph.set_edge_status(id, EdgeStatus::Retired)?;
    }
    Ok(graph
        .edges
        .keys()
        .find(|k| !before.contains(*k))
        .cloned()
        .expect("insert_edge added an edge"))
}

/// Every triple `(i, k, j)` with Active `i->k`, `k->j` and a live direct
/// `i->j` of positive weight where `w_ik * w_kj / w_ij < epsilon`. With
/// parallel edges the smallest ratio is reported.
pub fn prune_candidates(graph: &CanvasGraph, epsilon: f64) -> Vec<PruneEvidence> {
    let mut out: BTreeMap<(NodeId, NodeId, NodeId), PruneEvidence> = BTreeMap::new();
    let mut active_out: BTreeMap<&NodeId, Vec<&ChainEdge>> = BTreeMap::new();
    let mut direct: BTreeMap<(&NodeId, &NodeId), Vec<&ChainEdge>> = BTreeMap::new();
    for e in graph.edges.values() {
        if e.status == EdgeStatus::Active {
            active_out.entry(&e.from).or_default().push(e);
        }
        if e.status.is_live() && e.weight > 0.0 {
            direct.entry((&e.from, &e.to)).or_default().push(e);
        }
    }
    for (i, first_hops) in &active_out {
        for ik in first_hops {
            for kj in active_out.get(&ik.to).into_iter().flatten() {
                for ij in direct.get(&(*i, &kj.to)).into_iter().flatten() {
                    let ratio = ik.weight * kj.weight / ij.weight;
                    if ratio >= epsilon {
                        continue;
                    }
                    let key = ((*i).clone(), ik.to.clone(), kj.to.clone());
                    let better = out.get(&key).is_none_or(|prev| ratio < prev.ratio);
                    if better {
                        out.insert(
                            key,
                            PruneEvidence {
                                i: (*i).clone(),
                                k: ik.to.clone(),
                                j: kj.to.clone(),
                                ratio,
                                edge_ik: ik.id.clone(),
                                edge_kj: kj.id.clone(),
                                edge_ij: ij.id.clone(),
                            },
                        );
                    }
                }
            }
        }
    }
    out.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub item: ReviewItem,
    pub seq: u64,
    pub version: u64,
}

impl Engine {
    pub fn detect_jump(&self) -> Vec<JumpCandidate> {
        detect_jump(self.graph(), self.config())
    }

    /// Compresses a candidate from [`Engine::detect_jump`]. Stale candidates
    /// are refused (and audited) without touching the graph.
    pub fn compress_subpath(&mut self, candidate: &JumpCandidate) -> Result<EdgeId, EngineError> {
        let op = AuditOp::Compress {
            chain: candidate.chain.clone(),
            tau_w: self.config().tau_w,
        };
        if candidate.version != self.version() {
            return Err(self.reject(
                op,
                Rejection::new(
                    RejectCode::NotACandidate,
                    format!("detected at version {}, graph is at {}", candidate.version, self.version()),
                ),
            ));
        }
        let before: BTreeSet<EdgeId> = self.graph().edges.keys().cloned().collect();
        self.commit(op).map_err(|e| match e.rejection() {
            Some(r) if r.code == RejectCode::NotACandidate => EngineError::NotACandidate,
            _ => e,
        })?;
        Ok(self
            .graph()
            .edges
            .keys()
            .find(|k| !before.contains(*k))
            .cloned()
            .expect("compression adds the shortcut"))
    }

    /// Runs one prune scan and queues a review item for each new finding.
    /// Triples under cooldown or already pending are skipped.
    pub fn detect_prune(&mut self) -> Vec<ReviewItem> {
        self.reviews.prune_scans += 1;
        let scan = self.reviews.prune_scans;
        let mut created = Vec::new();
        for evidence in prune_candidates(self.graph(), self.config().epsilon) {
            let triple = evidence.triple();
            if self.reviews.is_cooling(&triple, scan) || self.reviews.has_pending_prune(&triple) {
                continue;
            }
            let subjects = vec![evidence.edge_ik.0.clone(), evidence.edge_kj.0.clone()];
            created.push(self.reviews.enqueue(ReviewKind::PruneCandidate, subjects, Some(evidence)));
        }
        created
    }

    /// Applies an expert verdict. Graph effects and the decision itself are
    /// committed as one audited batch; a rejected batch leaves the item pending.
    pub fn resolve_review(&mut self, item_id: &str, verdict: ReviewVerdict, actor: Actor) -> Result<Resolution, EngineError> {
        let item = self
            .reviews
            .get(item_id)
            .cloned()
            .ok_or_else(|| EngineError::ReviewNotFound(item_id.to_string()))?;
        if item.status != ReviewStatus::Pending {
            return Err(EngineError::AlreadyResolved(item_id.to_string()));
        }
        let edit = |payload| AuditOp::Edit(EditOp::new(payload, actor.clone()));
        let edges = || item.subject_ids.iter().map(|s| EdgeId(s.clone()));
        let ops: Vec<AuditOp> = match (item.kind, verdict) {
            (ReviewKind::PruneCandidate, ReviewVerdict::Approve) => {
                edges().map(|id| edit(EditPayload::RetireEdge { id })).collect()
            }
            (ReviewKind::ExplorationProposal, ReviewVerdict::Approve) => {
                edges().map(|id| edit(EditPayload::PromoteEdge { id })).collect()
            }
            (ReviewKind::ExplorationProposal, ReviewVerdict::Reject) => edges()
                .filter(|id| self.graph().edge(id).is_some_and(|e| e.status == EdgeStatus::Provisional))
                .map(|id| edit(EditPayload::RetireEdge { id }))
                .collect(),
            (ReviewKind::MergeVerification, ReviewVerdict::Approve) => vec![AuditOp::SetStage {
                stage: GraphStage::Active,
            }],
            (ReviewKind::PruneCandidate | ReviewKind::MergeVerification, ReviewVerdict::Reject) => Vec::new(),
        };
        let version = self.commit(AuditOp::Batch {
            reason: format!("review {item_id}: {verdict:?}"),
            actor: actor.clone(),
            ops,
        })?;
        let seq = self.log().next_seq() - 1;

        let cooldown_until = self.reviews.prune_scans + self.config().prune_cooldown_turns;
        let entry = self.reviews.get_mut(item_id).expect("checked above");
        entry.status = match verdict {
            ReviewVerdict::Approve => ReviewStatus::Approved,
            ReviewVerdict::Reject => ReviewStatus::Rejected,
        };
        if item.kind == ReviewKind::PruneCandidate && verdict == ReviewVerdict::Reject {
            entry.cooldown_until_turn = cooldown_until;
            let triple = entry.evidence.as_ref().map(PruneEvidence::triple);
            if let Some(triple) = triple {
                self.reviews.start_cooldown(triple, cooldown_until);
            }
        }
        Ok(Resolution {
            item: self.reviews.get(item_id).cloned().expect("present"),
            seq,
            version,
        })
    }
}
