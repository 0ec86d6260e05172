//! Consensus merging of candidate chains into one canvas graph:
//! align similar steps into units, aggregate edges per unit pair with the
//! mean of the source confidences, then repair cycles and duplicates.

mod embedding;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::extraction::{CandidateChain, ChainLink, ChainStep, ExtractError};
use crate::graph::{
    CanvasGraph, ChainEdge, ChainNode, EdgeId, EdgeStatus, GraphStage, NodeId, NodeKind, SupportEntry,
    SupportSet,
};
use crate::review::{ReviewItem, ReviewKind};

pub use embedding::{similarity, Embedding, EmbeddingProvider, HashedTokens};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MergeError {
    #[error("label `{0}` has no tokens")]
    EmptyLabel(String),
    #[error("similarity is undefined for the zero embedding")]
    ZeroEmbedding,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no chains to merge")]
    EmptyInput,
    #[error("duplicate chain id `{0}`")]
    DuplicateChainId(String),
    #[error("partition does not cover the chains: {0}")]
    PartitionMismatch(String),
    #[error(transparent)]
    InvalidChain(#[from] ExtractError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Embeds with the default provider at `config.embedding_dim`.
pub fn embed(label: &str, config: &EngineConfig) -> Result<Embedding, MergeError> {
    HashedTokens::new(config.embedding_dim).embed(label)
}

/// `(chain_id, node_id)`.
pub type NodeKey = (String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub unit_id: String,
    pub representative_label: String,
    pub kind: NodeKind,
    pub slot_key: Option<String>,
    pub members: Vec<NodeKey>,
    embedding: Embedding,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentPartition {
    pub unit_of: BTreeMap<NodeKey, String>,
    /// Units in founding order.
    pub units: Vec<Unit>,
}

impl AlignmentPartition {
    pub fn unit(&self, unit_id: &str) -> Option<&Unit> {
        self.units.iter().find(|u| u.unit_id == unit_id)
    }

    pub fn representative_label(&self, unit_id: &str) -> Option<&str> {
        self.unit(unit_id).map(|u| u.representative_label.as_str())
    }
}

fn sorted_chains(chains: &[CandidateChain]) -> Result<Vec<&CandidateChain>, MergeError> {
    if chains.is_empty() {
        return Err(MergeError::EmptyInput);
    }
    let mut sorted: Vec<&CandidateChain> = chains.iter().collect();
    sorted.sort_by(|a, b| a.chain_id.cmp(&b.chain_id));
    for pair in sorted.windows(2) {
        if pair[0].chain_id == pair[1].chain_id {
            return Err(MergeError::DuplicateChainId(pair[0].chain_id.clone()));
        }
    }
    Ok(sorted)
}

pub fn align_nodes(chains: &[CandidateChain], config: &EngineConfig) -> Result<AlignmentPartition, MergeError> {
    align_nodes_with(chains, config, &HashedTokens::new(config.embedding_dim))
}

/// Greedy clustering in `(chain_id, node_id)` order. A step joins the most
/// similar compatible unit at or above `tau_sim`, or founds a new one.
/// Compatible: same kind and slot key, and no member from the same chain.
pub fn align_nodes_with(
    chains: &[CandidateChain],
    config: &EngineConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<AlignmentPartition, MergeError> {
    let mut partition = AlignmentPartition::default();
    for chain in sorted_chains(chains)? {
        let mut steps: Vec<&ChainStep> = chain.steps.iter().collect();
        steps.sort_by(|a, b| a.id.cmp(&b.id));
        for step in steps {
            let embedding = provider.embed(&step.label)?;
            let mut best: Option<(usize, f64)> = None;
            for (idx, unit) in partition.units.iter().enumerate() {
                if unit.kind != step.kind
                    || unit.slot_key != step.slot_key
                    || unit.members.iter().any(|(c, _)| c == &chain.chain_id)
                {
                    continue;
                }
                let sim = similarity(&unit.embedding, &embedding)?;
                if sim >= config.tau_sim && best.is_none_or(|(_, s)| sim > s) {
                    best = Some((idx, sim));
                }
            }
            let key = (chain.chain_id.clone(), step.id.clone());
            let idx = match best {
                Some((idx, _)) => idx,
                None => {
                    partition.units.push(Unit {
                        unit_id: format!("u{:04}", partition.units.len() + 1),
                        representative_label: step.label.clone(),
                        kind: step.kind,
                        slot_key: step.slot_key.clone(),
                        members: Vec::new(),
                        embedding,
                    });
                    partition.units.len() - 1
                }
            };
            partition.units[idx].members.push(key.clone());
            partition.unit_of.insert(key, partition.units[idx].unit_id.clone());
        }
    }
    Ok(partition)
}

/// One node per unit, one Active edge per connected unit pair carrying the
/// mean source confidence. The result may contain cycles.
pub fn aggregate_paths(
    graph_id: &str,
    partition: &AlignmentPartition,
    chains: &[CandidateChain],
) -> Result<CanvasGraph, MergeError> {
    let chains = sorted_chains(chains)?;
    let node_count: usize = chains.iter().map(|c| c.steps.len()).sum();
    if node_count != partition.unit_of.len() {
        return Err(MergeError::PartitionMismatch(format!(
            "{} chain steps, {} partitioned",
            node_count,
            partition.unit_of.len()
        )));
    }
    let unit_of = |chain: &str, node: &str| -> Result<&String, MergeError> {
        partition
            .unit_of
            .get(&(chain.to_string(), node.to_string()))
            .ok_or_else(|| MergeError::PartitionMismatch(format!("step `{node}` of `{chain}` has no unit")))
    };

    let mut graph = CanvasGraph::new(graph_id);
    graph.stage = GraphStage::Provisional;
    for unit in &partition.units {
        let mut node = ChainNode::new(unit.unit_id.as_str(), unit.kind, &unit.representative_label);
        node.slot_key = unit.slot_key.clone();
        node.provenance = unit.members.iter().map(|(c, _)| c.clone()).collect();
        graph.nodes.insert(node.id.clone(), node);
    }

    let mut grouped: BTreeMap<(String, String), Vec<SupportEntry>> = BTreeMap::new();
    for chain in &chains {
        for step in &chain.steps {
            unit_of(&chain.chain_id, &step.id)?;
        }
        graph.roots.insert(NodeId(unit_of(&chain.chain_id, &chain.root)?.clone()));
        for ChainLink { from, to, confidence } in &chain.links {
            let pair = (unit_of(&chain.chain_id, from)?.clone(), unit_of(&chain.chain_id, to)?.clone());
            grouped.entry(pair).or_default().push(SupportEntry {
                chain_id: chain.chain_id.clone(),
                source_edge_path: vec![from.clone(), to.clone()],
                source_confidence: *confidence,
            });
        }
    }

    for ((from, to), mut entries) in grouped {
        entries.sort_by(|a, b| a.chain_id.cmp(&b.chain_id));
        let id = EdgeId(format!("e{:06}", graph.next_edge_seq));
        graph.next_edge_seq += 1;
        graph.edges.insert(
            id.clone(),
            ChainEdge {
                id,
                from: NodeId(from),
                to: NodeId(to),
                confidence: mean_confidence(&entries),
                weight: 0.0,
                guard: None,
                status: EdgeStatus::Active,
                support: SupportSet { entries },
                shortcut_provenance: None,
            },
        );
    }
    Ok(graph)
}

/// Mean of the source confidences, summed in ascending order so the result
/// does not depend on the order the supports arrived in.
pub fn mean_confidence(entries: &[SupportEntry]) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    let mut values: Vec<f64> = entries.iter().map(|e| e.source_confidence).collect();
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    // summation rounding must not push the mean outside [min, max]
    mean.clamp(values[0], values[values.len() - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    Cycle,
    LowConfidenceDuplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedEdge {
    pub edge_id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub confidence: f64,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub merged_graph_id: String,
    pub removed_edges: Vec<RemovedEdge>,
    pub review_items_created: Vec<ReviewItem>,
    /// Consensus confidence of every surviving edge.
    pub consensus: BTreeMap<EdgeId, f64>,
}

/// Collapses parallel edges to the most confident one, then breaks cycles by
/// dropping their least confident edge (ties: greatest edge id). Roots are
/// recomputed as the nodes left without live incoming edges.
pub fn consistency_check(mut graph: CanvasGraph) -> (CanvasGraph, MergeReport) {
    let mut removed = Vec::new();
    let mut take = |graph: &mut CanvasGraph, id: &EdgeId, reason: RemovalReason| {
        if let Some(e) = graph.edges.remove(id) {
            removed.push(RemovedEdge {
                edge_id: e.id,
                from: e.from,
                to: e.to,
                confidence: e.confidence,
                reason,
            });
        }
    };

    let mut by_pair: BTreeMap<(NodeId, NodeId), Vec<EdgeId>> = BTreeMap::new();
    for e in graph.edges.values().filter(|e| e.status.is_live()) {
        by_pair.entry((e.from.clone(), e.to.clone())).or_default().push(e.id.clone());
    }
    for ids in by_pair.into_values().filter(|ids| ids.len() > 1) {
        // ids are ascending, so the first maximum is the smallest id
        let keep = ids
            .iter()
            .fold(None::<&EdgeId>, |best, id| match best {
                Some(b) if graph.edges[b].confidence >= graph.edges[id].confidence => Some(b),
                _ => Some(id),
            })
            .cloned()
            .expect("non-empty group");
        let mut support = graph.edges[&keep].support.clone();
        for id in ids.iter().filter(|id| **id != keep) {
            support.union_with(&graph.edges[id].support);
            take(&mut graph, id, RemovalReason::LowConfidenceDuplicate);
        }
        support.entries.sort_by(|a, b| a.chain_id.cmp(&b.chain_id));
        if let Some(e) = graph.edges.get_mut(&keep) {
            e.support = support;
        }
    }

    while let Some(cycle) = graph.find_live_cycle() {
        let victim = cycle
            .iter()
            .max_by(|a, b| {
                let (ea, eb) = (&graph.edges[*a], &graph.edges[*b]);
                eb.confidence.total_cmp(&ea.confidence).then_with(|| a.cmp(b))
            })
            .cloned()
            .expect("cycles are non-empty");
        take(&mut graph, &victim, RemovalReason::Cycle);
    }

    let has_incoming: BTreeSet<NodeId> = graph.live_edges().map(|e| e.to.clone()).collect();
    graph.roots = graph
        .nodes
        .keys()
        .filter(|n| !has_incoming.contains(*n))
        .cloned()
        .collect();

    let report = MergeReport {
        merged_graph_id: graph.graph_id.clone(),
        removed_edges: removed,
        review_items_created: Vec::new(),
        consensus: graph
            .edges
            .values()
            .map(|e| (e.id.clone(), e.confidence))
            .collect(),
    };
    (graph, report)
}

/// Align, aggregate and repair with the default provider; the graph id is `merged`.
pub fn merge(chains: &[CandidateChain], config: &EngineConfig) -> Result<(CanvasGraph, MergeReport), MergeError> {
    merge_with("merged", chains, config, &HashedTokens::new(config.embedding_dim))
}

/// The full pipeline. The result is Provisional and comes with a
/// MergeVerification review item.
pub fn merge_with(
    graph_id: &str,
    chains: &[CandidateChain],
    config: &EngineConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<(CanvasGraph, MergeReport), MergeError> {
    config.validate()?;
    for chain in chains {
        chain.check()?;
    }
    let partition = align_nodes_with(chains, config, provider)?;
    let draft = aggregate_paths(graph_id, &partition, chains)?;
    let (graph, mut report) = consistency_check(draft);
    report.review_items_created.push(ReviewItem::pending(
        "r000001",
        ReviewKind::MergeVerification,
        vec![graph_id.to_string()],
    ));
    Ok((graph, report))
}

/// Reads a tree-shaped graph back as a chain: one root, every other node
/// with exactly one live parent, no non-live edges. `None` otherwise.
pub fn graph_as_chain(graph: &CanvasGraph) -> Option<CandidateChain> {
    if graph.roots.len() != 1 || graph.edges.values().any(|e| !e.status.is_live()) {
        return None;
    }
    let root = graph.roots.iter().next()?.0.clone();
    let mut parents: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for e in graph.edges.values() {
        *parents.entry(&e.to).or_default() += 1;
    }
    for id in graph.nodes.keys() {
        let expected = usize::from(id.0 != root);
        if parents.get(id).copied().unwrap_or(0) != expected {
            return None;
        }
    }
    let chain = CandidateChain {
        chain_id: graph.graph_id.clone(),
        source_case_id: graph.graph_id.clone(),
        root,
        steps: graph
            .nodes
            .values()
            .map(|n| ChainStep {
                id: n.id.0.clone(),
                kind: n.kind,
                label: n.label.clone(),
                slot_key: n.slot_key.clone(),
            })
            .collect(),
        links: graph
            .edges
            .values()
            .map(|e| ChainLink {
                from: e.from.0.clone(),
                to: e.to.0.clone(),
                confidence: e.confidence,
            })
            .collect(),
    };
    chain.check().ok().map(|_| chain)
}

#[cfg(test)]
mod tests;
