use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{CanvasGraph, ChainEdge, EdgeId, EdgeStatus, GraphError, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum Issue {
    Cycle { nodes: Vec<NodeId> },
    DanglingEdge { edge: EdgeId, missing: NodeId },
    DanglingRoot { node: NodeId },
    NoRoots,
    SelfLoop { edge: EdgeId },
    ConfidenceOutOfRange { edge: EdgeId, value: f64 },
    InvalidWeight { edge: EdgeId, value: f64 },
    SupportOutOfRange { edge: EdgeId, chain_id: String, value: f64 },
    DuplicateSupport { edge: EdgeId, chain_id: String },
    Unreachable { node: NodeId },
    ShortcutWithoutProvenance { edge: EdgeId },
    ProvenanceWithoutShortcut { edge: EdgeId },
    InvalidNode { node: NodeId, reason: String },
    KeyMismatch { key: String, id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

pub(super) fn validate(g: &CanvasGraph) -> ValidationReport {
    let mut issues = Vec::new();

    for (key, node) in &g.nodes {
        if key != &node.id {
            issues.push(Issue::KeyMismatch {
                key: key.0.clone(),
                id: node.id.0.clone(),
            });
        }
        if let Err(reason) = node.check() {
            issues.push(Issue::InvalidNode {
                node: key.clone(),
                reason,
            });
        }
    }

    for (key, e) in &g.edges {
        if key != &e.id {
            issues.push(Issue::KeyMismatch {
                key: key.0.clone(),
                id: e.id.0.clone(),
            });
        }
        for end in [&e.from, &e.to] {
            if !g.nodes.contains_key(end) {
                issues.push(Issue::DanglingEdge {
                    edge: key.clone(),
                    missing: end.clone(),
                });
            }
        }
        if e.from == e.to {
            issues.push(Issue::SelfLoop { edge: key.clone() });
        }
        if !(0.0..=1.0).contains(&e.confidence) {
            issues.push(Issue::ConfidenceOutOfRange {
                edge: key.clone(),
                value: e.confidence,
            });
        }
        if !(e.weight.is_finite() && e.weight >= 0.0) {
            issues.push(Issue::InvalidWeight {
                edge: key.clone(),
                value: e.weight,
            });
        }
        let mut seen = BTreeSet::new();
        for s in &e.support.entries {
            if !seen.insert(s.chain_id.as_str()) {
                issues.push(Issue::DuplicateSupport {
                    edge: key.clone(),
                    chain_id: s.chain_id.clone(),
                });
            }
            if !(0.0..=1.0).contains(&s.source_confidence) {
                issues.push(Issue::SupportOutOfRange {
                    edge: key.clone(),
                    chain_id: s.chain_id.clone(),
                    value: s.source_confidence,
                });
            }
        }
        let has_provenance = e.shortcut_provenance.as_ref().is_some_and(|p| !p.is_empty());
        if e.status == EdgeStatus::Shortcut && !has_provenance {
            issues.push(Issue::ShortcutWithoutProvenance { edge: key.clone() });
        }
        if e.status != EdgeStatus::Shortcut && e.shortcut_provenance.is_some() {
            issues.push(Issue::ProvenanceWithoutShortcut { edge: key.clone() });
        }
    }

    for r in &g.roots {
        if !g.nodes.contains_key(r) {
            issues.push(Issue::DanglingRoot { node: r.clone() });
        }
    }
    if g.roots.is_empty() && !g.nodes.is_empty() {
        issues.push(Issue::NoRoots);
    }

    for cycle in live_cycles(g) {
        issues.push(Issue::Cycle { nodes: cycle });
    }

    let reachable = reachable(g, g.roots.iter().cloned());
    let mut has_live = BTreeSet::new();
    for e in g.edges.values().filter(|e| e.status.is_live()) {
        has_live.insert(&e.from);
        has_live.insert(&e.to);
    }
    for id in g.nodes.keys() {
        if !reachable.contains(id) && has_live.contains(id) {
            issues.push(Issue::Unreachable { node: id.clone() });
        }
    }

    ValidationReport { issues }
}

fn live_adjacency(g: &CanvasGraph) -> BTreeMap<&NodeId, Vec<&ChainEdge>> {
    let mut adj: BTreeMap<&NodeId, Vec<&ChainEdge>> = BTreeMap::new();
    for e in g.edges.values().filter(|e| e.status.is_live()) {
        adj.entry(&e.from).or_default().push(e);
    }
    adj
}

pub(super) fn reachable(g: &CanvasGraph, starts: impl Iterator<Item = NodeId>) -> BTreeSet<NodeId> {
    let adj = live_adjacency(g);
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut queue: VecDeque<NodeId> = starts.filter(|s| g.nodes.contains_key(s)).collect();
    seen.extend(queue.iter().cloned());
    while let Some(n) = queue.pop_front() {
        for e in adj.get(&n).into_iter().flatten() {
            if seen.insert(e.to.clone()) {
                queue.push_back(e.to.clone());
            }
        }
    }
    seen
}

pub(super) fn live_path(g: &CanvasGraph, from: &NodeId, to: &NodeId) -> Option<Vec<NodeId>> {
    if from == to {
        return Some(vec![from.clone()]);
    }
    let adj = live_adjacency(g);
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([from.clone()]);
    let mut seen = BTreeSet::from([from.clone()]);
    while let Some(n) = queue.pop_front() {
        for e in adj.get(&n).into_iter().flatten() {
            if seen.insert(e.to.clone()) {
                parent.insert(e.to.clone(), n.clone());
                if &e.to == to {
                    let mut path = vec![to.clone()];
                    let mut cur = to;
                    while let Some(p) = parent.get(cur) {
                        path.push(p.clone());
                        cur = p;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(e.to.clone());
            }
        }
    }
    None
}

/// Edge ids of one cycle among edges accepted by `include`, found by a
/// depth-first search in node-id then edge-id order.
pub(crate) fn find_cycle(g: &CanvasGraph, include: impl Fn(&ChainEdge) -> bool) -> Option<Vec<EdgeId>> {
    let mut adj: BTreeMap<&NodeId, Vec<&ChainEdge>> = BTreeMap::new();
    for e in g.edges.values().filter(|e| include(e)) {
        adj.entry(&e.from).or_default().push(e);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut mark: BTreeMap<&NodeId, Mark> = BTreeMap::new();
    for start in g.nodes.keys() {
        if mark.contains_key(start) {
            continue;
        }
        // stack of (node, next edge index); `trail` holds the edges taken
        let mut stack: Vec<(&NodeId, usize)> = vec![(start, 0)];
        let mut trail: Vec<&ChainEdge> = Vec::new();
        mark.insert(start, Mark::Open);
        while let Some((node, idx)) = stack.last().copied() {
            let outs = adj.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if idx < outs.len() {
                stack.last_mut().expect("non-empty").1 += 1;
                let e = outs[idx];
                match mark.get(&e.to) {
                    Some(Mark::Open) => {
                        let pos = stack
                            .iter()
                            .position(|(n, _)| *n == &e.to)
                            .expect("open node is on the stack");
                        let mut cycle: Vec<EdgeId> = trail[pos..].iter().map(|t| t.id.clone()).collect();
                        cycle.push(e.id.clone());
                        return Some(cycle);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        mark.insert(&e.to, Mark::Open);
                        stack.push((&e.to, 0));
                        trail.push(e);
                    }
                }
            } else {
                mark.insert(node, Mark::Done);
                stack.pop();
                trail.pop();
            }
        }
    }
    None
}

/// One node cycle per non-trivial strongly connected component of the
/// live subgraph.
fn live_cycles(g: &CanvasGraph) -> Vec<Vec<NodeId>> {
    let mut sub = g.clone();
    let mut out = Vec::new();
    // Peel off cycles one at a time; each found cycle is reported once per
    // component by dropping all of that component's live edges.
    while let Some(cycle_edges) = find_cycle(&sub, |e| e.status.is_live()) {
        let nodes: Vec<NodeId> = cycle_edges
            .iter()
            .map(|id| sub.edges[id].from.clone())
            .collect();
        let component = strongly_connected(&sub, &nodes[0]);
        sub.edges
            .retain(|_, e| !(component.contains(&e.from) && component.contains(&e.to)));
        out.push(nodes);
    }
    out
}

fn strongly_connected(g: &CanvasGraph, seed: &NodeId) -> BTreeSet<NodeId> {
    let forward = reachable(g, std::iter::once(seed.clone()));
    let mut reversed = g.clone();
    for e in reversed.edges.values_mut() {
        std::mem::swap(&mut e.from, &mut e.to);
    }
    let backward = reachable(&reversed, std::iter::once(seed.clone()));
    forward.intersection(&backward).cloned().collect()
}

pub(super) fn enumerate_paths(
    g: &CanvasGraph,
    from: &NodeId,
    to: &NodeId,
    max_len: usize,
) -> Result<Vec<Vec<NodeId>>, GraphError> {
    for end in [from, to] {
        if !g.nodes.contains_key(end) {
            return Err(GraphError::UnknownNode(end.clone()));
        }
    }
    if from == to {
        return Ok(vec![vec![from.clone()]]);
    }
    let adj = live_adjacency(g);
    let mut out: Vec<Vec<NodeId>> = Vec::new();
    let mut seen: BTreeSet<Vec<NodeId>> = BTreeSet::new();
    let mut path = vec![from.clone()];
    walk(&adj, to, max_len, &mut path, &mut out, &mut seen);
    Ok(out)
}

fn walk(
    adj: &BTreeMap<&NodeId, Vec<&ChainEdge>>,
    target: &NodeId,
    max_len: usize,
    path: &mut Vec<NodeId>,
    out: &mut Vec<Vec<NodeId>>,
    seen: &mut BTreeSet<Vec<NodeId>>,
) {
    if path.len() > max_len {
        return;
    }
    let last = path.last().expect("path starts non-empty").clone();
    for e in adj.get(&last).into_iter().flatten() {
        if path.contains(&e.to) {
            continue;
        }
        path.push(e.to.clone());
        if &e.to == target {
            if seen.insert(path.clone()) {
                out.push(path.clone());
            }
        } else {
            walk(adj, target, max_len, path, out, seen);
        }
        path.pop();
    }
}
