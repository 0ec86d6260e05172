use super::*;
use crate::extraction::parse_chain_outline;
use proptest::prelude::*;

fn cfg() -> EngineConfig {
    EngineConfig::default()
}

fn chain(id: &str, outline: &str) -> CandidateChain {
    parse_chain_outline(outline).unwrap().with_ids(id, id)
}

fn edge(g: &CanvasGraph, from_label: &str, to_label: &str) -> ChainEdge {
    let id_of = |label: &str| g.nodes.values().find(|n| n.label == label).unwrap().id.clone();
    let (f, t) = (id_of(from_label), id_of(to_label));
    g.edges.values().find(|e| e.from == f && e.to == t).unwrap().clone()
}

#[test]
fn embed_is_deterministic_and_order_free() {
    let c = cfg();
    assert_eq!(embed("fever", &c).unwrap(), embed("fever", &c).unwrap());
    assert_eq!(embed("check fever", &c).unwrap(), embed("fever check", &c).unwrap());
    assert_eq!(embed("Check  FEVER", &c).unwrap(), embed("fever check", &c).unwrap());
    assert!(matches!(embed("   ", &c), Err(MergeError::EmptyLabel(_))));
    let norm: f64 = embed("a b c d", &c).unwrap().values().iter().map(|v| v * v).sum();
    assert!((norm.sqrt() - 1.0).abs() <= 1e-9);
}

#[test]
fn similarity_basics() {
    let v = embed("ask about fever", &cfg()).unwrap();
    assert!((similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    assert!((similarity(&v, &-v.clone()).unwrap() + 1.0).abs() < 1e-12);
    let a = Embedding::from_vector(vec![1.0, 0.0, 0.0]).unwrap();
    let b = Embedding::from_vector(vec![0.0, 3.0, 0.0]).unwrap();
    assert_eq!(similarity(&a, &b).unwrap(), 0.0);
    assert_eq!(similarity(&a, &Embedding::zero(3)), Err(MergeError::ZeroEmbedding));
    assert_eq!(Embedding::from_vector(vec![0.0; 4]), Err(MergeError::ZeroEmbedding));
}

/// Cosine of token-count vectors, hashed with a separately written FNV-1a.
fn oracle_similarity(a: &str, b: &str, dim: u64) -> f64 {
    fn bucket(token: &str, dim: u64) -> u64 {
        let mut h: u64 = 14695981039346656037;
        for byte in token.bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(1099511628211);
        }
        h % dim
    }
    let counts = |s: &str| {
        let mut m = BTreeMap::new();
        for t in s.to_lowercase().split_whitespace() {
            *m.entry(bucket(t, dim)).or_insert(0.0) += 1.0;
        }
        m
    };
    let (ca, cb) = (counts(a), counts(b));
    let dot: f64 = ca.iter().map(|(k, v)| v * cb.get(k).copied().unwrap_or(0.0)).sum();
    let na: f64 = ca.values().map(|v: &f64| v * v).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|v: &f64| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn fever_and_contract_breach_stay_apart() {
    let c = cfg();
    let got = similarity(&embed("fever", &c).unwrap(), &embed("contract breach", &c).unwrap()).unwrap();
    let expected = oracle_similarity("fever", "contract breach", 64);
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    assert!(got < c.tau_sim);

    let chains = [chain("a", "1. fever"), chain("b", "1. contract breach")];
    let p = align_nodes(&chains, &c).unwrap();
    assert_ne!(p.unit_of[&("a".into(), "1".into())], p.unit_of[&("b".into(), "1".into())]);
}

#[test]
fn paraphrases_align_into_one_unit() {
    let chains = [chain("a", "1. check fever"), chain("b", "1. fever check")];
    let p = align_nodes(&chains, &cfg()).unwrap();
    assert_eq!(p.units.len(), 1);
    assert_eq!(p.representative_label("u0001"), Some("check fever"));
}

#[test]
fn single_chain_is_identity_partition() {
    let c = chain("a", "1. x\n1.1 x\n1.2 y\n1.2.1 x");
    let p = align_nodes(std::slice::from_ref(&c), &cfg()).unwrap();
    assert_eq!(p.units.len(), 4);
    assert!(p.units.iter().all(|u| u.members.len() == 1));
}

#[test]
fn kinds_never_share_a_unit() {
    // "rest" is an Action in a and a Terminal in b
    let chains = [chain("a", "1. rest\n1.1 sleep"), chain("b", "1. start\n1.1 rest")];
    let p = align_nodes(&chains, &cfg()).unwrap();
    assert_ne!(p.unit_of[&("a".into(), "1".into())], p.unit_of[&("b".into(), "1.1".into())]);
}

#[test]
fn empty_input_rejected() {
    assert_eq!(align_nodes(&[], &cfg()), Err(MergeError::EmptyInput));
    assert!(matches!(merge(&[], &cfg()), Err(MergeError::EmptyInput)));
    let dup = [chain("a", "1. x"), chain("a", "1. y")];
    assert!(matches!(merge(&dup, &cfg()), Err(MergeError::DuplicateChainId(_))));
}

#[test]
fn aggregate_takes_the_mean() {
    let chains = [
        chain("a", "1. start\n1.1 end @0.8"),
        chain("b", "1. start\n1.1 end @0.6"),
        chain("c", "1. start\n1.1 other @0.9"),
    ];
    let (g, _) = merge(&chains, &cfg()).unwrap();
    assert!((edge(&g, "start", "end").confidence - 0.7).abs() < 1e-12);
    assert_eq!(edge(&g, "start", "other").confidence, 0.9);

    let chains = [
        chain("a", "1. start\n1.1 end"),
        chain("b", "1. start\n1.1 end @1.0"),
        chain("c", "1. start\n1.1 end @0"),
    ];
    let (g, _) = merge(&chains, &cfg()).unwrap();
    let e = edge(&g, "start", "end");
    assert!((e.confidence - 2.0 / 3.0).abs() <= 1e-12);
    assert_eq!(e.support.entries.len(), 3);
}

#[test]
fn partition_must_cover_chains() {
    let chains = [chain("a", "1. x\n1.1 y")];
    let p = align_nodes(&chains, &cfg()).unwrap();
    let more = [chain("a", "1. x\n1.1 y"), chain("b", "1. z")];
    assert!(matches!(aggregate_paths("g", &p, &more), Err(MergeError::PartitionMismatch(_))));
}

fn draft(edges: &[(&str, &str, &str, f64)]) -> CanvasGraph {
    let mut g = CanvasGraph::new("d");
    for (_, f, t, _) in edges {
        for n in [f, t] {
            g.nodes
                .entry(NodeId::from(*n))
                .or_insert_with(|| ChainNode::new(*n, NodeKind::Action, n));
        }
    }
    for (id, f, t, p) in edges {
        g.edges.insert(
            EdgeId::from(*id),
            ChainEdge {
                id: EdgeId::from(*id),
                from: NodeId::from(*f),
                to: NodeId::from(*t),
                confidence: *p,
                weight: 0.0,
                guard: None,
                status: EdgeStatus::Active,
                support: SupportSet {
                    entries: vec![SupportEntry {
                        chain_id: format!("c{id}"),
                        source_edge_path: vec![f.to_string(), t.to_string()],
                        source_confidence: *p,
                    }],
                },
                shortcut_provenance: None,
            },
        );
    }
    g
}

#[test]
fn two_cycle_loses_weaker_edge() {
    let (g, report) = consistency_check(draft(&[("e1", "a", "b", 0.9), ("e2", "b", "a", 0.4)]));
    assert_eq!(report.removed_edges.len(), 1);
    assert_eq!(report.removed_edges[0].edge_id, EdgeId::from("e2"));
    assert_eq!(report.removed_edges[0].reason, RemovalReason::Cycle);
    assert!(g.validate().is_empty(), "{:?}", g.validate());
}

#[test]
fn two_cycle_tie_drops_greater_id() {
    let (_, report) = consistency_check(draft(&[("e1", "a", "b", 0.5), ("e2", "b", "a", 0.5)]));
    assert_eq!(report.removed_edges[0].edge_id, EdgeId::from("e2"));
}

#[test]
fn acyclic_draft_unchanged() {
    let d = draft(&[("e1", "a", "b", 0.5), ("e2", "b", "c", 0.7), ("e3", "a", "c", 0.1)]);
    let (g, report) = consistency_check(d.clone());
    assert!(report.removed_edges.is_empty());
    assert_eq!(g.edges, d.edges);
    assert_eq!(g.roots, BTreeSet::from([NodeId::from("a")]));
}

#[test]
fn parallel_duplicates_collapse() {
    let (g, report) = consistency_check(draft(&[("e1", "a", "b", 0.3), ("e2", "a", "b", 0.8)]));
    assert_eq!(g.edges.len(), 1);
    let kept = &g.edges[&EdgeId::from("e2")];
    assert_eq!(kept.support.entries.len(), 2);
    assert_eq!(report.removed_edges[0].reason, RemovalReason::LowConfidenceDuplicate);
    assert_eq!(report.consensus[&EdgeId::from("e2")], 0.8);
}

#[test]
fn merged_cycle_is_repaired() {
    let chains = [chain("a", "1. start\n1.1 left @0.9\n1.1.1 right @0.9\n1.1.1.1 end"), chain("b", "1. start\n1.1 right @0.2\n1.1.1 left @0.3\n1.1.1.1 end")];
    let (g, report) = merge(&chains, &cfg()).unwrap();
    assert!(g.validate().is_empty(), "{:?}", g.validate());
    assert!(report.removed_edges.iter().any(|r| r.reason == RemovalReason::Cycle));
}

#[test]
fn merge_stages_for_verification() {
    let (g, report) = merge(&[chain("a", "1. x\n1.1 y @0.4")], &cfg()).unwrap();
    assert_eq!(g.stage, GraphStage::Provisional);
    assert_eq!(report.review_items_created.len(), 1);
    assert_eq!(report.review_items_created[0].kind, ReviewKind::MergeVerification);
    assert_eq!(report.merged_graph_id, "merged");
}

#[test]
fn singleton_merge_is_isomorphic() {
    let c = chain("a", "1. ask\n1.1 fever @0.8\n1.1.1 flu @0.5\n1.2 dizzy @0.6\n1.2.1 rest");
    let (g, _) = merge(std::slice::from_ref(&c), &cfg()).unwrap();
    assert!(g.validate().is_empty());
    assert!(graph_as_chain(&g).unwrap().is_isomorphic(&c));
}

const VOCAB: &[&str] = &[
    "ask symptom",
    "symptom ask",
    "check fever",
    "fever check",
    "dizziness",
    "common cold",
    "refer to doctor",
    "rest",
    "hydrate",
    "contract breach",
    "flu",
];

fn arb_chain(id: String, max_nodes: usize) -> impl Strategy<Value = CandidateChain> {
    (1..=max_nodes)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
                proptest::collection::vec(0..VOCAB.len(), n),
                proptest::collection::vec((0u32..=20).prop_map(|c| c as f64 / 20.0), n - 1),
            )
        })
        .prop_map(move |(parents, labels, confs)| {
            let mut c = CandidateChain {
                chain_id: id.clone(),
                source_case_id: id.clone(),
                root: "n0".into(),
                steps: labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| ChainStep::new(&format!("n{i}"), VOCAB[*l]))
                    .collect(),
                links: (1..labels.len())
                    .map(|i| ChainLink {
                        from: format!("n{}", parents[i - 1].index(i)),
                        to: format!("n{i}"),
                        confidence: confs[i - 1],
                    })
                    .collect(),
            };
            c.assign_structural_kinds();
            c
        })
}

fn arb_chains(max_chains: usize, max_nodes: usize) -> impl Strategy<Value = Vec<CandidateChain>> {
    (1..=max_chains).prop_flat_map(move |k| (0..k).map(|i| arb_chain(format!("c{i}"), max_nodes)).collect::<Vec<_>>())
}

/// Groups every source link by the unit pair it maps to and averages.
fn oracle_means(chains: &[CandidateChain], p: &AlignmentPartition) -> BTreeMap<(String, String), f64> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for c in chains {
        for l in &c.links {
            let u = p.unit_of[&(c.chain_id.clone(), l.from.clone())].clone();
            let v = p.unit_of[&(c.chain_id.clone(), l.to.clone())].clone();
            groups.entry((u, v)).or_default().push(l.confidence);
        }
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

proptest! {
    #[test]
    fn consensus_matches_oracle(chains in arb_chains(4, 12)) {
        let (g, report) = merge(&chains, &cfg()).unwrap();
        prop_assert!(g.validate().is_empty(), "{:?}", g.validate());
        let p = align_nodes(&chains, &cfg()).unwrap();
        let oracle = oracle_means(&chains, &p);
        for e in g.edges.values() {
            let want = oracle[&(e.from.0.clone(), e.to.0.clone())];
            prop_assert!((e.confidence - want).abs() <= 1e-12);
            let lo = e.support.entries.iter().map(|s| s.source_confidence).fold(f64::INFINITY, f64::min);
            let hi = e.support.entries.iter().map(|s| s.source_confidence).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= e.confidence && e.confidence <= hi);
        }
        for r in &report.removed_edges {
            let want = oracle[&(r.from.0.clone(), r.to.0.clone())];
            prop_assert!((r.confidence - want).abs() <= 1e-12);
        }
        prop_assert_eq!(g.edges.len() + report.removed_edges.len(), oracle.len());
    }

    #[test]
    fn consensus_is_permutation_invariant(chains in arb_chains(5, 8), seed in any::<u64>()) {
        let (g, _) = merge(&chains, &cfg()).unwrap();
        let mut shuffled = chains.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let (h, _) = merge(&shuffled, &cfg()).unwrap();
        prop_assert_eq!(g, h);
    }

    #[test]
    fn identical_copies_merge_like_one(c in arb_chain("base".into(), 10), k in 1usize..5) {
        let (single, _) = merge(std::slice::from_ref(&c), &cfg()).unwrap();
        let copies: Vec<_> = (0..k).map(|i| c.clone().with_ids(&format!("copy{i}"), "base")).collect();
        let (many, _) = merge(&copies, &cfg()).unwrap();
        let a = graph_as_chain(&single).unwrap();
        let b = graph_as_chain(&many).unwrap();
        prop_assert!(a.is_isomorphic(&b));
        prop_assert!(a.is_isomorphic(&c));
    }

    #[test]
    fn merge_is_idempotent_on_trees(chains in arb_chains(3, 8)) {
        let (g, _) = merge(&chains, &cfg()).unwrap();
        if let Some(as_chain) = graph_as_chain(&g) {
            let (again, _) = merge(std::slice::from_ref(&as_chain), &cfg()).unwrap();
            prop_assert!(graph_as_chain(&again).unwrap().is_isomorphic(&as_chain));
        }
    }

    #[test]
    fn similarity_is_symmetric(a in "[a-z]{1,5}( [a-z]{1,5}){0,3}", b in "[a-z]{1,5}( [a-z]{1,5}){0,3}") {
        let (ea, eb) = (embed(&a, &cfg()).unwrap(), embed(&b, &cfg()).unwrap());
        prop_assert_eq!(similarity(&ea, &eb).unwrap(), similarity(&eb, &ea).unwrap());
    }
}
