use super::*;
use proptest::prelude::*;

fn n(id: &str) -> NodeId {
    NodeId::from(id)
}

fn chain(ids: &[&str]) -> CanvasGraph {
    let mut g = CanvasGraph::new("g");
    g.add_root(ChainNode::new(ids[0], NodeKind::Action, ids[0])).unwrap();
    for id in &ids[1..] {
        g.add_node(ChainNode::new(*id, NodeKind::Action, id)).unwrap();
    }
    for w in ids.windows(2) {
        g.add_edge(&n(w[0]), &n(w[1]), 0.9, EdgeStatus::Active).unwrap();
    }
    g
}

#[test]
fn add_node_to_empty_graph() {
    let mut g = CanvasGraph::new("g");
    g.add_node(ChainNode::new("t", NodeKind::Terminal, "diagnose cold")).unwrap();
    assert_eq!(g.nodes.len(), 1);
    assert_eq!(g.version, 1);
    assert!(g.validate().is_empty());
}

#[test]
fn duplicate_and_invalid_nodes() {
    let mut g = CanvasGraph::new("g");
    g.add_node(ChainNode::new("t", NodeKind::Terminal, "x")).unwrap();
    assert_eq!(
        g.add_node(ChainNode::new("t", NodeKind::Terminal, "y")),
        Err(GraphError::DuplicateId("t".into()))
    );
    assert!(matches!(
        g.add_node(ChainNode::new("d", NodeKind::Decision, "ask")),
        Err(GraphError::InvalidNode { .. })
    ));
    assert!(matches!(
        g.add_node(ChainNode::new("e", NodeKind::Action, "  ")),
        Err(GraphError::InvalidNode { .. })
    ));
    assert_eq!(g.version, 1);
}

#[test]
fn add_edge_starts_at_zero_weight() {
    let mut g = CanvasGraph::new("g");
    g.add_root(ChainNode::new("A", NodeKind::Action, "a")).unwrap();
    g.add_node(ChainNode::new("B", NodeKind::Terminal, "b")).unwrap();
    let e = g.add_edge(&n("A"), &n("B"), 0.9, EdgeStatus::Active).unwrap();
    assert_eq!(g.edges[&e].weight, 0.0);
    assert_eq!(g.edges[&e].confidence, 0.9);
}

#[test]
fn two_cycle_rejected_but_provisional_accepted() {
    let mut g = chain(&["A", "B"]);
    let before = g.version;
    let err = g.add_edge(&n("B"), &n("A"), 0.5, EdgeStatus::Active).unwrap_err();
    assert_eq!(err, GraphError::CycleRejected { cycle: vec![n("A"), n("B")] });
    assert_eq!(g.version, before);
    g.add_edge(&n("B"), &n("A"), 0.5, EdgeStatus::Provisional).unwrap();
    assert!(g.validate().is_empty());
}

#[test]
fn promoting_a_cycle_closing_edge_is_rejected() {
    let mut g = chain(&["A", "B"]);
    let e = g.add_edge(&n("B"), &n("A"), 0.5, EdgeStatus::Provisional).unwrap();
    assert!(matches!(
        g.set_edge_status(&e, EdgeStatus::Active),
        Err(GraphError::CycleRejected { .. })
    ));
}

#[test]
fn edge_errors() {
    let mut g = chain(&["A", "B"]);
    assert_eq!(
        g.add_edge(&n("A"), &n("Z"), 0.5, EdgeStatus::Active),
        Err(GraphError::UnknownNode(n("Z")))
    );
    assert_eq!(
        g.add_edge(&n("A"), &n("B"), 1.5, EdgeStatus::Active),
        Err(GraphError::ConfidenceOutOfRange(1.5))
    );
    assert_eq!(
        g.add_edge(&n("A"), &n("A"), 0.5, EdgeStatus::Provisional),
        Err(GraphError::SelfLoop(n("A")))
    );
    assert!(g.add_edge(&n("A"), &n("B"), 0.5, EdgeStatus::Shortcut).is_err());
}

#[test]
fn remove_node_cascades_to_incident_edges() {
    let mut g = chain(&["A", "B", "C"]);
    let v = g.version;
    let report = g.remove_element(&ElementRef::Node(n("B"))).unwrap();
    assert_eq!(report.nodes, vec![n("B")]);
    assert_eq!(report.edges, vec![EdgeId::from("e000001"), EdgeId::from("e000002")]);
    assert_eq!(g.version, v + 1);
    assert!(g.validate().is_empty());
}

#[test]
fn remove_single_edge_leaves_nodes() {
    let mut g = chain(&["A", "B"]);
    let report = g.remove_element(&ElementRef::Edge("e000001".into())).unwrap();
    assert_eq!(report.edges, vec![EdgeId::from("e000001")]);
    assert!(report.nodes.is_empty());
    assert_eq!(g.nodes.len(), 2);
    assert_eq!(
        g.remove_element(&ElementRef::Edge("nope".into())),
        Err(GraphError::NotFound("nope".into()))
    );
}

#[test]
fn orphaned_subtree_head_becomes_root() {
    let mut g = chain(&["A", "B", "C"]);
    let report = g.remove_element(&ElementRef::Edge("e000001".into())).unwrap();
    assert_eq!(report.new_roots, vec![n("B")]);
    assert!(g.validate().is_empty());
}

#[test]
fn validate_reports_range_violation_and_cycle() {
    let mut g = chain(&["A", "B", "C"]);
    g.edges.get_mut(&EdgeId::from("e000001")).unwrap().confidence = 1.5;
    let report = g.validate();
    assert!(report
        .issues
        .iter()
        .any(|i| matches!(i, Issue::ConfidenceOutOfRange { value, .. } if *value == 1.5)));

    let mut g = chain(&["A", "B", "C"]);
    g.edges.insert(
        "x".into(),
        ChainEdge {
            id: "x".into(),
            from: n("C"),
            to: n("A"),
            confidence: 0.5,
            weight: 0.0,
            guard: None,
            status: EdgeStatus::Active,
            support: SupportSet::default(),
            shortcut_provenance: None,
        },
    );
    let cycles: Vec<_> = g
        .validate()
        .issues
        .into_iter()
        .filter_map(|i| match i {
            Issue::Cycle { nodes } => Some(nodes),
            _ => None,
        })
        .collect();
    assert_eq!(cycles.len(), 1);
    let mut nodes = cycles[0].clone();
    nodes.sort();
    assert_eq!(nodes, vec![n("A"), n("B"), n("C")]);
}

#[test]
fn validate_flags_shortcut_without_provenance() {
    let mut g = chain(&["A", "B"]);
    g.edges.get_mut(&EdgeId::from("e000001")).unwrap().status = EdgeStatus::Shortcut;
    assert!(g
        .validate()
        .issues
        .contains(&Issue::ShortcutWithoutProvenance { edge: "e000001".into() }));
}

#[test]
fn diamond_has_two_paths_and_trivial_self_path() {
    let mut g = CanvasGraph::new("g");
    g.add_root(ChainNode::new("A", NodeKind::Action, "a")).unwrap();
    for id in ["B", "C", "D"] {
        g.add_node(ChainNode::new(id, NodeKind::Action, id)).unwrap();
    }
    for (f, t) in [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")] {
        g.add_edge(&n(f), &n(t), 1.0, EdgeStatus::Active).unwrap();
    }
    let paths = g.enumerate_paths(&n("A"), &n("D"), 5).unwrap();
    assert_eq!(paths, vec![vec![n("A"), n("B"), n("D")], vec![n("A"), n("C"), n("D")]]);
    assert_eq!(g.enumerate_paths(&n("A"), &n("A"), 1).unwrap(), vec![vec![n("A")]]);
    assert_eq!(g.enumerate_paths(&n("A"), &n("D"), 1).unwrap().len(), 0);
    assert!(g.enumerate_paths(&n("A"), &n("Q"), 3).is_err());
}

/// Independent recursive count of simple paths over an explicit adjacency list.
fn dfs_count(adj: &BTreeMap<String, Vec<String>>, at: &str, to: &str, budget: usize) -> usize {
    if at == to {
        return 1;
    }
    if budget == 0 {
        return 0;
    }
    adj.get(at)
        .map(|outs| outs.iter().map(|o| dfs_count(adj, o, to, budget - 1)).sum())
        .unwrap_or(0)
}

#[test]
fn layered_dag_path_count_matches_dfs_oracle() {
    // source -> 3 layers of 2 nodes, fully connected between layers -> sink
    let mut g = CanvasGraph::new("g");
    let mut adj: BTreeMap<String, Vec<String>> = BTreeMap::new();
    g.add_root(ChainNode::new("s", NodeKind::Action, "s")).unwrap();
    g.add_node(ChainNode::new("t", NodeKind::Terminal, "t")).unwrap();
    let layers: Vec<Vec<String>> = (0..3)
        .map(|l| (0..2).map(|b| format!("l{l}b{b}")).collect())
        .collect();
    for layer in &layers {
        for id in layer {
            g.add_node(ChainNode::new(id.as_str(), NodeKind::Action, id)).unwrap();
        }
    }
    let mut connect = |g: &mut CanvasGraph, a: &str, b: &str| {
        g.add_edge(&n(a), &n(b), 1.0, EdgeStatus::Active).unwrap();
        adj.entry(a.to_string()).or_default().push(b.to_string());
    };
    for id in &layers[0] {
        connect(&mut g, "s", id);
    }
    for pair in layers.windows(2) {
        for a in &pair[0] {
            for b in &pair[1] {
                connect(&mut g, a, b);
            }
        }
    }
    for id in &layers[2] {
        connect(&mut g, id, "t");
    }
    let expected = dfs_count(&adj, "s", "t", 10);
    assert_eq!(expected, 8);
    assert_eq!(g.enumerate_paths(&n("s"), &n("t"), 10).unwrap().len(), expected);
}

/// Independent reachability check over a plain edge list.
fn oracle_reaches(edges: &[(usize, usize)], from: usize, to: usize) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(x) = stack.pop() {
        if x == to {
            return true;
        }
        if seen.insert(x) {
            stack.extend(edges.iter().filter(|(a, _)| *a == x).map(|(_, b)| *b));
        }
    }
    false
}

#[derive(Debug, Clone)]
enum Op {
    AddNode(usize),
    AddEdge(usize, usize, bool),
    RemoveNode(usize),
    RemoveEdge(usize),
    Promote(usize),
    Retire(usize),
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => (0usize..12).prop_map(Op::AddNode),
        5 => (0usize..12, 0usize..12, any::<bool>()).prop_map(|(a, b, l)| Op::AddEdge(a, b, l)),
        1 => (0usize..12).prop_map(Op::RemoveNode),
        1 => (0usize..40).prop_map(Op::RemoveEdge),
        2 => (0usize..40).prop_map(Op::Promote),
        1 => (0usize..40).prop_map(Op::Retire),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_ops_keep_graph_valid_and_acyclic(ops in proptest::collection::vec(arb_op(), 1..60)) {
        let mut g = CanvasGraph::new("g");
        for op in ops {
            let before = g.version;
            let committed = match op {
                Op::AddNode(i) => g.add_node(ChainNode::new(format!("n{i:02}"), NodeKind::Action, "x")).is_ok(),
                Op::AddEdge(a, b, live) => {
                    let (a, b) = (n(&format!("n{a:02}")), n(&format!("n{b:02}")));
                    let status = if live { EdgeStatus::Active } else { EdgeStatus::Provisional };
                    let live_edges: Vec<(String, String)> =
                        g.live_edges().map(|e| (e.from.0.clone(), e.to.0.clone())).collect();
                    let res = g.add_edge(&a, &b, 0.5, status);
                    if g.nodes.contains_key(&a) && g.nodes.contains_key(&b) && a != b && live {
                        let idx = |s: &str| s[1..].parse::<usize>().unwrap();
                        let plain: Vec<(usize, usize)> =
                            live_edges.iter().map(|(x, y)| (idx(x), idx(y))).collect();
                        let cyclic = oracle_reaches(&plain, idx(&b.0), idx(&a.0));
                        prop_assert_eq!(res.is_err(), cyclic);
                    }
                    res.is_ok()
                }
                Op::RemoveNode(i) => g.remove_element(&ElementRef::Node(n(&format!("n{i:02}")))).is_ok(),
                Op::RemoveEdge(i) => match g.edges.keys().nth(i).cloned() {
                    Some(id) => g.remove_element(&ElementRef::Edge(id)).is_ok(),
                    None => false,
                },
                Op::Promote(i) => match g.edges.keys().nth(i).cloned() {
                    Some(id) => g.set_edge_status(&id, EdgeStatus::Active).is_ok(),
                    None => false,
                },
                Op::Retire(i) => match g.edges.keys().nth(i).cloned() {
                    Some(id) => g.set_edge_status(&id, EdgeStatus::Retired).is_ok(),
                    None => false,
                },
            };
            prop_assert_eq!(g.version, before + u64::from(committed));
            let report = g.validate();
            prop_assert!(report.is_empty(), "{:?}", report);
        }
    }

    #[test]
    fn enumerated_paths_are_real_and_distinct(ops in proptest::collection::vec(arb_op(), 1..60), a in 0usize..12, b in 0usize..12) {
        let mut g = CanvasGraph::new("g");
        for op in ops {
            match op {
                Op::AddNode(i) => { let _ = g.add_node(ChainNode::new(format!("n{i:02}"), NodeKind::Action, "x")); }
                Op::AddEdge(x, y, _) => { let _ = g.add_edge(&n(&format!("n{x:02}")), &n(&format!("n{y:02}")), 0.5, EdgeStatus::Active); }
                _ => {}
            }
        }
        let (a, b) = (n(&format!("n{a:02}")), n(&format!("n{b:02}")));
        if let Ok(paths) = g.enumerate_paths(&a, &b, 6) {
            let distinct: BTreeSet<_> = paths.iter().cloned().collect();
            prop_assert_eq!(distinct.len(), paths.len());
            for p in &paths {
                prop_assert_eq!(p.first(), Some(&a));
                prop_assert_eq!(p.last(), Some(&b));
                for w in p.windows(2) {
                    prop_assert!(g.live_edges().any(|e| e.from == w[0] && e.to == w[1]));
                }
            }
        }
    }
}
