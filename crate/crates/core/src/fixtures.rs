//! Small built-in domains used by the CLI demo, the simulator and tests.

use crate::condition::Condition;
use crate::graph::{CanvasGraph, ChainNode, EdgeSpec, GraphStage, NodeKind};

fn guard(text: &str) -> Condition {
    Condition::parse(text).expect("fixture guard parses")
}

/// Dizziness triage where nearly every dizzy patient has had a cold: the
/// path through the cold check is heavy, the referral branch is rare.
///
/// ```text
/// d_symptom --slot(symptom)==dizzy (w 50)--> a_cold --(w 49)--> d_cold
/// d_cold --has_cold=='yes' (w 49)--> t_rest
/// d_cold --has_cold=='no'  (w 1)---> t_refer
/// d_symptom --symptom=='fever' (w 5)--> t_fever
/// ```
pub fn dizziness_graph() -> CanvasGraph {
    let mut g = CanvasGraph::new("dizziness");
    g.add_root(ChainNode::decision("d_symptom", "What is the main symptom?", "symptom"))
        .expect("fixture");
    for node in [
        ChainNode::new("a_cold", NodeKind::Action, "ask about recent cold symptoms"),
        ChainNode::decision("d_cold", "Has the patient had a cold recently?", "has_cold"),
        ChainNode::new("t_rest", NodeKind::Terminal, "post-viral dizziness: rest and fluids"),
        ChainNode::new("t_refer", NodeKind::Terminal, "refer to a clinic for a balance exam"),
        ChainNode::new("t_fever", NodeKind::Terminal, "treat the fever first"),
    ] {
        g.add_node(node).expect("fixture");
    }
    let edges = [
        ("d_symptom", "a_cold", Some("slot(symptom) == 'dizzy'"), 0.9, 50.0),
        ("a_cold", "d_cold", None, 0.95, 49.0),
        ("d_cold", "t_rest", Some("slot(has_cold) == 'yes'"), 0.9, 49.0),
        ("d_cold", "t_refer", Some("slot(has_cold) == 'no'"), 0.8, 1.0),
        ("d_symptom", "t_fever", Some("slot(symptom) == 'fever'"), 0.85, 5.0),
    ];
    for (from, to, g_text, p, w) in edges {
        let mut spec = EdgeSpec::new(from, to, p).weight(w);
        spec.guard = g_text.map(guard);
        g.insert_edge(spec).expect("fixture");
    }
    g.stage = GraphStage::Active;
    g
}
