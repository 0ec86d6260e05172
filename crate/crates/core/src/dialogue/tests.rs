use std::sync::Arc;

use super::*;
use crate::audit::{AuditResult, RejectCode};
use crate::condition::Condition;
use crate::config::EngineConfig;
use crate::evolution::Outcome;
use crate::extraction::{AgentProfile, ScriptedResponder};
use crate::fixtures::dizziness_graph;
use crate::graph::{ChainNode, EdgeSpec, EdgeStatus};
use crate::review::ReviewKind;
use crate::rulebook::{AtomicRule, Hardness, RuleAction};

struct Rig {
    engine: Engine,
    agent: Agent,
    registry: PromptRegistry,
    rules: RuleSet,
}

impl Rig {
    fn new(graph: CanvasGraph) -> Self {
        Self {
            engine: Engine::new(graph, EngineConfig::default()).unwrap(),
            agent: Agent::reference(),
            registry: PromptRegistry::default(),
            rules: RuleSet::new(),
        }
    }

    fn open(&self, id: &str) -> Session {
        open_session(Arc::new(self.engine.graph().clone()), id).unwrap()
    }

    fn step(&mut self, session: &mut Session, text: &str) -> Result<SystemMove, DialogueError> {
        session.step(
            text,
            StepContext {
                ruleset: &self.rules,
                agent: &self.agent,
                registry: &self.registry,
                engine: &mut self.engine,
            },
        )
    }
}

fn ids(v: &[&str]) -> Vec<EdgeId> {
    v.iter().map(|s| EdgeId(s.to_string())).collect()
}

#[test]
fn open_session_preconditions() {
    let mut g = dizziness_graph();
    g.stage = GraphStage::Provisional;
    assert!(matches!(open_session(Arc::new(g), "s"), Err(DialogueError::GraphNotPromoted)));
    assert!(matches!(
        open_session(Arc::new(CanvasGraph::new("empty")), "s"),
        Err(DialogueError::NoRoots | DialogueError::InvalidGraph(_))
    ));

    let mut two = CanvasGraph::new("two");
    two.add_root(ChainNode::new("b", NodeKind::Terminal, "b")).unwrap();
    two.add_root(ChainNode::new("a", NodeKind::Terminal, "a")).unwrap();
    let s = open_session(Arc::new(two), "s").unwrap();
    assert_eq!(s.state.active_node.as_str(), "a");
    assert_eq!(s.state.turn_count, 0);
    assert_eq!(s.state.status, SessionStatus::Open);
}

#[test]
fn scripted_triage_walk() {
    let mut rig = Rig::new(dizziness_graph());
    let mut s = rig.open("s1");
    assert_eq!(
        rig.step(&mut s, "").unwrap(),
        SystemMove::Ask {
            question: "What is the main symptom?".into(),
            slot: "symptom".into()
        }
    );
    // bare value answers the pending question; the walk stops at the next decision
    let mv = rig.step(&mut s, "dizzy").unwrap();
    assert_eq!(
        mv,
        SystemMove::Ask {
            question: "Has the patient had a cold recently?".into(),
            slot: "has_cold".into()
        }
    );
    assert_eq!(s.state.active_node.as_str(), "d_cold");
    assert_eq!(s.state.visited_path, ids(&["e000001", "e000002"]));

    let mv = rig.step(&mut s, "yes").unwrap();
    let SystemMove::Answer { text, terminal, verdict } = mv else {
        panic!("expected an answer, got {mv:?}");
    };
    assert_eq!(terminal.as_str(), "t_rest");
    assert_eq!(text, "Conclusion: post-viral dizziness: rest and fluids.");
    assert_eq!(verdict, Verdict::Pass);
    assert_eq!(s.state.status, SessionStatus::Closed);
    assert_eq!(s.state.turn_count, 3);
    assert_eq!(s.state.visited_path, ids(&["e000001", "e000002", "e000003"]));
    assert_eq!(s.transcript().len(), 3);
    assert!(matches!(
        rig.step(&mut s, "x=1"),
        Err(DialogueError::SessionClosed(SessionStatus::Closed))
    ));
}

#[test]
fn volunteered_slots_skip_questions() {
    let mut rig = Rig::new(dizziness_graph());
    let mut s = rig.open("s1");
    let mv = rig.step(&mut s, "symptom=dizzy; has_cold=no").unwrap();
    assert!(matches!(mv, SystemMove::Answer { ref terminal, .. } if terminal.as_str() == "t_refer"));
    assert_eq!(s.state.turn_count, 1);
}

#[test]
fn hard_forbidden_token_refuses_and_stays_open() {
    let mut rig = Rig::new(dizziness_graph());
    rig.rules = RuleSet::new()
        .add_rule(
            AtomicRule::parse(
                "no-rest",
                "slot(symptom) == 'dizzy'",
                RuleAction::ForbidOutputContaining(vec!["rest".into()]),
                Hardness::Hard,
            )
            .unwrap(),
        )
        .unwrap();
    let mut s = rig.open("s1");
    let mv = rig.step(&mut s, "symptom=dizzy;has_cold=yes").unwrap();
    assert_eq!(
        mv,
        SystemMove::Refuse {
            rule_ids: vec!["no-rest".into()]
        }
    );
    assert_eq!(s.state.status, SessionStatus::Open);
    assert_eq!(s.state.active_node.as_str(), "t_rest");

    let last = rig.engine.log().records().last().unwrap();
    assert!(matches!(last.op, AuditOp::GateRefusal { ref session_id, .. } if session_id == "s1"));
    assert!(matches!(last.result, AuditResult::Rejected(ref r) if r.code == RejectCode::GateBlocked));
    let version = rig.engine.version();
    assert_eq!(rig.step(&mut s, "").unwrap(), mv);
    assert_eq!(rig.engine.version(), version);
}

#[test]
fn soft_rules_warn_but_answer() {
    let mut rig = Rig::new(dizziness_graph());
    rig.rules = RuleSet::new()
        .add_rule(
            AtomicRule::parse(
                "soft-rest",
                "slot(has_cold) == 'yes'",
                RuleAction::ForbidOutputContaining(vec!["fluids".into()]),
                Hardness::Soft,
            )
            .unwrap(),
        )
        .unwrap();
    let mut s = rig.open("s1");
    let mv = rig.step(&mut s, "symptom=dizzy;has_cold=yes").unwrap();
    assert!(matches!(mv, SystemMove::Answer { verdict: Verdict::PassWithWarnings(ref w), .. } if w == &["soft-rest"]));
}

#[test]
fn unparseable_utterance_leaves_state_unchanged() {
    let mut rig = Rig::new(dizziness_graph());
    let mut s = rig.open("s1");
    rig.step(&mut s, "").unwrap();
    let before = s.state.clone();
    let err = rig.step(&mut s, "::::").unwrap_err();
    assert!(matches!(err, DialogueError::UtteranceParse { .. }));
    assert_eq!(s.state, before);
    assert!(matches!(rig.step(&mut s, "1x=2"), Err(DialogueError::UtteranceParse { column: 1, .. })));
    assert_eq!(s.state, before);
}

#[test]
fn utterance_grammar() {
    assert_eq!(
        parse_utterance(" age = 42 ; name='Ann Lee';;", None).unwrap(),
        vec![("age".into(), Literal::Num(42.0)), ("name".into(), Literal::Str("Ann Lee".into()))]
    );
    assert_eq!(parse_utterance("yes", Some("q")).unwrap(), vec![("q".into(), Literal::Str("yes".into()))]);
    assert!(parse_utterance("yes", None).is_err());
    assert!(parse_utterance("::::", None).is_err());
    assert!(parse_utterance("::::", Some("q")).is_err());
    assert!(parse_utterance("a=", None).is_err());
    assert!(matches!(parse_utterance("a=1;b", None), Err(DialogueError::UtteranceParse { column: 5, .. })));
    assert_eq!(parse_utterance("v=1-2", None).unwrap()[0].1, Literal::Str("1-2".into()));
    assert!(parse_utterance("  ", None).unwrap().is_empty());
}

fn hub(edge_guards: &[&str]) -> CanvasGraph {
    let mut g = CanvasGraph::new("hub");
    g.add_root(ChainNode::new("n", NodeKind::Observation, "look")).unwrap();
    for (i, guard) in edge_guards.iter().enumerate() {
        let t = format!("t{i}");
        g.add_node(ChainNode::new(t.as_str(), NodeKind::Terminal, "end")).unwrap();
        g.insert_edge(EdgeSpec::new("n", t.as_str(), 0.5).guard(Condition::parse(guard).unwrap()))
            .unwrap();
    }
    g
}

#[test]
fn clarification_prefers_the_most_referenced_slot() {
    let g = hub(&["slot(b) == 1", "slot(a) == 1 and slot(c) == 2", "slot(a) == 2"]);
    let s = open_session(Arc::new(g.clone()), "s").unwrap();
    assert_eq!(propose_clarification(&s.state, &g).unwrap(), ("a".into(), "What is a?".into()));

    // tie between b and c: alphabetical
    let g = hub(&["slot(c) == 1", "slot(b) == 1"]);
    let s = open_session(Arc::new(g.clone()), "s").unwrap();
    assert_eq!(propose_clarification(&s.state, &g).unwrap().0, "b");

    // known slots are not candidates
    let mut state = s.state.clone();
    state.working_memory.insert("b".into(), Literal::Num(2.0));
    state.working_memory.insert("c".into(), Literal::Num(2.0));
    assert!(matches!(propose_clarification(&state, &g), Err(DialogueError::NothingToAsk(_))));
}

#[test]
fn dead_end_escalates_to_exploration() {
    let mut rig = Rig::new(hub(&["slot(x) == 1"]));
    let mut s = rig.open("s1");
    let mv = rig.step(&mut s, "x=2").unwrap();
    let SystemMove::Escalate { review_item_id } = mv else {
        panic!("expected escalation, got {mv:?}");
    };
    assert_eq!(s.state.status, SessionStatus::AwaitingReview);
    let item = rig.engine.reviews().get(&review_item_id).unwrap();
    assert_eq!(item.kind, ReviewKind::ExplorationProposal);
    assert!(rig
        .engine
        .graph()
        .edges
        .values()
        .any(|e| e.status == EdgeStatus::Provisional && e.from.as_str() == "n"));
    // the session's snapshot is untouched
    assert_eq!(s.graph().version, 1);
    assert!(matches!(
        rig.step(&mut s, ""),
        Err(DialogueError::SessionClosed(SessionStatus::AwaitingReview))
    ));
}

#[test]
fn agent_failure_at_answer_leaves_session_unchanged() {
    let mut rig = Rig::new(dizziness_graph());
    rig.agent = Agent::new(AgentProfile::new("down", "default"), Arc::new(crate::extraction::UnavailableResponder));
    let mut s = rig.open("s1");
    let before = s.state.clone();
    assert!(matches!(rig.step(&mut s, "symptom=fever"), Err(DialogueError::Agent(_))));
    assert_eq!(s.state, before);
    assert!(s.transcript().is_empty());
}

#[test]
fn same_inputs_same_moves() {
    let run = || {
        let mut rig = Rig::new(dizziness_graph());
        rig.agent = Agent::new(AgentProfile::new("a", "default"), Arc::new(ScriptedResponder("ok".into())));
        let mut s = rig.open("s");
        for u in ["", "dizzy", "no"] {
            rig.step(&mut s, u).unwrap();
        }
        s.transcript_json()
    };
    assert_eq!(run(), run());
}

fn two_edge_path() -> CanvasGraph {
    let mut g = CanvasGraph::new("fb");
    g.add_root(ChainNode::decision("d", "x?", "x")).unwrap();
    g.add_node(ChainNode::new("a", NodeKind::Action, "do")).unwrap();
    g.add_node(ChainNode::new("t", NodeKind::Terminal, "done")).unwrap();
    g.insert_edge(EdgeSpec::new("d", "a", 0.7).guard(Condition::parse("slot(x) == 1").unwrap()))
        .unwrap();
    g.insert_edge(EdgeSpec::new("a", "t", 0.9)).unwrap();
    g
}

fn answered(rig: &mut Rig) -> Session {
    let mut s = rig.open("s1");
    rig.step(&mut s, "x=1").unwrap();
    assert_eq!(s.state.status, SessionStatus::Closed);
    s
}

#[test]
fn success_feedback_reinforces_the_path() {
    let mut rig = Rig::new(two_edge_path());
    let s = answered(&mut rig);
    let fb = Feedback {
        session_id: "s1".into(),
        visited_edge_ids: s.state.visited_path.clone(),
        outcome: Outcome::Success,
        expert_flag: false,
    };
    let summary = s.integrate_feedback(&fb, &mut rig.engine).unwrap();
    let [first, second] = summary.entries.as_slice() else {
        panic!("two entries expected");
    };
    assert!((first.old_p - 0.7).abs() < 1e-12 && (first.new_p - 0.8).abs() < 1e-12);
    assert_eq!((second.old_p, second.new_p), (0.9, 1.0));
    assert_eq!((first.old_w, first.new_w, second.new_w), (0.0, 1.0, 1.0));
}

#[test]
fn neutral_feedback_changes_nothing_but_is_audited() {
    let mut rig = Rig::new(two_edge_path());
    let s = answered(&mut rig);
    let before = rig.engine.graph().edges.clone();
    let seq = rig.engine.log().next_seq();
    let fb = Feedback {
        session_id: "s1".into(),
        visited_edge_ids: s.state.visited_path.clone(),
        outcome: Outcome::Neutral,
        expert_flag: false,
    };
    s.integrate_feedback(&fb, &mut rig.engine).unwrap();
    assert_eq!(rig.engine.graph().edges, before);
    assert_eq!(rig.engine.log().next_seq(), seq + 4);
}

#[test]
fn feedback_must_match_the_visited_path() {
    let mut rig = Rig::new(two_edge_path());
    let s = answered(&mut rig);
    let fb = Feedback {
        session_id: "s1".into(),
        visited_edge_ids: ids(&["e000002"]),
        outcome: Outcome::Success,
        expert_flag: false,
    };
    assert!(matches!(s.integrate_feedback(&fb, &mut rig.engine), Err(DialogueError::PathMismatch)));

    let open = rig.open("s2");
    let fb = Feedback {
        visited_edge_ids: Vec::new(),
        ..fb
    };
    assert!(matches!(open.integrate_feedback(&fb, &mut rig.engine), Err(DialogueError::SessionNotFinished)));
}

#[test]
fn compressed_graph_takes_the_shortcut() {
    let mut rig = Rig::new(dizziness_graph());
    let mut before = rig.open("s0");
    rig.step(&mut before, "symptom=dizzy;has_cold=yes").unwrap();

    let candidate = rig.engine.detect_jump().pop().unwrap();
    let shortcut = rig.engine.compress_subpath(&candidate).unwrap();
    assert_eq!(rig.engine.graph().roots.iter().map(NodeId::as_str).collect::<Vec<_>>(), ["d_symptom"]);
    let mut after = rig.open("s1");
    let mv = rig.step(&mut after, "symptom=dizzy;has_cold=yes").unwrap();
    assert!(matches!(mv, SystemMove::Answer { ref terminal, .. } if terminal.as_str() == "t_rest"));
    assert_eq!(before.state.visited_path.len(), 3);
    assert_eq!(after.state.visited_path.len(), 2);
    assert_eq!(after.state.visited_path[0], shortcut);
}
