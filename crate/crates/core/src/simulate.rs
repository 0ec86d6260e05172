//! Turn-budget simulation on a synthetic three-slot triage domain: seeded
//! scripted users talk to a graph grafted from the domain's rules, and each
//! session is scored against a fixed outcome table.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::dialogue::{open_session, DialogueError, StepContext, SystemMove};
use crate::engine::{Engine, EngineError};
use crate::extraction::{Agent, PromptRegistry};
use crate::rulebook::{graft_as, AtomicRule, Hardness, RuleAction, RuleError, RuleSet};

pub const SLOTS: [(&str, &[&str]); 3] = [
    ("symptom", &["dizzy", "fever", "cough"]),
    ("duration", &["short", "long"]),
    ("severity", &["mild", "severe"]),
];

/// The ground truth every session is scored against.
pub fn outcome(symptom: &str, duration: &str, severity: &str) -> String {
    let care = match (duration, severity) {
        (_, "severe") => "urgent care",
        ("long", _) => "clinic visit",
        _ => "home care",
    };
    format!("{care} for {symptom}")
}

/// One Hard routing rule per slot combination.
pub fn triage_rules() -> RuleSet {
    let mut rules = RuleSet::new();
    let mut n = 0;
    for s in SLOTS[0].1 {
        for d in SLOTS[1].1 {
            for v in SLOTS[2].1 {
                n += 1;
                let condition = format!("slot(symptom) == '{s}' and slot(duration) == '{d}' and slot(severity) == '{v}'");
                let rule = AtomicRule::parse(
                    &format!("triage-{n:02}"),
                    &condition,
                    RuleAction::RouteTo(outcome(s, d, v)),
                    Hardness::Hard,
                )
                .expect("domain rule parses");
                rules = rules.add_rule(rule).expect("domain rules are distinct");
            }
        }
    }
    rules
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub users: usize,
    /// Chance per turn that the user adds one slot nobody asked for yet.
    #[serde(default = "default_volunteer")]
    pub volunteer_prob: f64,
    /// Chance per turn that the user says nothing useful.
    #[serde(default = "default_waste")]
    pub waste_prob: f64,
}

fn default_volunteer() -> f64 {
    0.3
}

fn default_waste() -> f64 {
    0.1
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 7,
            users: 200,
            volunteer_prob: default_volunteer(),
            waste_prob: default_waste(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("probabilities must lie in [0, 1]")]
    InvalidScenario,
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
}

struct ScriptedUser {
    profile: [&'static str; 3],
    told: [bool; 3],
    rng: ChaCha8Rng,
}

impl ScriptedUser {
    fn new(scenario: &Scenario, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let profile = SLOTS.map(|(_, values)| values[rng.gen_range(0..values.len())]);
        Self {
            profile,
            told: [false; 3],
            rng,
        }
    }

    fn truth(&self) -> String {
        outcome(self.profile[0], self.profile[1], self.profile[2])
    }

    fn tell(&mut self, i: usize) -> String {
        self.told[i] = true;
        format!("{}={}", SLOTS[i].0, self.profile[i])
    }

    /// Opens with the chief complaint, then answers what is asked, sometimes
    /// wasting a turn and sometimes volunteering one more slot.
    fn utterance(&mut self, pending: Option<&str>, scenario: &Scenario) -> String {
        let mut parts = Vec::new();
        if !self.told[0] {
            parts.push(self.tell(0));
        } else if self.rng.gen_bool(scenario.waste_prob) {
            return String::new();
        } else if let Some(i) = pending.and_then(|p| SLOTS.iter().position(|(name, _)| *name == p)) {
            parts.push(self.tell(i));
        }
        if self.rng.gen_bool(scenario.volunteer_prob) {
            if let Some(i) = (0..3).find(|i| !self.told[*i]) {
                parts.push(self.tell(i));
            }
        }
        parts.join("; ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: usize,
    pub sessions: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Runs every scripted user under each turn budget `1..=max_turns`. A
/// session scores only if it answers correctly within the budget.
pub fn run(scenario: &Scenario, max_turns: usize) -> Result<Vec<BudgetRow>, SimulateError> {
    let probs = [scenario.volunteer_prob, scenario.waste_prob];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(SimulateError::InvalidScenario);
    }
    let rules = triage_rules();
    let graph = graft_as("triage", &rules)?;
    let mut engine = Engine::new(graph, EngineConfig::default())?;
    let snapshot = Arc::new(engine.graph().clone());
    let agent = Agent::reference();
    let registry = PromptRegistry::default();

    let mut rows = Vec::new();
    for budget in 1..=max_turns {
        let mut correct = 0;
        for index in 0..scenario.users {
            let mut user = ScriptedUser::new(scenario, index);
            let mut session = open_session(Arc::clone(&snapshot), &format!("u{index:04}"))?;
            for _ in 0..budget {
                let text = user.utterance(session.state.pending_question.as_deref(), scenario);
                let ctx = StepContext {
                    ruleset: &rules,
                    agent: &agent,
                    registry: &registry,
                    engine: &mut engine,
                };
                match session.step(&text, ctx)? {
                    SystemMove::Answer { terminal, .. } => {
                        if session.graph().nodes[&terminal].label == user.truth() {
                            correct += 1;
                        }
                        break;
                    }
                    SystemMove::Ask { .. } => {}
                    SystemMove::Refuse { .. } | SystemMove::Escalate { .. } => break,
                }
            }
        }
        rows.push(BudgetRow {
            budget,
            sessions: scenario.users,
            correct,
            accuracy: if scenario.users == 0 {
                0.0
            } else {
                correct as f64 / scenario.users as f64
            },
        });
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BudgetRow]) -> String {
    let mut out = String::from("budget,sessions,correct,accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.4}", r.budget, r.sessions, r.correct, r.accuracy);
    }
    out
}
