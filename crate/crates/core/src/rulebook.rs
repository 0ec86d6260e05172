//! Expert-written atomic rules: grafted into an initial graph, and used as
//! the gate every generated answer must pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{Condition, ConditionParseError, WorkingMemory};
use crate::graph::{CanvasGraph, ChainNode, EdgeSpec, GraphError, NodeId, NodeKind};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RuleError {
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
    #[error(transparent)]
    Condition(#[from] ConditionParseError),
    #[error("rule `{0}` forbids an empty token list")]
    EmptyForbidList(String),
    #[error("rule `{rule_id}`: {reason}")]
    InvalidRule { rule_id: String, reason: String },
    #[error("rule set has no routing or step rules to graft")]
    EmptyRuleSet,
    #[error("hard rules `{first}` and `{second}` route the same condition to different targets")]
    ConflictingRules { first: String, second: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hardness {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleAction {
    /// The named step must be taken.
    RequireStep(String),
    /// Answers must not contain any of these tokens or phrases.
    ForbidOutputContaining(Vec<String>),
    /// Conclude at the named terminal.
    RouteTo(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicRule {
    pub rule_id: String,
    pub condition: Condition,
    pub action: RuleAction,
    pub hardness: Hardness,
    #[serde(default)]
    pub description: String,
}

impl AtomicRule {
    pub fn new(rule_id: &str, condition: Condition, action: RuleAction, hardness: Hardness) -> Self {
        Self {
            rule_id: rule_id.to_string(),
            condition,
            action,
            hardness,
            description: String::new(),
        }
    }

    /// Parses `condition` with the rule grammar.
    pub fn parse(rule_id: &str, condition: &str, action: RuleAction, hardness: Hardness) -> Result<Self, RuleError> {
        Ok(Self::new(rule_id, Condition::parse(condition)?, action, hardness))
    }

    pub fn check(&self) -> Result<(), RuleError> {
        let invalid = |reason: &str| RuleError::InvalidRule {
            rule_id: self.rule_id.clone(),
            reason: reason.to_string(),
        };
        if self.rule_id.trim().is_empty() {
            return Err(invalid("empty rule id"));
        }
        match &self.action {
            RuleAction::ForbidOutputContaining(tokens) => {
                if tokens.is_empty() {
                    return Err(RuleError::EmptyForbidList(self.rule_id.clone()));
                }
                if tokens.iter().any(|t| tokenize(t).is_empty()) {
                    return Err(invalid("forbidden entries need at least one word character"));
                }
            }
            RuleAction::RequireStep(label) | RuleAction::RouteTo(label) => {
                if label.trim().is_empty() {
                    return Err(invalid("empty target label"));
                }
            }
        }
        Ok(())
    }

    /// True if `tokens` of a candidate text contain one of the forbidden entries.
    fn forbids(&self, tokens: &[String]) -> bool {
        match &self.action {
            RuleAction::ForbidOutputContaining(list) => list.iter().any(|entry| {
                let phrase = tokenize(entry);
                !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase.as_slice())
            }),
            _ => false,
        }
    }
}

/// Ordered rules with unique ids. Serialized as a plain JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AtomicRule>", into = "Vec<AtomicRule>")]
pub struct RuleSet {
    rules: Vec<AtomicRule>,
}

impl TryFrom<Vec<AtomicRule>> for RuleSet {
    type Error = RuleError;

    fn try_from(rules: Vec<AtomicRule>) -> Result<Self, RuleError> {
        rules.into_iter().try_fold(RuleSet::new(), RuleSet::add_rule)
    }
}

impl From<RuleSet> for Vec<AtomicRule> {
    fn from(set: RuleSet) -> Self {
        set.rules
    }
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rules(&self) -> &[AtomicRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, rule_id: &str) -> Option<&AtomicRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    pub fn add_rule(mut self, rule: AtomicRule) -> Result<Self, RuleError> {
        rule.check()?;
        if self.get(&rule.rule_id).is_some() {
            return Err(RuleError::DuplicateRuleId(rule.rule_id));
        }
        self.rules.push(rule);
        Ok(self)
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Lowercased runs of alphanumerics and underscores.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "rule_ids")]
pub enum Verdict {
    Pass,
    PassWithWarnings(Vec<String>),
    Blocked(Vec<String>),
}

impl Verdict {
    pub fn is_blocked(&self) -> bool {
        matches!(self, Verdict::Blocked(_))
    }
}

/// Checks a candidate answer against every forbid rule whose condition holds
/// in `memory`. Hard matches block; Soft matches only warn.
pub fn verify_output(candidate_text: &str, memory: &WorkingMemory, ruleset: &RuleSet) -> Verdict {
    let tokens = tokenize(candidate_text);
    let mut hard = Vec::new();
    let mut soft = Vec::new();
    for rule in &ruleset.rules {
        if rule.condition.eval(memory) && rule.forbids(&tokens) {
            match rule.hardness {
                Hardness::Hard => hard.push(rule.rule_id.clone()),
                Hardness::Soft => soft.push(rule.rule_id.clone()),
            }
        }
    }
    if !hard.is_empty() {
        Verdict::Blocked(hard)
    } else if !soft.is_empty() {
        Verdict::PassWithWarnings(soft)
    } else {
        Verdict::Pass
    }
}

#[derive(Default)]
struct Trie<'a> {
    /// Keyed by (leading slot, conjunct text) so siblings group by slot.
    children: BTreeMap<(String, String), (Condition, Trie<'a>)>,
    steps: Vec<&'a AtomicRule>,
    routes: Vec<&'a AtomicRule>,
}

impl<'a> Trie<'a> {
    fn insert(&mut self, conjuncts: &[&Condition], rule: &'a AtomicRule) {
        match conjuncts.split_first() {
            None => match rule.action {
                RuleAction::RequireStep(_) => self.steps.push(rule),
                _ => self.routes.push(rule),
            },
            Some((first, rest)) => {
                let key = (first.leading_slot().to_string(), first.to_string());
                self.children
                    .entry(key)
                    .or_insert_with(|| ((*first).clone(), Trie::default()))
                    .1
                    .insert(rest, rule);
            }
        }
    }
}

struct Grafter {
    graph: CanvasGraph,
    counters: BTreeMap<char, usize>,
}

impl Grafter {
    fn node(&mut self, kind: NodeKind, label: &str, slot: Option<&str>, rules: &[&AtomicRule], root: bool) -> Result<NodeId, RuleError> {
        let prefix = match kind {
            NodeKind::Decision => 'd',
            NodeKind::Terminal => 't',
            _ => 'a',
        };
        let n = self.counters.entry(prefix).or_insert(0);
        *n += 1;
        let mut node = ChainNode::new(format!("{prefix}{n:03}").as_str(), kind, label);
        node.slot_key = slot.map(str::to_string);
        node.provenance = rules.iter().map(|r| r.rule_id.clone()).collect();
        Ok(self.graph.insert_node(node, root)?)
    }

    fn edge(&mut self, from: &NodeId, to: &NodeId, guard: Option<&Condition>) -> Result<(), RuleError> {
        let mut spec = EdgeSpec::new(from.clone(), to.clone(), 1.0);
        spec.guard = guard.cloned();
        self.graph.insert_edge(spec)?;
        Ok(())
    }

    /// One Decision node per distinct leading slot among the children, then
    /// the guarded child edges below each.
    fn decisions(&mut self, trie: &Trie<'_>, root: bool) -> Result<Vec<NodeId>, RuleError> {
        let mut by_slot: BTreeMap<&str, Vec<&(Condition, Trie<'_>)>> = BTreeMap::new();
        for ((slot, _), child) in &trie.children {
            by_slot.entry(slot).or_default().push(child);
        }
        let mut out = Vec::new();
        for (slot, children) in by_slot {
            let rules: Vec<&AtomicRule> = children.iter().flat_map(|(_, t)| rules_below(t)).collect();
            let d = self.node(NodeKind::Decision, &format!("What is {slot}?"), Some(slot), &rules, root)?;
            for (guard, child) in children {
                self.state(child, &d, guard)?;
            }
            out.push(d);
        }
        Ok(out)
    }

    /// Lays out the state reached after `guard`: required steps, then the
    /// decisions for longer rules, then routes. Stations after the first are
    /// chained by unguarded edges; routes hang off the last station.
    fn state(&mut self, trie: &Trie<'_>, parent: &NodeId, guard: &Condition) -> Result<(), RuleError> {
        let mut stations = Vec::new();
        let mut seen = BTreeSet::new();
        for rule in &trie.steps {
            if let RuleAction::RequireStep(label) = &rule.action {
                if seen.insert(label.as_str()) {
                    let same: Vec<&AtomicRule> = trie.steps.iter().copied().filter(|r| r.action == rule.action).collect();
                    stations.push(self.node(NodeKind::Action, label, None, &same, false)?);
                }
            }
        }
        stations.extend(self.decisions(trie, false)?);

        let mut targets = Vec::new();
        let mut seen = BTreeSet::new();
        for rule in &trie.routes {
            if let RuleAction::RouteTo(label) = &rule.action {
                if seen.insert(label.as_str()) {
                    let same: Vec<&AtomicRule> = trie.routes.iter().copied().filter(|r| r.action == rule.action).collect();
                    targets.push(self.node(NodeKind::Terminal, label, None, &same, false)?);
                }
            }
        }

        match stations.first() {
            None => {
                for t in &targets {
                    self.edge(parent, t, Some(guard))?;
                }
            }
            Some(first) => {
                let first = first.clone();
                self.edge(parent, &first, Some(guard))?;
                for pair in stations.windows(2) {
                    self.edge(&pair[0], &pair[1], None)?;
                }
                let last = stations.last().expect("non-empty").clone();
                for t in &targets {
                    self.edge(&last, t, None)?;
                }
            }
        }
        Ok(())
    }
}

fn rules_below<'a>(trie: &Trie<'a>) -> Vec<&'a AtomicRule> {
    let mut out: Vec<&AtomicRule> = trie.steps.iter().chain(&trie.routes).copied().collect();
    for (_, child) in trie.children.values() {
        out.extend(rules_below(child));
    }
    out
}

/// Builds the initial graph of a rule set; the graph id is `rulebook`.
pub fn graft(ruleset: &RuleSet) -> Result<CanvasGraph, RuleError> {
    graft_as("rulebook", ruleset)
}

/// Turns routing and step rules into a prefix-shared decision graph. Each
/// top-level conjunct of a condition becomes one guarded edge; rules with a
/// common conjunct prefix share the path. Forbid rules are not grafted.
pub fn graft_as(graph_id: &str, ruleset: &RuleSet) -> Result<CanvasGraph, RuleError> {
    let structural: Vec<&AtomicRule> = ruleset
        .rules
        .iter()
        .filter(|r| !matches!(r.action, RuleAction::ForbidOutputContaining(_)))
        .collect();
    if structural.is_empty() {
        return Err(RuleError::EmptyRuleSet);
    }

    let mut routed: BTreeMap<Vec<String>, &AtomicRule> = BTreeMap::new();
    for rule in structural.iter().filter(|r| r.hardness == Hardness::Hard) {
        if let RuleAction::RouteTo(target) = &rule.action {
            let mut key: Vec<String> = rule.condition.conjuncts().iter().map(|c| c.to_string()).collect();
            key.sort();
            match routed.get(&key) {
                Some(first) if first.action != RuleAction::RouteTo(target.clone()) => {
                    return Err(RuleError::ConflictingRules {
                        first: first.rule_id.clone(),
                        second: rule.rule_id.clone(),
                    });
                }
                Some(_) => {}
                None => {
                    routed.insert(key, rule);
                }
            }
        }
    }

    let mut trie = Trie::default();
    for rule in &structural {
        trie.insert(&rule.condition.conjuncts(), rule);
    }
    let mut grafter = Grafter {
        graph: CanvasGraph::new(graph_id),
        counters: BTreeMap::new(),
    };
    let roots = grafter.decisions(&trie, true)?;
    // building top-down transiently roots intermediate decisions
    grafter.graph.roots = roots.into_iter().collect();
    Ok(grafter.graph)
}
