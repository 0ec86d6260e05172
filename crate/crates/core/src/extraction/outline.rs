//! The chain outline text format exchanged with agents.
//!
//! ```text
//! 1. ask symptom
//! 1.1 fever path @0.8
//! 1.2 dizzy path @0.6
//! 1.2.1 common cold
//! ```
//!
//! Nesting depth is the number of index components. The optional trailing
//! ` @p` is the confidence of the edge into that line's node (default 1.0).

use super::{CandidateChain, ChainLink, ChainStep, ExtractError};

pub fn parse_chain_outline(text: &str) -> Result<CandidateChain, ExtractError> {
    let mut steps: Vec<ChainStep> = Vec::new();
    let mut links: Vec<ChainLink> = Vec::new();
    let mut root: Option<String> = None;

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        if let Some(col) = raw.find('\r') {
            return Err(parse_err(line_no, col + 1, "CR line endings are not allowed"));
        }
        if raw.trim().is_empty() {
            continue;
        }
        let indent = raw.len() - raw.trim_start().len();
        let line = &raw[indent..];

        let index_end = line.find(' ').ok_or_else(|| {
            parse_err(line_no, indent + line.chars().count() + 1, "expected a space after the index")
        })?;
        let index = line[..index_end].strip_suffix('.').unwrap_or(&line[..index_end]);
        let components: Vec<&str> = index.split('.').collect();
        if components
            .iter()
            .any(|c| c.is_empty() || !c.bytes().all(|b| b.is_ascii_digit()))
        {
            return Err(parse_err(line_no, indent + 1, format!("malformed index `{}`", &line[..index_end])));
        }
        let id = components.join(".");

        let mut label = line[index_end..].trim_start();
        let label_col = indent + (line.len() - label.len()) + 1;
        let mut confidence = 1.0;
        if let Some(at) = label.rfind(" @") {
            let number = &label[at + 2..];
            let column = label_col + label[..at + 2].chars().count();
            if !is_decimal(number) {
                return Err(parse_err(line_no, column, format!("invalid confidence `{number}`")));
            }
            let value: f64 = number
                .parse()
                .map_err(|_| parse_err(line_no, column, format!("invalid confidence `{number}`")))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(ExtractError::ConfidenceOutOfRange { line: line_no, value });
            }
            confidence = value;
            label = &label[..at];
        }
        let label = label.trim_end();
        if label.is_empty() {
            return Err(parse_err(line_no, label_col, "empty label"));
        }
        if steps.iter().any(|s| s.id == id) {
            return Err(parse_err(line_no, indent + 1, format!("duplicate index `{id}`")));
        }

        if components.len() == 1 {
            if root.is_some() {
                return Err(parse_err(line_no, indent + 1, "a chain has exactly one top-level step"));
            }
            root = Some(id.clone());
        } else {
            if root.is_none() {
                return Err(parse_err(line_no, indent + 1, "first line must be a top-level step"));
            }
            let parent = components[..components.len() - 1].join(".");
            if !steps.iter().any(|s| s.id == parent) {
                return Err(parse_err(line_no, indent + 1, format!("parent `{parent}` not defined")));
            }
            links.push(ChainLink {
                from: parent,
                to: id.clone(),
                confidence,
            });
        }
        steps.push(ChainStep::new(&id, label));
    }

    let root = root.ok_or_else(|| parse_err(1, 1, "outline has no root step"))?;
    let mut chain = CandidateChain {
        chain_id: "outline".into(),
        source_case_id: String::new(),
        root,
        steps,
        links,
    };
    chain.assign_structural_kinds();
    Ok(chain)
}

/// Renders a chain as an outline, renumbering steps by pre-order position.
pub fn serialize_outline(chain: &CandidateChain) -> String {
    let mut out = String::new();
    let mut stack: Vec<(String, String, Option<f64>)> = vec![(chain.root.clone(), "1".into(), None)];
    while let Some((id, index, confidence)) = stack.pop() {
        let label = chain
            .steps
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.label.as_str())
            .unwrap_or("");
        if index.contains('.') {
            out.push_str(&format!("{index} {label}"));
        } else {
            out.push_str(&format!("{index}. {label}"));
        }
        if let Some(p) = confidence.filter(|p| *p != 1.0) {
            out.push_str(&format!(" @{p}"));
        }
        out.push('\n');
        let children: Vec<&ChainLink> = chain.links.iter().filter(|l| l.from == id).collect();
        for (i, link) in children.iter().enumerate().rev() {
            stack.push((link.to.clone(), format!("{index}.{}", i + 1), Some(link.confidence)));
        }
    }
    out
}

fn is_decimal(s: &str) -> bool {
    let s = s.strip_prefix('-').unwrap_or(s);
    let mut parts = s.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> ExtractError {
    ExtractError::Parse {
        line,
        column,
        message: message.into(),
    }
}
