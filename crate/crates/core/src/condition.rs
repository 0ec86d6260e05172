//! Slot-condition grammar shared by edge guards and rule conditions.
//!
//! ```text
//! expr   := clause {("and" | "or") clause}     "and" binds tighter than "or"
//! clause := "slot(" name ")" op literal | "(" expr ")"
//! op     := == | != | < | <= | > | >=
//! literal:= 'quoted' | "quoted" | decimal number
//! ```
//!
//! A comparison against an unset slot is false. Comparisons across literal
//! types are false, except `!=` which is true.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A slot value or a literal in a condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Num(f64),
    Str(String),
}

impl Literal {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Str(s) => Some(s),
            Literal::Num(_) => None,
        }
    }

    fn partial_cmp_same_type(&self, other: &Literal) -> Option<Ordering> {
        match (self, other) {
            (Literal::Str(a), Literal::Str(b)) => Some(a.cmp(b)),
            (Literal::Num(a), Literal::Num(b)) => a.partial_cmp(b),
            _ => None,
        }
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::Str(s.to_string())
    }
}

impl From<f64> for Literal {
    fn from(v: f64) -> Self {
        Literal::Num(v)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Num(v) => write!(f, "{v}"),
            Literal::Str(s) => {
                f.write_str("'")?;
                for c in s.chars() {
                    match c {
                        '\'' => f.write_str("\\'")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("'")
            }
        }
    }
}

/// Per-session slot assignments.
pub type WorkingMemory = BTreeMap<String, Literal>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn apply(self, left: &Literal, right: &Literal) -> bool {
        match left.partial_cmp_same_type(right) {
            None => self == CmpOp::Ne,
            Some(ord) => match self {
                CmpOp::Eq => ord == Ordering::Equal,
                CmpOp::Ne => ord != Ordering::Equal,
                CmpOp::Lt => ord == Ordering::Less,
                CmpOp::Le => ord != Ordering::Greater,
                CmpOp::Gt => ord == Ordering::Greater,
                CmpOp::Ge => ord != Ordering::Less,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Compare {
        slot: String,
        op: CmpOp,
        literal: Literal,
    },
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("condition parse error at column {column}: {message}")]
pub struct ConditionParseError {
    /// 1-based character column of the offending token.
    pub column: usize,
    pub message: String,
}

impl Condition {
    pub fn compare(slot: &str, op: CmpOp, literal: impl Into<Literal>) -> Self {
        Condition::Compare {
            slot: slot.to_string(),
            op,
            literal: literal.into(),
        }
    }

    pub fn and(self, other: Condition) -> Self {
        Condition::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Condition) -> Self {
        Condition::Or(Box::new(self), Box::new(other))
    }

    pub fn parse(text: &str) -> Result<Self, ConditionParseError> {
        let tokens = lex(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            end_column: text.chars().count() + 1,
        };
        let expr = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ConditionParseError {
                column: tok.column,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(expr)
    }

    pub fn eval(&self, memory: &WorkingMemory) -> bool {
        match self {
            Condition::Compare { slot, op, literal } => memory
                .get(slot)
                .is_some_and(|value| op.apply(value, literal)),
            Condition::And(a, b) => a.eval(memory) && b.eval(memory),
            Condition::Or(a, b) => a.eval(memory) || b.eval(memory),
        }
    }

    /// Every slot name referenced, sorted.
    pub fn slots(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_slots(&mut out);
        out
    }

    fn collect_slots<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Condition::Compare { slot, .. } => {
                out.insert(slot);
            }
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.collect_slots(out);
                b.collect_slots(out);
            }
        }
    }

    /// The first slot mentioned, in reading order.
    pub fn leading_slot(&self) -> &str {
        match self {
            Condition::Compare { slot, .. } => slot,
            Condition::And(a, _) | Condition::Or(a, _) => a.leading_slot(),
        }
    }

    /// Flattens a top-level chain of `and` into its conjuncts, left to right.
    pub fn conjuncts(&self) -> Vec<&Condition> {
        match self {
            Condition::And(a, b) => {
                let mut out = a.conjuncts();
                out.extend(b.conjuncts());
                out
            }
            other => vec![other],
        }
    }

    /// Left-folds conditions with `and`; `None` for an empty input.
    pub fn all<I: IntoIterator<Item = Condition>>(parts: I) -> Option<Condition> {
        parts.into_iter().reduce(Condition::and)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Compare { slot, op, literal } => {
                write!(f, "slot({slot}) {} {literal}", op.symbol())
            }
            Condition::And(a, b) => {
                let left_paren = matches!(**a, Condition::Or(..));
                let right_paren = !matches!(**b, Condition::Compare { .. });
                write_operand(f, a, left_paren)?;
                f.write_str(" and ")?;
                write_operand(f, b, right_paren)
            }
            Condition::Or(a, b) => {
                let right_paren = matches!(**b, Condition::Or(..));
                write_operand(f, a, false)?;
                f.write_str(" or ")?;
                write_operand(f, b, right_paren)
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, c: &Condition, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({c})")
    } else {
        write!(f, "{c}")
    }
}

impl FromStr for Condition {
    type Err = ConditionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::parse(s)
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Condition::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Slot(String),
    Op(CmpOp),
    Lit(Literal),
    And,
    Or,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Slot(name) => format!("slot({name})"),
            TokenKind::Op(op) => format!("operator `{}`", op.symbol()),
            TokenKind::Lit(lit) => format!("literal {lit}"),
            TokenKind::And => "`and`".into(),
            TokenKind::Or => "`or`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn err(column: usize, message: impl Into<String>) -> ConditionParseError {
    ConditionParseError {
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ConditionParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '(' => {
                tokens.push(Token { kind: TokenKind::LParen, column });
                i += 1;
            }
            ')' => {
                tokens.push(Token { kind: TokenKind::RParen, column });
                i += 1;
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, width) = match (c, next) {
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => return Err(err(column, format!("unknown operator starting with `{c}`"))),
                };
                tokens.push(Token { kind: TokenKind::Op(op), column });
                i += width;
            }
            '\'' | '"' => {
                let quote = c;
                let mut value = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(column, "unterminated string literal")),
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some(&e) if e == '\\' || e == '\'' || e == '"' => value.push(e),
                                _ => return Err(err(i + 1, "invalid escape in string literal")),
                            }
                            i += 2;
                        }
                        Some(&q) if q == quote => {
                            i += 1;
                            break;
                        }
                        Some(&other) => {
                            value.push(other);
                            i += 1;
                        }
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Lit(Literal::Str(value)),
                    column,
                });
            }
            '-' | '0'..='9' => {
                let start = i;
                if c == '-' {
                    i += 1;
                }
                let digits_start = i;
                while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                }
                if i == digits_start {
                    return Err(err(column, "expected digits"));
                }
                if chars.get(i) == Some(&'.') {
                    i += 1;
                    let frac_start = i;
                    while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(err(i + 1, "expected digits after decimal point"));
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value: f64 = text
                    .parse()
                    .map_err(|_| err(column, format!("invalid number `{text}`")))?;
                tokens.push(Token {
                    kind: TokenKind::Lit(Literal::Num(value)),
                    column,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while chars
                    .get(i)
                    .is_some_and(|d| d.is_ascii_alphanumeric() || *d == '_')
                {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "and" => tokens.push(Token { kind: TokenKind::And, column }),
                    "or" => tokens.push(Token { kind: TokenKind::Or, column }),
                    "slot" => {
                        let mut j = i;
                        while chars.get(j).is_some_and(|d| d.is_whitespace()) {
                            j += 1;
                        }
                        if chars.get(j) != Some(&'(') {
                            return Err(err(j + 1, "expected `(` after `slot`"));
                        }
                        j += 1;
                        while chars.get(j).is_some_and(|d| d.is_whitespace()) {
                            j += 1;
                        }
                        let name_start = j;
                        if !chars
                            .get(j)
                            .is_some_and(|d| d.is_ascii_alphabetic() || *d == '_')
                        {
                            return Err(err(j + 1, "expected slot name"));
                        }
                        while chars
                            .get(j)
                            .is_some_and(|d| d.is_ascii_alphanumeric() || *d == '_')
                        {
                            j += 1;
                        }
                        let name: String = chars[name_start..j].iter().collect();
                        while chars.get(j).is_some_and(|d| d.is_whitespace()) {
                            j += 1;
                        }
                        if chars.get(j) != Some(&')') {
                            return Err(err(j + 1, "expected `)` after slot name"));
                        }
                        tokens.push(Token {
                            kind: TokenKind::Slot(name),
                            column,
                        });
                        i = j + 1;
                    }
                    other => return Err(err(column, format!("unexpected word `{other}`"))),
                }
            }
            other => return Err(err(column, format!("unexpected character `{other}`"))),
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_column: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        tok
    }

    fn expr(&mut self) -> Result<Condition, ConditionParseError> {
        let mut left = self.conjunction()?;
        while matches!(self.peek(), Some(Token { kind: TokenKind::Or, .. })) {
            self.pos += 1;
            let right = self.conjunction()?;
            left = left.or(right);
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<Condition, ConditionParseError> {
        let mut left = self.clause()?;
        while matches!(self.peek(), Some(Token { kind: TokenKind::And, .. })) {
            self.pos += 1;
            let right = self.clause()?;
            left = left.and(right);
        }
        Ok(left)
    }

    fn clause(&mut self) -> Result<Condition, ConditionParseError> {
        let end = self.end_column;
        match self.next() {
            None => Err(err(end, "unexpected end of condition")),
            Some(Token { kind: TokenKind::LParen, .. }) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token { kind: TokenKind::RParen, .. }) => Ok(inner),
                    Some(tok) => Err(err(tok.column, format!("expected `)`, found {}", tok.kind.describe()))),
                    None => Err(err(end, "expected `)`")),
                }
            }
            Some(Token { kind: TokenKind::Slot(slot), .. }) => {
                let op = match self.next() {
                    Some(Token { kind: TokenKind::Op(op), .. }) => op,
                    Some(tok) => {
                        return Err(err(tok.column, format!("expected operator, found {}", tok.kind.describe())))
                    }
                    None => return Err(err(end, "expected operator")),
                };
                let literal = match self.next() {
                    Some(Token { kind: TokenKind::Lit(lit), .. }) => lit,
                    Some(tok) => {
                        return Err(err(tok.column, format!("expected literal, found {}", tok.kind.describe())))
                    }
                    None => return Err(err(end, "expected literal")),
                };
                Ok(Condition::Compare { slot, op, literal })
            }
            Some(tok) => Err(err(tok.column, format!("expected clause, found {}", tok.kind.describe()))),
        }
    }
}
