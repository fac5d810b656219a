//! Predicate AST, parser and canonical printer.
//!
//! ```text
//! expr       := or_expr
//! or_expr    := and_expr {"or" and_expr}
//! and_expr   := term {"and" term}
//! term       := "not" term | "(" expr ")" | "true" | "false" | comparison
//! comparison := path op literal
//! op         := "=" | "!=" | "<" | "<=" | ">" | ">=" | "contains" | "starts_with"
//! path       := ident {"." ident}
//! literal    := number | "'" chars "'" | "true" | "false"
//! ```
//!
//! Keywords are case-insensitive; paths and string literals are not. Inside a
//! string literal `\'` is a quote and `\\` a backslash. A bare `true` is the
//! empty conjunction and a bare `false` the empty disjunction.

use std::fmt;

use super::SubsetError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldPath {
    TrueLabel,
    PredictedLabel,
    /// `true_label == predicted_label`.
    Correct,
    /// Score of the named class.
    Score(String),
    Text,
    Feature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FieldType {
    Str,
    Num,
    Bool,
    /// Feature values are typed per instance.
    Dynamic,
}

impl FieldPath {
    pub(crate) fn field_type(&self) -> FieldType {
        match self {
            FieldPath::TrueLabel | FieldPath::PredictedLabel | FieldPath::Text => FieldType::Str,
            FieldPath::Correct => FieldType::Bool,
            FieldPath::Score(_) => FieldType::Num,
            FieldPath::Feature(_) => FieldType::Dynamic,
        }
    }

    fn from_segments(segments: &[String]) -> Option<FieldPath> {
        match segments {
            [one] => match one.as_str() {
                "true_label" => Some(FieldPath::TrueLabel),
                "predicted_label" => Some(FieldPath::PredictedLabel),
                "correct" => Some(FieldPath::Correct),
                "text" => Some(FieldPath::Text),
                _ => None,
            },
            [head, rest @ ..] if !rest.is_empty() => {
                let name = rest.join(".");
                match head.as_str() {
                    "score" => Some(FieldPath::Score(name)),
                    "feature" => Some(FieldPath::Feature(name)),
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldPath::TrueLabel => f.write_str("true_label"),
            FieldPath::PredictedLabel => f.write_str("predicted_label"),
            FieldPath::Correct => f.write_str("correct"),
            FieldPath::Score(c) => write!(f, "score.{c}"),
            FieldPath::Text => f.write_str("text"),
            FieldPath::Feature(n) => write!(f, "feature.{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    fn is_ordering(self) -> bool {
        !matches!(self, CompareOp::Eq | CompareOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Str(String),
    Bool(bool),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Bool(b) => write!(f, "{b}"),
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

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Compare {
        path: FieldPath,
        op: CompareOp,
        value: Literal,
    },
    Contains {
        path: FieldPath,
        needle: String,
    },
    StartsWith {
        path: FieldPath,
        prefix: String,
    },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn compare(path: FieldPath, op: CompareOp, value: Literal) -> Self {
        Predicate::Compare { path, op, value }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Predicate) -> Self {
        Predicate::Not(Box::new(inner))
    }

    /// Every field path referenced by the predicate.
    pub fn paths(&self) -> Vec<&FieldPath> {
        let mut out = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths<'a>(&'a self, out: &mut Vec<&'a FieldPath>) {
        match self {
            Predicate::Compare { path, .. }
            | Predicate::Contains { path, .. }
            | Predicate::StartsWith { path, .. } => out.push(path),
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.collect_paths(out)),
            Predicate::Not(p) => p.collect_paths(out),
        }
    }

    fn is_connective(&self) -> bool {
        match self {
            Predicate::And(ps) | Predicate::Or(ps) => ps.len() > 1,
            _ => false,
        }
    }
}

fn write_joined(f: &mut fmt::Formatter<'_>, items: &[Predicate], sep: &str) -> fmt::Result {
    for (i, p) in items.iter().enumerate() {
        if i > 0 {
            write!(f, " {sep} ")?;
        }
        if p.is_connective() {
            write!(f, "({p})")?;
        } else {
            write!(f, "{p}")?;
        }
    }
    Ok(())
}

/// Canonical source form. Nested connectives are always parenthesized, so
/// parsing the output reproduces the tree (modulo one-element connectives,
/// which print as their only child).
impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Compare { path, op, value } => write!(f, "{path} {} {value}", op.symbol()),
            Predicate::Contains { path, needle } => {
                write!(f, "{path} contains {}", Literal::Str(needle.clone()))
            }
            Predicate::StartsWith { path, prefix } => {
                write!(f, "{path} starts_with {}", Literal::Str(prefix.clone()))
            }
            Predicate::And(ps) if ps.is_empty() => f.write_str("true"),
            Predicate::Or(ps) if ps.is_empty() => f.write_str("false"),
            Predicate::And(ps) => write_joined(f, ps, "and"),
            Predicate::Or(ps) => write_joined(f, ps, "or"),
            Predicate::Not(p) if p.is_connective() => write!(f, "not ({p})"),
            Predicate::Not(p) => write!(f, "not {p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Op(CompareOp),
    LParen,
    RParen,
    Dot,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(usize, Tok)>, SubsetError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (at, tok) = lx.next()?;
            let end = tok == Tok::End;
            out.push((at, tok));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn error(&self, position: usize, message: impl Into<String>) -> SubsetError {
        SubsetError::Syntax {
            position,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<(usize, Tok), SubsetError> {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
        let start = self.pos;
        let Some(c) = self.bump() else {
            return Ok((start, Tok::End));
        };
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '.' => Tok::Dot,
            '=' => Tok::Op(CompareOp::Eq),
            '!' if self.peek() == Some('=') => {
                self.bump();
                Tok::Op(CompareOp::Ne)
            }
            '<' | '>' => {
                let or_equal = self.peek() == Some('=');
                if or_equal {
                    self.bump();
                }
                Tok::Op(match (c, or_equal) {
                    ('<', false) => CompareOp::Lt,
                    ('<', true) => CompareOp::Le,
                    ('>', false) => CompareOp::Gt,
                    _ => CompareOp::Ge,
                })
            }
            '\'' => {
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return Err(self.error(start, "unterminated string literal")),
                        Some('\'') => break,
                        Some('\\') => match self.bump() {
                            Some(e @ ('\'' | '\\')) => s.push(e),
                            _ => return Err(self.error(self.pos, "invalid escape in string literal")),
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() || c == '-' => {
                while self
                    .peek()
                    .is_some_and(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '.' | '+' | '-'))
                {
                    // Only allow a sign directly after an exponent marker.
                    let prev = self.src[..self.pos].chars().last();
                    if matches!(self.peek(), Some('+' | '-')) && !matches!(prev, Some('e' | 'E')) {
                        break;
                    }
                    self.bump();
                }
                let text = &self.src[start..self.pos];
                let n: f64 = text
                    .parse()
                    .map_err(|_| self.error(start, format!("invalid number {text:?}")))?;
                if !n.is_finite() {
                    return Err(self.error(start, format!("number out of range {text:?}")));
                }
                Tok::Number(n)
            }
            c if c.is_alphabetic() || c == '_' => {
                while self.peek().is_some_and(|ch| ch.is_alphanumeric() || ch == '_') {
                    self.bump();
                }
                Tok::Ident(self.src[start..self.pos].to_owned())
            }
            other => return Err(self.error(start, format!("unexpected character {other:?}"))),
        };
        Ok((start, tok))
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

fn keyword(tok: &Tok, kw: &str) -> bool {
    matches!(tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
}

const RESERVED: [&str; 7] = ["and", "or", "not", "true", "false", "contains", "starts_with"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn position(&self) -> usize {
        self.toks[self.at].0
    }

    fn advance(&mut self) -> (usize, Tok) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn syntax(&self, message: impl Into<String>) -> SubsetError {
        SubsetError::Syntax {
            position: self.position(),
            message: message.into(),
        }
    }

    fn or_expr(&mut self) -> Result<Predicate, SubsetError> {
        let mut items = vec![self.and_expr()?];
        while keyword(self.peek(), "or") {
            self.advance();
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Predicate::Or(items) })
    }

    fn and_expr(&mut self) -> Result<Predicate, SubsetError> {
        let mut items = vec![self.term()?];
        while keyword(self.peek(), "and") {
            self.advance();
            items.push(self.term()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Predicate::And(items) })
    }

    fn term(&mut self) -> Result<Predicate, SubsetError> {
        let tok = self.peek().clone();
        if keyword(&tok, "not") {
            self.advance();
            return Ok(Predicate::not(self.term()?));
        }
        if keyword(&tok, "true") {
            self.advance();
            return Ok(Predicate::And(Vec::new()));
        }
        if keyword(&tok, "false") {
            self.advance();
            return Ok(Predicate::Or(Vec::new()));
        }
        if tok == Tok::LParen {
            self.advance();
            let inner = self.or_expr()?;
            if *self.peek() != Tok::RParen {
                return Err(self.syntax("expected ')'"));
            }
            self.advance();
            return Ok(inner);
        }
        self.comparison()
    }

    fn ident(&mut self) -> Result<String, SubsetError> {
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.iter().any(|kw| s.eq_ignore_ascii_case(kw)) => {
                self.advance();
                Ok(s)
            }
            Tok::End => Err(self.syntax("unexpected end of input, expected a field path")),
            _ => Err(self.syntax("expected a field path")),
        }
    }

    fn comparison(&mut self) -> Result<Predicate, SubsetError> {
        let path_pos = self.position();
        let mut segments = vec![self.ident()?];
        while *self.peek() == Tok::Dot {
            self.advance();
            segments.push(self.ident()?);
        }
        let path = FieldPath::from_segments(&segments).ok_or_else(|| SubsetError::UnknownField {
            path: segments.join("."),
            position: Some(path_pos),
        })?;

        let op_pos = self.position();
        let op = match self.advance().1 {
            Tok::Op(op) => Ok(op),
            t if keyword(&t, "contains") => Err(true),
            t if keyword(&t, "starts_with") => Err(false),
            _ => {
                self.at = self.at.saturating_sub(1);
                return Err(SubsetError::Syntax {
                    position: op_pos,
                    message: "expected a comparison operator".into(),
                });
            }
        };

        let lit_pos = self.position();
        let value = match self.advance().1 {
            Tok::Number(n) => Literal::Number(n),
            Tok::Str(s) => Literal::Str(s),
            t if keyword(&t, "true") => Literal::Bool(true),
            t if keyword(&t, "false") => Literal::Bool(false),
            _ => {
                return Err(SubsetError::Syntax {
                    position: lit_pos,
                    message: "expected a literal".into(),
                })
            }
        };

        let ty = path.field_type();
        let mismatch = |message: String| SubsetError::TypeMismatch {
            position: op_pos,
            message,
        };
        match op {
            Ok(op) => {
                let ok = match (&value, ty) {
                    (_, FieldType::Dynamic) => !op.is_ordering() || matches!(value, Literal::Number(_)),
                    (Literal::Number(_), FieldType::Num) => true,
                    (Literal::Str(_), FieldType::Str) => !op.is_ordering(),
                    (Literal::Bool(_), FieldType::Bool) => !op.is_ordering(),
                    _ => false,
                };
                if !ok {
                    return Err(mismatch(format!("cannot apply {} {value} to {path}", op.symbol())));
                }
                Ok(Predicate::Compare { path, op, value })
            }
            Err(is_contains) => {
                let text = match (value, ty) {
                    (Literal::Str(s), FieldType::Str | FieldType::Dynamic) => s,
                    (value, _) => {
                        let op = if is_contains { "contains" } else { "starts_with" };
                        return Err(mismatch(format!("cannot apply {op} {value} to {path}")));
                    }
                };
                Ok(if is_contains {
                    Predicate::Contains { path, needle: text }
                } else {
                    Predicate::StartsWith { path, prefix: text }
                })
            }
        }
    }
}

/// Parse a predicate from source text.
pub fn parse_predicate(source: &str) -> Result<Predicate, SubsetError> {
    if source.trim().is_empty() {
        return Err(SubsetError::Syntax {
            position: 0,
            message: "empty predicate".into(),
        });
    }
    let mut parser = Parser {
        toks: Lexer::tokens(source)?,
        at: 0,
    };
    let pred = parser.or_expr()?;
    if *parser.peek() != Tok::End {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(pred)
}
