//! Condition expression language.
//!
//! ```text
//! condition := or
//! or        := and ("or" and)*
//! and       := not ("and" not)*
//! not       := "not" not | primary
//! primary   := "(" condition ")" | compare
//! compare   := operand op operand
//! operand   := literal | device(id, component, capability, attribute)
//! op        := == | != | < | <= | > | >=
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::hub::{AttrPath, DeviceHub, DeviceState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Literal {
    Str(String),
    Num(f64),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Literal(Literal),
    Attr(AttrPath),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Or(Vec<Condition>),
    And(Vec<Condition>),
    Not(Box<Condition>),
    Compare {
        lhs: Operand,
        op: CmpOp,
        rhs: Operand,
    },
}

impl Condition {
    /// Attribute paths referenced anywhere in the condition.
    pub fn attributes(&self) -> Vec<&AttrPath> {
        let mut out = Vec::new();
        self.collect_attrs(&mut out);
        out
    }

    fn collect_attrs<'a>(&'a self, out: &mut Vec<&'a AttrPath>) {
        match self {
            Condition::Or(cs) | Condition::And(cs) => cs.iter().for_each(|c| c.collect_attrs(out)),
            Condition::Not(c) => c.collect_attrs(out),
            Condition::Compare { lhs, rhs, .. } => {
                for o in [lhs, rhs] {
                    if let Operand::Attr(p) = o {
                        out.push(p);
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Condition::Or(cs) | Condition::And(cs) => 1 + cs.iter().map(Condition::depth).max().unwrap_or(0),
            Condition::Not(c) => 1 + c.depth(),
            Condition::Compare { .. } => 1,
        }
    }
}

// ---------------------------------------------------------------- printing

fn is_keyword(s: &str) -> bool {
    ["or", "and", "not", "true", "false", "device"]
        .iter()
        .any(|k| k.eq_ignore_ascii_case(s))
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

fn write_arg(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    if is_ident(s) && !is_keyword(s) {
        f.write_str(s)
    } else {
        write_quoted(f, s)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => write_quoted(f, s),
            Literal::Num(n) => {
                if n.fract() == 0.0 && n.abs() < 1e15 {
                    write!(f, "{}", *n as i64)
                } else {
                    write!(f, "{n:?}")
                }
            }
            Literal::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Literal(l) => l.fmt(f),
            Operand::Attr(p) => {
                f.write_str("device(")?;
                write_arg(f, &p.device_id)?;
                f.write_str(", ")?;
                write_arg(f, &p.component)?;
                f.write_str(", ")?;
                write_arg(f, &p.capability)?;
                f.write_str(", ")?;
                write_arg(f, &p.attribute)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Or(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" or ")?;
                    }
                    match c {
                        Condition::Or(_) => write!(f, "({c})")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                Ok(())
            }
            Condition::And(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" and ")?;
                    }
                    match c {
                        Condition::Or(_) | Condition::And(_) => write!(f, "({c})")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                Ok(())
            }
            Condition::Not(c) => match **c {
                Condition::Or(_) | Condition::And(_) => write!(f, "not ({c})"),
                _ => write!(f, "not {c}"),
            },
            Condition::Compare { lhs, op, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
        }
    }
}

// ----------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(CmpOp),
    LParen,
    RParen,
    Comma,
    Other(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Str(s) => write!(f, "string \"{s}\""),
            Tok::Num(n) => write!(f, "number {n}"),
            Tok::Op(op) => write!(f, "'{}'", op.symbol()),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
            Tok::Other(c) => write!(f, "'{c}'"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Spanned {
    tok: Tok,
    offset: usize,
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, column)
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let err = |offset: usize, message: String| {
        let (line, column) = position(src, offset);
        ParseError { line, column, message }
    };
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        let start = i;
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let two = src.get(i..i + 2);
        let tok = match (c, two) {
            (_, Some("==")) => {
                i += 2;
                Tok::Op(CmpOp::Eq)
            }
            (_, Some("!=")) => {
                i += 2;
                Tok::Op(CmpOp::Ne)
            }
            (_, Some("<=")) => {
                i += 2;
                Tok::Op(CmpOp::Le)
            }
            (_, Some(">=")) => {
                i += 2;
                Tok::Op(CmpOp::Ge)
            }
            ('<', _) => {
                i += 1;
                Tok::Op(CmpOp::Lt)
            }
            ('>', _) => {
                i += 1;
                Tok::Op(CmpOp::Gt)
            }
            ('(', _) => {
                i += 1;
                Tok::LParen
            }
            (')', _) => {
                i += 1;
                Tok::RParen
            }
            (',', _) => {
                i += 1;
                Tok::Comma
            }
            ('"', _) | ('\'', _) => {
                let quote = c;
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(ch) = src[i..].chars().next() else {
                        return Err(err(start, "unterminated string literal".into()));
                    };
                    i += ch.len_utf8();
                    match ch {
                        '\\' => {
                            let Some(esc) = src[i..].chars().next() else {
                                return Err(err(start, "unterminated string literal".into()));
                            };
                            i += esc.len_utf8();
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                        }
                        ch if ch == quote => break,
                        ch => s.push(ch),
                    }
                }
                Tok::Str(s)
            }
            (c, _) if c.is_ascii_digit() || (c == '-' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit() || *b == b'.')) || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) => {
                let mut j = i + 1;
                while j < src.len() {
                    let b = bytes[j];
                    let prev = bytes[j - 1];
                    if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || ((b == b'-' || b == b'+') && (prev == b'e' || prev == b'E')) {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let text = &src[i..j];
                let n: f64 = text
                    .parse()
                    .map_err(|_| err(start, format!("invalid number '{text}'")))?;
                if !n.is_finite() {
                    return Err(err(start, format!("number '{text}' is out of range")));
                }
                i = j;
                Tok::Num(n)
            }
            (c, _) if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < src.len() && (bytes[j].is_ascii_alphanumeric() || matches!(bytes[j], b'_' | b'-' | b'.')) {
                    j += 1;
                }
                let text = src[i..j].to_string();
                i = j;
                Tok::Ident(text)
            }
            (c, _) => {
                i += c.len_utf8();
                Tok::Other(c)
            }
        };
        out.push(Spanned { tok, offset: start });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        offset: src.len(),
    });
    Ok(out)
}

// ----------------------------------------------------------------- parsing

const MAX_NESTING: usize = 64;

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Spanned>,
    pos: usize,
    nesting: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn next(&mut self) -> &Tok {
        let t = &self.toks[self.pos].tok;
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, expected: &str) -> ParseError {
        let s = &self.toks[self.pos];
        let (line, column) = position(self.src, s.offset);
        ParseError {
            line,
            column,
            message: format!("expected {expected}, found {}", s.tok),
        }
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(self.error_here(&format!("at most {MAX_NESTING} levels of nesting")));
        }
        Ok(())
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        self.enter()?;
        let mut items = vec![self.and()?];
        while self.keyword("or") {
            self.next();
            items.push(self.and()?);
        }
        self.nesting -= 1;
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Condition::Or(items) })
    }

    fn and(&mut self) -> Result<Condition, ParseError> {
        let mut items = vec![self.not()?];
        while self.keyword("and") {
            self.next();
            items.push(self.not()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Condition::And(items) })
    }

    fn not(&mut self) -> Result<Condition, ParseError> {
        if self.keyword("not") {
            self.next();
            self.enter()?;
            let inner = self.not()?;
            self.nesting -= 1;
            return Ok(Condition::Not(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Condition, ParseError> {
        if *self.peek() == Tok::LParen {
            self.next();
            let c = self.condition()?;
            if *self.peek() != Tok::RParen {
                return Err(self.error_here("')'"));
            }
            self.next();
            return Ok(c);
        }
        self.compare()
    }

    fn compare(&mut self) -> Result<Condition, ParseError> {
        let lhs_at = self.pos;
        let lhs = self.operand()?;
        let op = match self.peek() {
            Tok::Op(op) => *op,
            _ => return Err(self.error_here("comparison operator (==, !=, <, <=, >, >=)")),
        };
        self.next();
        let rhs = self.operand()?;
        check_literal_types(&lhs, op, &rhs).map_err(|message| {
            let (line, column) = position(self.src, self.toks[lhs_at].offset);
            ParseError { line, column, message }
        })?;
        Ok(Condition::Compare { lhs, op, rhs })
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.next();
                Ok(Operand::Literal(Literal::Str(s)))
            }
            Tok::Num(n) => {
                self.next();
                Ok(Operand::Literal(Literal::Num(n)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("true") => {
                self.next();
                Ok(Operand::Literal(Literal::Bool(true)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("false") => {
                self.next();
                Ok(Operand::Literal(Literal::Bool(false)))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("device") => {
                self.next();
                if *self.peek() != Tok::LParen {
                    return Err(self.error_here("'(' after 'device'"));
                }
                self.next();
                let mut args = Vec::with_capacity(4);
                for i in 0..4 {
                    let arg = match self.peek().clone() {
                        Tok::Ident(s) | Tok::Str(s) if !s.is_empty() => s,
                        _ => {
                            return Err(self.error_here(
                                ["device id", "component", "capability", "attribute"][i],
                            ))
                        }
                    };
                    self.next();
                    args.push(arg);
                    let want = if i < 3 { Tok::Comma } else { Tok::RParen };
                    if *self.peek() != want {
                        return Err(self.error_here(if i < 3 { "','" } else { "')'" }));
                    }
                    self.next();
                }
                let [d, c, cap, a]: [String; 4] = args.try_into().unwrap();
                Ok(Operand::Attr(AttrPath::new(d, c, cap, a)))
            }
            _ => Err(self.error_here("a literal or device(id, component, capability, attribute)")),
        }
    }
}

fn check_literal_types(lhs: &Operand, op: CmpOp, rhs: &Operand) -> Result<(), String> {
    for o in [lhs, rhs] {
        if let Operand::Literal(l @ (Literal::Str(_) | Literal::Bool(_))) = o {
            if op.is_ordering() {
                return Err(format!("operator '{}' needs numbers, got {l}", op.symbol()));
            }
        }
    }
    if let (Operand::Literal(a), Operand::Literal(b)) = (lhs, rhs) {
        if std::mem::discriminant(a) != std::mem::discriminant(b) {
            return Err(format!("cannot compare {a} with {b}"));
        }
    }
    Ok(())
}

pub fn parse_condition(source: &str) -> Result<Condition, ParseError> {
    let toks = lex(source)?;
    let mut p = Parser {
        src: source,
        toks,
        pos: 0,
        nesting: 0,
    };
    let c = p.condition()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error_here("'and', 'or' or end of input"));
    }
    Ok(c)
}

// -------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("evaluation error: {message}")]
pub struct EvalError {
    pub message: String,
}

/// Where attribute values come from during evaluation.
pub trait AttrSource {
    fn read(&self, path: &AttrPath) -> Result<Value, String>;
}

impl AttrSource for DeviceHub {
    fn read(&self, path: &AttrPath) -> Result<Value, String> {
        self.read_attribute(&path.device_id, &path.component, &path.capability, &path.attribute)
            .map_err(|e| e.message)
    }
}

impl AttrSource for DeviceState {
    fn read(&self, path: &AttrPath) -> Result<Value, String> {
        self.get(path)
            .cloned()
            .ok_or_else(|| format!("unknown attribute path '{path}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scalar {
    Str(String),
    Num(f64),
    Bool(bool),
}

impl Scalar {
    fn type_name(&self) -> &'static str {
        match self {
            Scalar::Str(_) => "string",
            Scalar::Num(_) => "number",
            Scalar::Bool(_) => "boolean",
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Str(s) => write!(f, "\"{s}\""),
            Scalar::Num(n) => write!(f, "{n}"),
            Scalar::Bool(b) => write!(f, "{b}"),
        }
    }
}

fn resolve(o: &Operand, src: &dyn AttrSource) -> Result<Scalar, EvalError> {
    match o {
        Operand::Literal(Literal::Str(s)) => Ok(Scalar::Str(s.clone())),
        Operand::Literal(Literal::Num(n)) => Ok(Scalar::Num(*n)),
        Operand::Literal(Literal::Bool(b)) => Ok(Scalar::Bool(*b)),
        Operand::Attr(p) => {
            let v = src.read(p).map_err(|message| EvalError { message })?;
            match v {
                Value::String(s) => Ok(Scalar::Str(s)),
                Value::Bool(b) => Ok(Scalar::Bool(b)),
                Value::Number(n) => n.as_f64().map(Scalar::Num).ok_or_else(|| EvalError {
                    message: format!("attribute '{p}' holds an unrepresentable number"),
                }),
                other => Err(EvalError {
                    message: format!("attribute '{p}' holds {other}, which cannot be compared"),
                }),
            }
        }
    }
}

fn compare(lhs: &Scalar, op: CmpOp, rhs: &Scalar) -> Result<bool, EvalError> {
    let mismatch = || EvalError {
        message: format!(
            "type mismatch: cannot apply '{}' to {} {lhs} and {} {rhs}",
            op.symbol(),
            lhs.type_name(),
            rhs.type_name()
        ),
    };
    match (lhs, rhs) {
        (Scalar::Num(a), Scalar::Num(b)) => Ok(match op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }),
        (Scalar::Str(a), Scalar::Str(b)) if !op.is_ordering() => Ok((a == b) == (op == CmpOp::Eq)),
        (Scalar::Bool(a), Scalar::Bool(b)) if !op.is_ordering() => Ok((a == b) == (op == CmpOp::Eq)),
        _ => Err(mismatch()),
    }
}

/// Short-circuiting evaluation against live attribute values.
pub fn eval_condition(cond: &Condition, src: &dyn AttrSource) -> Result<bool, EvalError> {
    match cond {
        Condition::Or(cs) => {
            for c in cs {
                if eval_condition(c, src)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Condition::And(cs) => {
            for c in cs {
                if !eval_condition(c, src)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Condition::Not(c) => Ok(!eval_condition(c, src)?),
        Condition::Compare { lhs, op, rhs } => {
            let l = resolve(lhs, src)?;
            let r = resolve(rhs, src)?;
            compare(&l, *op, &r)
        }
    }
}
