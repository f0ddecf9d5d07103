//! Feature expression language.
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/" | "×" | "÷") unary)*
//! unary   := "-" unary | primary
//! primary := number | name | func "(" expr ("," expr)? ")" | "(" expr ")"
//! func    := "min" | "max" | "mean"
//! ```
//!
//! Values are scalars or vectors. Arithmetic broadcasts scalars over vectors
//! and pairs vectors element by element. One-argument `min`, `max` and `mean`
//! reduce a vector to a scalar (0 for an empty vector); two-argument `min` and
//! `max` combine element-wise. Chains of `+`/`-` or `*`/`/` form a single node
//! when measuring depth.

use std::fmt;

use thiserror::Error;

use crate::graphstate::{FeatureKind, FeatureSchema};

pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("unexpected character {ch:?} at {pos}")]
    Lex { pos: usize, ch: char },
    #[error("parse error at {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("{func} takes 1 or 2 arguments ({got} given)")]
    Arity { func: &'static str, got: usize },
    #[error("expression evaluates to a vector; a scalar is required")]
    NotScalar,
    #[error("expression depth {0} exceeds {MAX_DEPTH}")]
    TooDeep(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Mean,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Feature(String),
    Neg(Box<Expr>),
    /// Terms with a subtract flag; the first flag is always `false`.
    Sum(Vec<(bool, Expr)>),
    /// Factors with a divide flag; the first flag is always `false`.
    Product(Vec<(bool, Expr)>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Feature(_) => 1,
            Expr::Neg(e) => 1 + e.depth(),
            Expr::Sum(xs) | Expr::Product(xs) => 1 + xs.iter().map(|(_, e)| e.depth()).max().unwrap_or(0),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    /// Static type of the expression against a vocabulary.
    pub fn kind(&self, schema: &FeatureSchema) -> Result<FeatureKind, DslError> {
        use FeatureKind::{Scalar, Vector};
        let join = |a: FeatureKind, b: FeatureKind| if a == Vector || b == Vector { Vector } else { Scalar };
        Ok(match self {
            Expr::Const(_) => Scalar,
            Expr::Feature(name) => schema.kind_of(name).ok_or_else(|| DslError::UnknownFeature(name.clone()))?,
            Expr::Neg(e) => e.kind(schema)?,
            Expr::Sum(xs) | Expr::Product(xs) => {
                let mut k = Scalar;
                for (_, e) in xs {
                    k = join(k, e.kind(schema)?);
                }
                k
            }
            Expr::Call(func, args) => {
                let kinds = args.iter().map(|a| a.kind(schema)).collect::<Result<Vec<_>, _>>()?;
                match (func, kinds.as_slice()) {
                    (_, [_]) => Scalar,
                    (Func::Mean, _) => return Err(DslError::Arity { func: "mean", got: args.len() }),
                    (_, [a, b]) => join(*a, *b),
                    (f, _) => return Err(DslError::Arity { func: f.name(), got: args.len() }),
                }
            }
        })
    }

    fn features<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Feature(n) => out.push(n),
            Expr::Neg(e) => e.features(out),
            Expr::Sum(xs) | Expr::Product(xs) => xs.iter().for_each(|(_, e)| e.features(out)),
            Expr::Call(_, args) => args.iter().for_each(|a| a.features(out)),
        }
    }

    pub fn eval(&self, env: &dyn FeatureEnv) -> Result<Value, DslError> {
        Ok(match self {
            Expr::Const(c) => Value::Scalar(*c),
            Expr::Feature(name) => match env.lookup(name) {
                Some(ValueRef::Scalar(v)) => Value::Scalar(v),
                Some(ValueRef::Vector(v)) => Value::Vector(v.to_vec()),
                None => return Err(DslError::UnknownFeature(name.clone())),
            },
            Expr::Neg(e) => e.eval(env)?.map(|v| -v),
            Expr::Sum(xs) => fold(xs, env, |a, b, sub| if sub { a - b } else { a + b })?,
            Expr::Product(xs) => fold(xs, env, |a, b, div| if div { a / b } else { a * b })?,
            Expr::Call(func, args) => {
                let vals = args.iter().map(|a| a.eval(env)).collect::<Result<Vec<_>, _>>()?;
                match (func, vals.as_slice()) {
                    (f, [v]) => Value::Scalar(reduce(*f, v)),
                    (Func::Min, [a, b]) => a.zip(b, f64::min),
                    (Func::Max, [a, b]) => a.zip(b, f64::max),
                    (f, _) => return Err(DslError::Arity { func: f.name(), got: vals.len() }),
                }
            }
        })
    }
}

fn fold(
    xs: &[(bool, Expr)],
    env: &dyn FeatureEnv,
    op: impl Fn(f64, f64, bool) -> f64,
) -> Result<Value, DslError> {
    let mut acc: Option<Value> = None;
    for (flag, e) in xs {
        let v = e.eval(env)?;
        acc = Some(match acc {
            None => v,
            Some(a) => a.zip(&v, |x, y| op(x, y, *flag)),
        });
    }
    Ok(acc.unwrap_or(Value::Scalar(0.0)))
}

fn reduce(f: Func, v: &Value) -> f64 {
    let xs = match v {
        Value::Scalar(s) => return *s,
        Value::Vector(xs) => xs,
    };
    if xs.is_empty() {
        return 0.0;
    }
    match f {
        Func::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
        Func::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Func::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Value {
    fn map(self, f: impl Fn(f64) -> f64) -> Value {
        match self {
            Value::Scalar(s) => Value::Scalar(f(s)),
            Value::Vector(v) => Value::Vector(v.into_iter().map(f).collect()),
        }
    }

    /// Broadcasting binary op; vectors of unequal length yield NaN.
    fn zip(&self, other: &Value, f: impl Fn(f64, f64) -> f64) -> Value {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(f(*a, *b)),
            (Value::Scalar(a), Value::Vector(v)) => Value::Vector(v.iter().map(|b| f(*a, *b)).collect()),
            (Value::Vector(v), Value::Scalar(b)) => Value::Vector(v.iter().map(|a| f(*a, *b)).collect()),
            (Value::Vector(a), Value::Vector(b)) if a.len() == b.len() => {
                Value::Vector(a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            }
            (Value::Vector(_), Value::Vector(_)) => Value::Scalar(f64::NAN),
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(s) => Some(*s),
            Value::Vector(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueRef<'a> {
    Scalar(f64),
    Vector(&'a [f64]),
}

/// Named inputs an expression can read.
pub trait FeatureEnv {
    fn lookup(&self, name: &str) -> Option<ValueRef<'_>>;
}

impl FeatureEnv for std::collections::BTreeMap<String, Value> {
    fn lookup(&self, name: &str) -> Option<ValueRef<'_>> {
        self.get(name).map(|v| match v {
            Value::Scalar(s) => ValueRef::Scalar(*s),
            Value::Vector(xs) => ValueRef::Vector(xs),
        })
    }
}

/// A parsed expression checked against a vocabulary: known names, depth
/// within bounds, scalar result.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    pub source: String,
    pub expr: Expr,
}

impl CompiledExpr {
    pub fn compile(source: &str, schema: &FeatureSchema) -> Result<Self, DslError> {
        let expr = parse(source)?;
        let depth = expr.depth();
        if depth > MAX_DEPTH {
            return Err(DslError::TooDeep(depth));
        }
        if expr.kind(schema)? != FeatureKind::Scalar {
            return Err(DslError::NotScalar);
        }
        Ok(Self { source: source.to_string(), expr })
    }

    /// Scalar result; non-finite values are passed through for the caller
    /// to count.
    pub fn eval(&self, env: &dyn FeatureEnv) -> Result<f64, DslError> {
        match self.expr.eval(env)? {
            Value::Scalar(s) => Ok(s),
            // Statically scalar expressions only turn into vectors through a
            // length mismatch, which already produced NaN.
            Value::Vector(_) => Ok(f64::NAN),
        }
    }

    pub fn features(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.expr.features(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, DslError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '+' => Tok::Plus,
            '-' | '−' => Tok::Minus,
            '*' | '×' => Tok::Star,
            '/' | '÷' => Tok::Slash,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                    i += 1;
                }
                if i < chars.len() && matches!(chars[i].1, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && matches!(chars[j].1, '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].1.is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let end = chars.get(i).map_or(src.len(), |(p, _)| *p);
                let text = &src[pos..end];
                let v: f64 = text
                    .parse()
                    .map_err(|_| DslError::Parse { pos: chars[start].0, msg: format!("bad number {text:?}") })?;
                out.push((pos, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let end = chars.get(i).map_or(src.len(), |(p, _)| *p);
                out.push((pos, Tok::Ident(src[pos..end].to_string())));
                continue;
            }
            ch => return Err(DslError::Lex { pos, ch }),
        };
        out.push((pos, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn err(&self, msg: impl Into<String>) -> DslError {
        DslError::Parse { pos: self.pos(), msg: msg.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), DslError> {
        if self.peek() == Some(&tok) {
            self.at += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let mut terms = vec![(false, self.term()?)];
        while let Some(t @ (Tok::Plus | Tok::Minus)) = self.peek() {
            let sub = *t == Tok::Minus;
            self.at += 1;
            terms.push((sub, self.term()?));
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap().1 } else { Expr::Sum(terms) })
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut factors = vec![(false, self.unary()?)];
        while let Some(t @ (Tok::Star | Tok::Slash)) = self.peek() {
            let div = *t == Tok::Slash;
            self.at += 1;
            factors.push((div, self.unary()?));
        }
        Ok(if factors.len() == 1 { factors.pop().unwrap().1 } else { Expr::Product(factors) })
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.peek() == Some(&Tok::Minus) {
            self.at += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.at += 1;
                if self.peek() != Some(&Tok::LParen) {
                    return Ok(Expr::Feature(name));
                }
                let func = match name.as_str() {
                    "min" => Func::Min,
                    "max" => Func::Max,
                    "mean" => Func::Mean,
                    _ => return Err(DslError::UnknownFunction(name)),
                };
                self.at += 1;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.at += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "')'")?;
                let max_args = if func == Func::Mean { 1 } else { 2 };
                if args.len() > max_args {
                    return Err(DslError::Arity { func: func.name(), got: args.len() });
                }
                Ok(Expr::Call(func, args))
            }
            _ => Err(self.err("expected a number, name or '('")),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, DslError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, at: 0, end: src.len() };
    let e = p.expr()?;
    if p.at != p.toks.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chain = |f: &mut fmt::Formatter<'_>, xs: &[(bool, Expr)], ops: [&str; 2]| -> fmt::Result {
            write!(f, "(")?;
            for (i, (flag, e)) in xs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {} ", ops[*flag as usize])?;
                }
                write!(f, "{e}")?;
            }
            write!(f, ")")
        };
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "({c})"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Feature(n) => write!(f, "{n}"),
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Sum(xs) => chain(f, xs, ["+", "-"]),
            Expr::Product(xs) => chain(f, xs, ["*", "/"]),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}
