//! A small, closed expression language for derivations and transforms.
//!
//! Supported: integer/decimal/text/date/enum values, `+ - * /`, comparisons,
//! `&& || !`, `min(..)`, `max(..)`, `abs(x)` and `if(cond, a, b)`.
//! Evaluation is pure; every failure (type error, overflow, division by
//! zero, unbound variable) is reported as an error, never a panic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Node {
    Lit(Value),
    Bool(bool),
    Var(String),
    Neg(Box<Node>),
    Not(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(String, Vec<Node>),
}

/// Result of evaluating an expression.
#[derive(Clone, Debug, PartialEq)]
pub enum Val {
    Scalar(Value),
    Bool(bool),
}

/// A parsed expression that remembers its source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expression {
    source: String,
    root: Node,
}

fn derr(msg: impl Into<String>) -> Error {
    Error::DerivationTypeError(msg.into())
}

impl Expression {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse(format!("unexpected trailing input in `{src}`")));
        }
        Ok(Self { source: src.to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Variable names referenced anywhere in the expression.
    pub fn variables(&self) -> BTreeSet<String> {
        fn walk(n: &Node, out: &mut BTreeSet<String>) {
            match n {
                Node::Var(v) => {
                    out.insert(v.clone());
                }
                Node::Neg(a) | Node::Not(a) => walk(a, out),
                Node::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Node::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
                Node::Lit(_) | Node::Bool(_) => {}
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn eval(&self, env: &BTreeMap<String, Value>) -> Result<Val> {
        eval(&self.root, env)
    }

    /// Evaluates and requires a scalar result.
    pub fn eval_value(&self, env: &BTreeMap<String, Value>) -> Result<Value> {
        match self.eval(env)? {
            Val::Scalar(v) => Ok(v),
            Val::Bool(_) => Err(derr(format!("`{}` yields a boolean, not a value", self.source))),
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for Expression {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for Expression {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Self::parse(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// lexing and parsing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(String),
    Str(String),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    const OPS: [&str; 14] = ["==", "!=", "<=", ">=", "&&", "||", "<", ">", "+", "-", "*", "/", "!", "="];
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(Tok::Num(chars[start..i].iter().collect()));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(Error::Parse(format!("unterminated string in `{src}`"))),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') if i + 1 < chars.len() => {
                        s.push(chars[i + 1]);
                        i += 2;
                    }
                    Some(ch) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            out.push(Tok::Str(s));
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else if c == ',' {
            out.push(Tok::Comma);
            i += 1;
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let op = OPS
                .iter()
                .find(|op| rest.starts_with(**op))
                .ok_or_else(|| Error::Parse(format!("unexpected `{c}` in `{src}`")))?;
            if *op == "=" {
                return Err(Error::Parse(format!("use `==` for equality in `{src}`")));
            }
            out.push(Tok::Op(op));
            i += op.len();
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat_op(&mut self, ops: &[&'static str]) -> Option<&'static str> {
        if let Some(Tok::Op(op)) = self.peek() {
            if let Some(found) = ops.iter().find(|o| **o == *op) {
                self.pos += 1;
                return Some(found);
            }
        }
        None
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.and()?;
        while self.eat_op(&["||"]).is_some() {
            lhs = Node::Bin(BinOp::Or, Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Node> {
        let mut lhs = self.cmp()?;
        while self.eat_op(&["&&"]).is_some() {
            lhs = Node::Bin(BinOp::And, Box::new(lhs), Box::new(self.cmp()?));
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Node> {
        let lhs = self.add()?;
        let op = match self.eat_op(&["==", "!=", "<=", ">=", "<", ">"]) {
            Some("==") => BinOp::Eq,
            Some("!=") => BinOp::Ne,
            Some("<=") => BinOp::Le,
            Some(">=") => BinOp::Ge,
            Some("<") => BinOp::Lt,
            Some(">") => BinOp::Gt,
            _ => return Ok(lhs),
        };
        Ok(Node::Bin(op, Box::new(lhs), Box::new(self.add()?)))
    }

    fn add(&mut self) -> Result<Node> {
        let mut lhs = self.mul()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let op = if op == "+" { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.mul()?));
        }
        Ok(lhs)
    }

    fn mul(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&["*", "/"]) {
            let op = if op == "*" { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat_op(&["-"]).is_some() {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op(&["!"]).is_some() {
            return Ok(Node::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(n)) => {
                if n.contains('.') {
                    let d: Decimal = n.parse().map_err(|_| Error::Parse(format!("bad number `{n}`")))?;
                    Ok(Node::Lit(Value::Decimal(d)))
                } else {
                    let i: i64 = n.parse().map_err(|_| Error::Parse(format!("bad number `{n}`")))?;
                    Ok(Node::Lit(Value::Integer(i)))
                }
            }
            Some(Tok::Str(s)) => Ok(Node::Lit(Value::Text(s))),
            Some(Tok::Ident(id)) => match id.as_str() {
                "true" => Ok(Node::Bool(true)),
                "false" => Ok(Node::Bool(false)),
                _ if self.peek() == Some(&Tok::LParen) => {
                    self.pos += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if self.peek() == Some(&Tok::Comma) {
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                    }
                    if self.next() != Some(Tok::RParen) {
                        return Err(Error::Parse(format!("expected `)` after arguments of `{id}`")));
                    }
                    check_arity(&id, args.len())?;
                    Ok(Node::Call(id, args))
                }
                _ => Ok(Node::Var(id)),
            },
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                if self.next() != Some(Tok::RParen) {
                    return Err(Error::Parse("expected `)`".into()));
                }
                Ok(inner)
            }
            other => Err(Error::Parse(format!("unexpected token {other:?}"))),
        }
    }
}

fn check_arity(name: &str, n: usize) -> Result<()> {
    let ok = match name {
        "min" | "max" => n >= 1,
        "abs" => n == 1,
        "if" => n == 3,
        _ => return Err(Error::Parse(format!("unknown function `{name}`"))),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Parse(format!("wrong number of arguments to `{name}`")))
    }
}

// ---------------------------------------------------------------------------
// evaluation

enum Num {
    Int(i64),
    Dec(Decimal),
}

fn as_num(v: &Value) -> Option<Num> {
    match v {
        Value::Integer(i) => Some(Num::Int(*i)),
        Value::Decimal(d) => Some(Num::Dec(*d)),
        _ => None,
    }
}

fn to_dec(n: &Num) -> Decimal {
    match n {
        Num::Int(i) => Decimal::from(*i),
        Num::Dec(d) => *d,
    }
}

fn scalar(v: Val) -> Result<Value> {
    match v {
        Val::Scalar(s) => Ok(s),
        Val::Bool(_) => Err(derr("expected a value, found a boolean")),
    }
}

fn boolean(v: Val) -> Result<bool> {
    match v {
        Val::Bool(b) => Ok(b),
        Val::Scalar(s) => Err(derr(format!("expected a boolean, found {}", s.ty()))),
    }
}

fn arith(op: BinOp, a: &Value, b: &Value) -> Result<Value> {
    let (x, y) = match (as_num(a), as_num(b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(derr(format!("arithmetic on {} and {}", a.ty(), b.ty()))),
    };
    let overflow = || derr("arithmetic overflow");
    if let (Num::Int(i), Num::Int(j), true) = (&x, &y, op != BinOp::Div) {
        let r = match op {
            BinOp::Add => i.checked_add(*j),
            BinOp::Sub => i.checked_sub(*j),
            BinOp::Mul => i.checked_mul(*j),
            _ => unreachable!("division handled as decimal"),
        };
        return r.map(Value::Integer).ok_or_else(overflow);
    }
    let (p, q) = (to_dec(&x), to_dec(&y));
    let r = match op {
        BinOp::Add => p.checked_add(q),
        BinOp::Sub => p.checked_sub(q),
        BinOp::Mul => p.checked_mul(q),
        BinOp::Div => {
            if q.is_zero() {
                return Err(derr("division by zero"));
            }
            p.checked_div(q)
        }
        _ => unreachable!("not an arithmetic operator"),
    };
    r.map(|d| Value::Decimal(d.normalize())).ok_or_else(overflow)
}

fn compare(a: &Value, b: &Value) -> Result<std::cmp::Ordering> {
    if let (Some(x), Some(y)) = (as_num(a), as_num(b)) {
        return Ok(to_dec(&x).cmp(&to_dec(&y)));
    }
    match (a, b) {
        (Value::Text(x) | Value::Enum(x), Value::Text(y) | Value::Enum(y)) => Ok(x.cmp(y)),
        (Value::Date(x), Value::Date(y)) => Ok(x.cmp(y)),
        _ => Err(derr(format!("cannot compare {} with {}", a.ty(), b.ty()))),
    }
}

fn eval(n: &Node, env: &BTreeMap<String, Value>) -> Result<Val> {
    Ok(match n {
        Node::Lit(v) => Val::Scalar(v.clone()),
        Node::Bool(b) => Val::Bool(*b),
        Node::Var(name) => Val::Scalar(
            env.get(name).cloned().ok_or_else(|| derr(format!("unbound variable `{name}`")))?,
        ),
        Node::Neg(a) => {
            let v = scalar(eval(a, env)?)?;
            Val::Scalar(arith(BinOp::Sub, &Value::Integer(0), &v)?)
        }
        Node::Not(a) => Val::Bool(!boolean(eval(a, env)?)?),
        Node::Bin(op @ (BinOp::And | BinOp::Or), a, b) => {
            let l = boolean(eval(a, env)?)?;
            // short-circuit keeps `if`-style guards total
            match (op, l) {
                (BinOp::And, false) => Val::Bool(false),
                (BinOp::Or, true) => Val::Bool(true),
                _ => Val::Bool(boolean(eval(b, env)?)?),
            }
        }
        Node::Bin(op, a, b) => {
            let l = scalar(eval(a, env)?)?;
            let r = scalar(eval(b, env)?)?;
            use std::cmp::Ordering::*;
            match op {
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => Val::Scalar(arith(*op, &l, &r)?),
                BinOp::Eq => Val::Bool(compare(&l, &r)? == Equal),
                BinOp::Ne => Val::Bool(compare(&l, &r)? != Equal),
                BinOp::Lt => Val::Bool(compare(&l, &r)? == Less),
                BinOp::Le => Val::Bool(compare(&l, &r)? != Greater),
                BinOp::Gt => Val::Bool(compare(&l, &r)? == Greater),
                BinOp::Ge => Val::Bool(compare(&l, &r)? != Less),
                BinOp::And | BinOp::Or => unreachable!("handled above"),
            }
        }
        Node::Call(f, args) => match f.as_str() {
            "if" => {
                if boolean(eval(&args[0], env)?)? {
                    eval(&args[1], env)?
                } else {
                    eval(&args[2], env)?
                }
            }
            "abs" => {
                let v = scalar(eval(&args[0], env)?)?;
                match v {
                    Value::Integer(i) => Val::Scalar(Value::Integer(
                        i.checked_abs().ok_or_else(|| derr("arithmetic overflow"))?,
                    )),
                    Value::Decimal(d) => Val::Scalar(Value::Decimal(d.abs())),
                    other => return Err(derr(format!("abs of {}", other.ty()))),
                }
            }
            "min" | "max" => {
                let want = if f == "min" { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater };
                let mut best = scalar(eval(&args[0], env)?)?;
                for a in &args[1..] {
                    let v = scalar(eval(a, env)?)?;
                    if compare(&v, &best)? == want {
                        best = v;
                    }
                }
                Val::Scalar(best)
            }
            other => return Err(derr(format!("unknown function `{other}`"))),
        },
    })
}
