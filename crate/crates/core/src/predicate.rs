//! Boolean predicates over one draw's mean and variance paths, e.g.
//! `mu(200) < mu(50)` or `sigma2(10) >= 2 and not mu(1) > 0`.
//!
//! ```text
//! expr  := and ( ("or" | "||") and )*
//! and   := unary ( ("and" | "&&") unary )*
//! unary := ("not" | "!") unary | "(" expr ")" | "true" | "false" | cmp
//! cmp   := sum op sum          op: < <= > >= == !=
//! sum   := term ( ("+" | "-") term )*
//! term  := number | "-" term | ("mu" | "μ" | "sigma2" | "σ2" | "σ²") "(" integer ")"
//! ```
//!
//! Times are 1-based.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Mean,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Const(f64),
    /// Quantity at a 0-based time.
    At(Quantity, usize),
    Neg(Box<Term>),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Const(bool),
    Cmp(Term, CmpOp, Term),
    Not(Box<Predicate>),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

impl Term {
    fn eval(&self, mu: &[f64], sigma2: &[f64]) -> f64 {
        match self {
            Term::Const(c) => *c,
            Term::At(Quantity::Mean, t) => mu[*t],
            Term::At(Quantity::Variance, t) => sigma2[*t],
            Term::Neg(a) => -a.eval(mu, sigma2),
            Term::Add(a, b) => a.eval(mu, sigma2) + b.eval(mu, sigma2),
            Term::Sub(a, b) => a.eval(mu, sigma2) - b.eval(mu, sigma2),
        }
    }

    fn uses_variance(&self) -> bool {
        match self {
            Term::Const(_) => false,
            Term::At(q, _) => *q == Quantity::Variance,
            Term::Neg(a) => a.uses_variance(),
            Term::Add(a, b) | Term::Sub(a, b) => a.uses_variance() || b.uses_variance(),
        }
    }
}

impl Predicate {
    /// Parse `text` for series of length `n`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let mut p = Parser {
            tokens: tokenize(text)?,
            pos: 0,
            n,
            text,
        };
        let e = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(parse_error(
                text,
                tok.column,
                format!("unexpected {}", tok.kind.describe()),
            ));
        }
        Ok(e)
    }

    pub fn eval(&self, mu: &[f64], sigma2: &[f64]) -> bool {
        match self {
            Predicate::Const(b) => *b,
            Predicate::Cmp(a, op, b) => {
                let (x, y) = (a.eval(mu, sigma2), b.eval(mu, sigma2));
                match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                }
            }
            Predicate::Not(a) => !a.eval(mu, sigma2),
            Predicate::And(a, b) => a.eval(mu, sigma2) && b.eval(mu, sigma2),
            Predicate::Or(a, b) => a.eval(mu, sigma2) || b.eval(mu, sigma2),
        }
    }

    pub fn uses_variance(&self) -> bool {
        match self {
            Predicate::Const(_) => false,
            Predicate::Cmp(a, _, b) => a.uses_variance() || b.uses_variance(),
            Predicate::Not(a) => a.uses_variance(),
            Predicate::And(a, b) | Predicate::Or(a, b) => a.uses_variance() || b.uses_variance(),
        }
    }
}

fn parse_error(text: &str, column: usize, message: String) -> Error {
    Error::Parse {
        file: format!("predicate {text:?}"),
        line: 1,
        column,
        message,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Num(f64),
    Ident(String),
    Op(CmpOp),
    Plus,
    Minus,
    LParen,
    RParen,
    AndOp,
    OrOp,
    NotOp,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Num(v) => format!("number {v}"),
            Kind::Ident(s) => format!("'{s}'"),
            Kind::Op(_) => "comparison".into(),
            Kind::Plus => "'+'".into(),
            Kind::Minus => "'-'".into(),
            Kind::LParen => "'('".into(),
            Kind::RParen => "')'".into(),
            Kind::AndOp => "'&&'".into(),
            Kind::OrOp => "'||'".into(),
            Kind::NotOp => "'!'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (kind, len) = match two.as_str() {
            "<=" => (Kind::Op(CmpOp::Le), 2),
            ">=" => (Kind::Op(CmpOp::Ge), 2),
            "==" => (Kind::Op(CmpOp::Eq), 2),
            "!=" => (Kind::Op(CmpOp::Ne), 2),
            "&&" => (Kind::AndOp, 2),
            "||" => (Kind::OrOp, 2),
            _ => match c {
                '<' => (Kind::Op(CmpOp::Lt), 1),
                '>' => (Kind::Op(CmpOp::Gt), 1),
                '!' => (Kind::NotOp, 1),
                '+' => (Kind::Plus, 1),
                '-' => (Kind::Minus, 1),
                '(' => (Kind::LParen, 1),
                ')' => (Kind::RParen, 1),
                c if c.is_ascii_digit() || c == '.' => {
                    let mut j = i;
                    while j < chars.len()
                        && (chars[j].is_ascii_digit()
                            || chars[j] == '.'
                            || matches!(chars[j], 'e' | 'E')
                            || (matches!(chars[j], '+' | '-')
                                && j > i
                                && matches!(chars[j - 1], 'e' | 'E')))
                    {
                        j += 1;
                    }
                    let s: String = chars[i..j].iter().collect();
                    let v = s
                        .parse::<f64>()
                        .map_err(|_| parse_error(text, column, format!("invalid number {s:?}")))?;
                    (Kind::Num(v), j - i)
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut j = i;
                    while j < chars.len()
                        && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '²')
                    {
                        j += 1;
                    }
                    (Kind::Ident(chars[i..j].iter().collect()), j - i)
                }
                _ => {
                    return Err(parse_error(
                        text,
                        column,
                        format!("unexpected character {c:?}"),
                    ))
                }
            },
        };
        out.push(Token { kind, column });
        i += len;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    n: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Kind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map_or(self.text.chars().count() + 1, |t| t.column)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(parse_error(self.text, self.column(), message.into()))
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Kind::Ident(s)) if s == w)
    }

    fn expect(&mut self, kind: Kind) -> Result<()> {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected {}", kind.describe()))
        }
    }

    fn expr(&mut self) -> Result<Predicate> {
        let mut left = self.and()?;
        while self.is_word("or") || self.peek() == Some(&Kind::OrOp) {
            self.pos += 1;
            left = Predicate::Or(Box::new(left), Box::new(self.and()?));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<Predicate> {
        let mut left = self.unary()?;
        while self.is_word("and") || self.peek() == Some(&Kind::AndOp) {
            self.pos += 1;
            left = Predicate::And(Box::new(left), Box::new(self.unary()?));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Predicate> {
        if self.is_word("not") || self.peek() == Some(&Kind::NotOp) {
            self.pos += 1;
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Kind::LParen) {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(Kind::RParen)?;
            return Ok(e);
        }
        if self.is_word("true") || self.is_word("false") {
            let b = self.is_word("true");
            self.pos += 1;
            return Ok(Predicate::Const(b));
        }
        let left = self.sum()?;
        let op = match self.peek() {
            Some(Kind::Op(op)) => *op,
            _ => return self.error("expected a comparison operator"),
        };
        self.pos += 1;
        Ok(Predicate::Cmp(left, op, self.sum()?))
    }

    fn sum(&mut self) -> Result<Term> {
        let mut left = self.term()?;
        loop {
            match self.peek() {
                Some(Kind::Plus) => {
                    self.pos += 1;
                    left = Term::Add(Box::new(left), Box::new(self.term()?));
                }
                Some(Kind::Minus) => {
                    self.pos += 1;
                    left = Term::Sub(Box::new(left), Box::new(self.term()?));
                }
                _ => return Ok(left),
            }
        }
    }

    fn term(&mut self) -> Result<Term> {
        match self.peek().cloned() {
            Some(Kind::Num(v)) => {
                self.pos += 1;
                Ok(Term::Const(v))
            }
            Some(Kind::Minus) => {
                self.pos += 1;
                Ok(Term::Neg(Box::new(self.term()?)))
            }
            Some(Kind::Ident(name)) => {
                let q = match name.as_str() {
                    "mu" | "μ" => Quantity::Mean,
                    "sigma2" | "σ2" | "σ²" => Quantity::Variance,
                    _ => {
                        return self
                            .error(format!("unknown quantity '{name}', expected mu or sigma2"))
                    }
                };
                self.pos += 1;
                self.expect(Kind::LParen)?;
                let col = self.column();
                let t = match self.peek() {
                    Some(Kind::Num(v)) if v.fract() == 0.0 && *v >= 1.0 => *v as usize,
                    _ => return self.error("expected a time index (1-based integer)"),
                };
                if t > self.n {
                    return Err(parse_error(
                        self.text,
                        col,
                        format!("time {t} outside 1..={}", self.n),
                    ));
                }
                self.pos += 1;
                self.expect(Kind::RParen)?;
                Ok(Term::At(q, t - 1))
            }
            _ => self.error("expected a number, mu(t) or sigma2(t)"),
        }
    }
}
