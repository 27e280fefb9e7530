//! Expression tables for custom coefficients.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | var | func '(' expr ')' | '(' expr ')'
//! var     := t | xi | x | y | z | pi
//! func    := sin | cos | tanh | exp | abs
//! ```
//!
//! Polynomials combined with `sin`, `cos` and `tanh` cover the documented
//! families; `exp` and `abs` are accepted so that counterexamples to the
//! growth assumptions can be written down and audited.

use crate::error::{Error, Result};
use crate::func::Args;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    Xi,
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    Call(Func, Box<Node>),
}

/// A parsed coefficient expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Config(format!(
                "unexpected trailing input in expression '{source}'"
            )));
        }
        Ok(Expr {
            source: source.trim().to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True if the expression mentions `v` anywhere.
    pub fn uses(&self, v: Var) -> bool {
        fn walk(n: &Node, v: Var) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(w) => *w == v,
                Node::Neg(a) | Node::Call(_, a) | Node::PowI(a, _) => walk(a, v),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a, v) || walk(b, v)
                }
            }
        }
        walk(&self.root, v)
    }

    #[inline]
    pub fn eval(&self, a: &Args) -> f64 {
        eval(&self.root, a)
    }
}

fn eval(n: &Node, a: &Args) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(Var::T) => a.t,
        Node::Var(Var::Xi) => a.xi,
        Node::Var(Var::X) => a.x,
        Node::Var(Var::Y) => a.y,
        Node::Var(Var::Z) => a.z,
        Node::Neg(x) => -eval(x, a),
        Node::Add(x, y) => eval(x, a) + eval(y, a),
        Node::Sub(x, y) => eval(x, a) - eval(y, a),
        Node::Mul(x, y) => eval(x, a) * eval(y, a),
        Node::Div(x, y) => eval(x, a) / eval(y, a),
        Node::Pow(x, y) => eval(x, a).powf(eval(y, a)),
        Node::PowI(x, k) => eval(x, a).powi(*k),
        Node::Call(f, x) => {
            let v = eval(x, a);
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Tanh => v.tanh(),
                Func::Exp => v.exp(),
                Func::Abs => v.abs(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Config(format!("bad number '{text}' in expression '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else {
            return Err(Error::Config(format!("unexpected character '{c}' in expression '{s}'")));
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

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            if let Node::Num(k) = exp {
                if k.fract() == 0.0 && k.abs() <= 64.0 {
                    return Ok(Node::PowI(Box::new(base), k as i32));
                }
            }
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(Error::Config("missing ')' in expression".into())),
                }
            }
            Some(Tok::Ident(name)) => {
                let var = match name.as_str() {
                    "t" => Some(Var::T),
                    "xi" => Some(Var::Xi),
                    "x" => Some(Var::X),
                    "y" => Some(Var::Y),
                    "z" => Some(Var::Z),
                    _ => None,
                };
                if let Some(v) = var {
                    return Ok(Node::Var(v));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                let func = match name.as_str() {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "tanh" => Func::Tanh,
                    "exp" => Func::Exp,
                    "abs" => Func::Abs,
                    _ => return Err(Error::Config(format!("unknown identifier '{name}'"))),
                };
                match self.next() {
                    Some(Tok::LParen) => {}
                    _ => return Err(Error::Config(format!("expected '(' after '{name}'"))),
                }
                let arg = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(Node::Call(func, Box::new(arg))),
                    _ => Err(Error::Config(format!("missing ')' after argument of '{name}'"))),
                }
            }
            Some(t) => Err(Error::Config(format!("unexpected token {t:?}"))),
            None => Err(Error::Config("unexpected end of expression".into())),
        }
    }
}
