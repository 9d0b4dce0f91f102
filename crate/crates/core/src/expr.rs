//! Small arithmetic expression language for config-declared potentials and
//! coefficient fields.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numeric literals, the
//! constants `pi` and `e`, named parameters, variables, and the functions
//! `exp ln log sqrt sin cos tan sinh cosh tanh logcosh abs`.
//! Evaluation is generic over [`Scalar`], so the same tree yields plain
//! values or second-order jets (value, first and second derivative).

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, d1: 0.0, d2: 0.0 }
    }
    pub fn var(v: f64) -> Self {
        Jet { v, d1: 1.0, d2: 0.0 }
    }
    /// Chain rule for a scalar function with derivatives (f, f', f'').
    fn chain(self, f: f64, fp: f64, fpp: f64) -> Self {
        Jet {
            v: f,
            d1: fp * self.d1,
            d2: fpp * self.d1 * self.d1 + fp * self.d2,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}
impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}
impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}
impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let inv = 1.0 / o.v;
        let r = o.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
        self * r
    }
}
impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { v: -self.v, d1: -self.d1, d2: -self.d2 }
    }
}

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn apply(self, f: Func) -> Self;
    fn pow(self, e: Self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn apply(self, f: Func) -> Self {
        f.eval(self).0
    }
    fn pow(self, e: Self) -> Self {
        if e.fract() == 0.0 && e.abs() < 64.0 {
            self.powi(e as i32)
        } else {
            self.powf(e)
        }
    }
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn apply(self, f: Func) -> Self {
        let (v, d1, d2) = f.eval(self.v);
        self.chain(v, d1, d2)
    }
    fn pow(self, e: Self) -> Self {
        if e.d1 == 0.0 && e.d2 == 0.0 {
            let p = e.v;
            let (v, d1, d2) = if p.fract() == 0.0 && p.abs() < 64.0 {
                let k = p as i32;
                (
                    self.v.powi(k),
                    p * self.v.powi(k - 1),
                    p * (p - 1.0) * self.v.powi(k - 2),
                )
            } else {
                (
                    self.v.powf(p),
                    p * self.v.powf(p - 1.0),
                    p * (p - 1.0) * self.v.powf(p - 2.0),
                )
            };
            self.chain(v, d1, d2)
        } else {
            (e * self.apply(Func::Ln)).apply(Func::Exp)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    LogCosh,
    Abs,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "logcosh" => Func::LogCosh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    /// (f(x), f'(x), f''(x))
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Func::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Func::Ln => (x.ln(), 1.0 / x, -1.0 / (x * x)),
            Func::Sqrt => {
                let s = x.sqrt();
                (s, 0.5 / s, -0.25 / (s * x))
            }
            Func::Sin => (x.sin(), x.cos(), -x.sin()),
            Func::Cos => (x.cos(), -x.sin(), -x.cos()),
            Func::Tan => {
                let t = x.tan();
                let s2 = 1.0 + t * t;
                (t, s2, 2.0 * t * s2)
            }
            Func::Sinh => (x.sinh(), x.cosh(), x.sinh()),
            Func::Cosh => (x.cosh(), x.sinh(), x.cosh()),
            Func::Tanh => {
                let t = x.tanh();
                let s2 = 1.0 - t * t;
                (t, s2, -2.0 * t * s2)
            }
            Func::LogCosh => {
                let a = x.abs();
                let v = a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2;
                let t = x.tanh();
                (v, t, 1.0 - t * t)
            }
            Func::Abs => (x.abs(), x.signum(), 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// A parsed expression with variables bound to argument positions.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    arity: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl Expr {
    /// Parse `src`; identifiers in `vars` become positional arguments, and
    /// identifiers found in `params` are folded in as constants.
    pub fn parse(src: &str, vars: &[&str], params: &BTreeMap<String, f64>) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, vars, params, src };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!("unexpected trailing input in {src:?}")));
        }
        Ok(Expr { source: src.to_string(), root: fold(root), arity: vars.len() })
    }

    /// Parse an expression with no variables and evaluate it.
    pub fn constant(src: &str, params: &BTreeMap<String, f64>) -> Result<f64> {
        Ok(Expr::parse(src, &[], params)?.eval::<f64>(&[]))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.root, Node::Const(_))
    }

    pub fn eval<S: Scalar>(&self, args: &[S]) -> S {
        eval_node(&self.root, args)
    }

    /// Value, first and second derivative of a one-variable expression.
    pub fn jet(&self, x: f64) -> Jet {
        self.eval(&[Jet::var(x)])
    }
}

fn eval_node<S: Scalar>(n: &Node, args: &[S]) -> S {
    match n {
        Node::Const(c) => S::from_f64(*c),
        Node::Var(i) => args[*i],
        Node::Neg(a) => -eval_node(a, args),
        Node::Bin(op, a, b) => {
            let (x, y) = (eval_node(a, args), eval_node(b, args));
            match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                Op::Div => x / y,
                Op::Pow => x.pow(y),
            }
        }
        Node::Call(f, a) => eval_node(a, args).apply(*f),
    }
}

fn fold(n: Node) -> Node {
    match n {
        Node::Neg(a) => match fold(*a) {
            Node::Const(c) => Node::Const(-c),
            a => Node::Neg(Box::new(a)),
        },
        Node::Bin(op, a, b) => {
            let (a, b) = (fold(*a), fold(*b));
            if let (Node::Const(x), Node::Const(y)) = (&a, &b) {
                let args: [f64; 0] = [];
                return Node::Const(eval_node(
                    &Node::Bin(op, Box::new(Node::Const(*x)), Box::new(Node::Const(*y))),
                    &args,
                ));
            }
            Node::Bin(op, Box::new(a), Box::new(b))
        }
        Node::Call(f, a) => match fold(*a) {
            Node::Const(c) => Node::Const(c.apply(f)),
            a => Node::Call(f, Box::new(a)),
        },
        n => n,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
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
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number {s:?} in {src:?}")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character {c:?} in {src:?}")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    vars: &'a [&'a str],
    params: &'a BTreeMap<String, f64>,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Expr(format!("{msg} in {:?}", self.src))
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.err("missing ')'"));
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let f = Func::lookup(&name)
                        .ok_or_else(|| self.err(&format!("unknown function {name:?}")))?;
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return Err(self.err("missing ')'"));
                    }
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                if let Some(v) = self.params.get(&name) {
                    return Ok(Node::Const(*v));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "e" => Ok(Node::Const(std::f64::consts::E)),
                    _ => Err(self.err(&format!("unknown identifier {name:?}"))),
                }
            }
            _ => Err(self.err("unexpected end of expression")),
        }
    }
}
