//! Small expression language for coefficients `a(t, x)`.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'i' | 'x' | 't' | 'pi' | '<x>' | func '(' expr ')' | '(' expr ')'
//! func  := exp | sin | cos | sqrt | br
//! ```
//!
//! `<x>` and `br(y)` are the bracket `(1 + y²)^{1/2}`. Example: `i*<x>^-0.5`.

use std::fmt;

use num_complex::Complex;

use crate::scalar::{bracket, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Exp,
    Sin,
    Cos,
    Sqrt,
    Bracket,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    I,
    X,
    T,
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// Parsed expression in the variables `t` and `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut p = Parser { s: src.as_bytes(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Self { root, source: src.to_string() })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn depends_on_t(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::T => true,
                Node::Num(_) | Node::I | Node::X => false,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a) || walk(b)
                }
            }
        }
        walk(&self.root)
    }

    pub fn eval<S: Real>(&self, t: S, x: S) -> Complex<S> {
        eval(&self.root, t, x)
    }
}

fn eval<S: Real>(n: &Node, t: S, x: S) -> Complex<S> {
    let re = |v: S| Complex::new(v, S::zero());
    match n {
        Node::Num(v) => re(S::lit(*v)),
        Node::I => Complex::new(S::zero(), S::one()),
        Node::X => re(x),
        Node::T => re(t),
        Node::Add(a, b) => eval(a, t, x) + eval(b, t, x),
        Node::Sub(a, b) => eval(a, t, x) - eval(b, t, x),
        Node::Mul(a, b) => eval(a, t, x) * eval(b, t, x),
        Node::Div(a, b) => eval(a, t, x) / eval(b, t, x),
        Node::Neg(a) => -eval(a, t, x),
        Node::Pow(a, b) => {
            let base = eval(a, t, x);
            let e = eval(b, t, x);
            if e.im == S::zero() && base.im == S::zero() && base.re >= S::zero() {
                re(base.re.powf(e.re))
            } else if e.im == S::zero() && e.re == e.re.round() {
                base.powi(e.re.to_i32().unwrap_or(0))
            } else {
                base.powc(e)
            }
        }
        Node::Call(f, a) => {
            let v = eval(a, t, x);
            match f {
                Func::Exp => v.exp(),
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Sqrt => v.sqrt(),
                Func::Bracket => {
                    if v.im == S::zero() {
                        re(bracket(v.re))
                    } else {
                        (Complex::new(S::one(), S::zero()) + v * v).sqrt()
                    }
                }
            }
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ParseError {
        ParseError { position: self.pos, message: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let e = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(e)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(b'<') => {
                self.pos += 1;
                if self.eat(b'x') && self.eat(b'>') {
                    Ok(Node::Call(Func::Bracket, Box::new(Node::X)))
                } else {
                    Err(self.err("expected '<x>'"))
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
                let func = match word {
                    "i" => return Ok(Node::I),
                    "x" => return Ok(Node::X),
                    "t" => return Ok(Node::T),
                    "pi" => return Ok(Node::Num(std::f64::consts::PI)),
                    "exp" => Func::Exp,
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "sqrt" => Func::Sqrt,
                    "br" => Func::Bracket,
                    _ => {
                        self.pos = start;
                        return Err(self.err(&format!("unknown identifier '{word}'")));
                    }
                };
                if !self.eat(b'(') {
                    return Err(self.err("expected '(' after function name"));
                }
                let arg = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(Node::Call(func, Box::new(arg)))
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_digit() || self.s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.s.len() && (self.s[self.pos] == b'e' || self.s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.s.len() && (self.s[self.pos] == b'-' || self.s[self.pos] == b'+') {
                self.pos += 1;
            }
            if self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ParseError { position: start, message: format!("bad number '{text}'") })
    }
}
