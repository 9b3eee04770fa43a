//! Scalar expressions over state variables `x1..xn` and inputs `u1..um`.
//!
//! Grammar, lowest to highest precedence:
//!
//! | level | operators           | associativity |
//! |-------|---------------------|---------------|
//! | 1     | `+` `-` (binary)    | left          |
//! | 2     | `*` `/`             | left          |
//! | 3     | `-` `+` (prefix)    | n/a           |
//! | 4     | `^`                 | right         |
//!
//! `-x^2` is `-(x^2)`, `2^3^2` is `2^(3^2) = 512` and `2^-1` is `0.5`.
//! Functions: `sin cos exp log sqrt abs tanh`. The constant `pi` is
//! recognised, and when `n == 1` (`m == 1`) the bare names `x` (`u`) alias
//! `x1` (`u1`).
//!
//! Evaluation never returns NaN or an infinity: every such outcome is
//! reported as an [`EvalError`].

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use core::fmt;

use crate::error::{EvalError, ParseError, ParseErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Function {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Function {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "log" => Self::Log,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            "tanh" => Self::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Log => "log",
            Self::Sqrt => "sqrt",
            Self::Abs => "abs",
            Self::Tanh => "tanh",
        }
    }

    fn apply(self, a: f64) -> Result<f64, EvalError> {
        let value = match self {
            Self::Sin => libm::sin(a),
            Self::Cos => libm::cos(a),
            Self::Exp => libm::exp(a),
            Self::Log => {
                if a <= 0.0 {
                    return Err(EvalError::Domain { function: "log", argument: a });
                }
                libm::log(a)
            }
            Self::Sqrt => {
                if a < 0.0 {
                    return Err(EvalError::Domain { function: "sqrt", argument: a });
                }
                libm::sqrt(a)
            }
            Self::Abs => libm::fabs(a),
            Self::Tanh => libm::tanh(a),
        };
        finite(value, self.name())
    }
}

/// Abstract syntax tree. Variable indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    State(usize),
    Input(usize),
    Neg(Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Call(Function, Box<Node>),
}

fn finite(value: f64, origin: &'static str) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::NonFinite(origin))
    }
}

fn power(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if base < 0.0 && libm::trunc(exponent) != exponent {
        return Err(EvalError::FractionalPowerOfNegative { base, exponent });
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    finite(libm::pow(base, exponent), "^")
}

impl Node {
    fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::State(i) => Ok(x[*i]),
            Node::Input(j) => Ok(u[*j]),
            Node::Neg(a) => Ok(-a.eval(x, u)?),
            Node::Call(f, a) => f.apply(a.eval(x, u)?),
            Node::Binary(op, a, b) => {
                let a = a.eval(x, u)?;
                let b = b.eval(x, u)?;
                match op {
                    BinaryOp::Add => finite(a + b, "+"),
                    BinaryOp::Sub => finite(a - b, "-"),
                    BinaryOp::Mul => finite(a * b, "*"),
                    BinaryOp::Div => {
                        if b == 0.0 {
                            Err(EvalError::DivisionByZero)
                        } else {
                            finite(a / b, "/")
                        }
                    }
                    BinaryOp::Pow => power(a, b),
                }
            }
        }
    }
}

/// A parsed, immutable expression bound to a state dimension `n` and input
/// dimension `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    n: usize,
    m: usize,
}

impl Expression {
    pub fn parse(source: &str, n: usize, m: usize) -> Result<Self, ParseError> {
        let mut parser = Parser { src: source, pos: 0, n, m };
        parser.skip_ws();
        if parser.pos == source.len() {
            return Err(ParseError { kind: ParseErrorKind::Empty, position: 0 });
        }
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos < source.len() {
            let (tok, at) = parser.peek_token_text();
            return Err(ParseError { kind: ParseErrorKind::UnexpectedToken(tok), position: at });
        }
        Ok(Self { root, n, m })
    }

    pub fn constant(value: f64, n: usize, m: usize) -> Self {
        Self { root: Node::Const(value), n, m }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn evaluate(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.n || u.len() != self.m {
            return Err(EvalError::Dimension {
                expected_state: self.n,
                expected_input: self.m,
                got_state: x.len(),
                got_input: u.len(),
            });
        }
        self.root.eval(x, u)
    }
}

/// Fully parenthesised form that reparses to an identical tree.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn write_node(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        // `{:?}` is the shortest representation that round-trips.
        Node::Const(c) => write!(f, "{c:?}"),
        Node::State(i) => write!(f, "x{}", i + 1),
        Node::Input(j) => write!(f, "u{}", j + 1),
        Node::Neg(a) => {
            f.write_str("(-")?;
            write_node(a, f)?;
            f.write_str(")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, f)?;
            f.write_str(")")
        }
        Node::Binary(op, a, b) => {
            let sym = match op {
                BinaryOp::Add => " + ",
                BinaryOp::Sub => " - ",
                BinaryOp::Mul => " * ",
                BinaryOp::Div => " / ",
                BinaryOp::Pow => "^",
            };
            f.write_str("(")?;
            write_node(a, f)?;
            f.write_str(sym)?;
            write_node(b, f)?;
            f.write_str(")")
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    n: usize,
    m: usize,
}

impl Parser<'_> {
    fn bytes(&self) -> &[u8] {
        self.src.as_bytes()
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes().get(self.pos).copied()
    }

    fn error(&self, kind: ParseErrorKind, position: usize) -> ParseError {
        ParseError { kind, position }
    }

    fn peek_token_text(&mut self) -> (String, usize) {
        self.skip_ws();
        let at = self.pos;
        match self.src[at..].chars().next() {
            Some(c) => (c.to_string(), at),
            None => (String::new(), at),
        }
    }

    fn unexpected_here(&mut self) -> ParseError {
        self.skip_ws();
        let at = self.pos;
        match self.src[at..].chars().next() {
            None => self.error(ParseErrorKind::UnexpectedEnd, at),
            Some(c) if c.is_ascii_alphanumeric() || "+-*/^().".contains(c) => {
                self.error(ParseErrorKind::UnexpectedToken(c.to_string()), at)
            }
            Some(c) => self.error(ParseErrorKind::UnexpectedChar(c), at),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // Recursing through `unary` makes `^` right-associative and
            // admits signed exponents.
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_close()?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            _ => Err(self.unexpected_here()),
        }
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(b')') {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected_here())
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let bytes = self.bytes();
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut probe = end + 1;
            if probe < bytes.len() && (bytes[probe] == b'+' || bytes[probe] == b'-') {
                probe += 1;
            }
            if probe < bytes.len() && bytes[probe].is_ascii_digit() {
                while probe < bytes.len() && bytes[probe].is_ascii_digit() {
                    probe += 1;
                }
                end = probe;
            }
        }
        let text = &self.src[start..end];
        let value: f64 = text
            .parse()
            .map_err(|_| self.error(ParseErrorKind::InvalidNumber(text.to_string()), start))?;
        self.pos = end;
        Ok(Node::Const(value))
    }

    fn identifier(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let bytes = self.bytes();
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
            end += 1;
        }
        let name = &self.src[start..end];
        self.pos = end;

        if let Some(func) = Function::from_name(name) {
            if self.peek() != Some(b'(') {
                return Err(self.unexpected_here());
            }
            self.pos += 1;
            let arg = self.expr()?;
            self.expect_close()?;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        match name {
            "pi" => return Ok(Node::Const(core::f64::consts::PI)),
            "x" if self.n == 1 => return Ok(Node::State(0)),
            "u" if self.m == 1 => return Ok(Node::Input(0)),
            _ => {}
        }
        let (prefix, digits) = name.split_at(1);
        if (prefix == "x" || prefix == "u")
            && !digits.is_empty()
            && digits.bytes().all(|b| b.is_ascii_digit())
        {
            let limit = if prefix == "x" { self.n } else { self.m };
            return match digits.parse::<usize>() {
                Ok(k) if k >= 1 && k <= limit => {
                    Ok(if prefix == "x" { Node::State(k - 1) } else { Node::Input(k - 1) })
                }
                _ => Err(self.error(
                    ParseErrorKind::VariableOutOfRange { name: name.to_string(), n: self.n, m: self.m },
                    start,
                )),
            };
        }
        Err(self.error(ParseErrorKind::UnknownIdentifier(name.to_string()), start))
    }
}
