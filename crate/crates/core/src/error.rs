use alloc::string::String;

use thiserror::Error;

/// Failures raised while evaluating a parsed expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("expected {expected_state} state and {expected_input} input values, got {got_state} and {got_input}")]
    Dimension {
        expected_state: usize,
        expected_input: usize,
        got_state: usize,
        got_input: usize,
    },
    #[error("{function} is undefined at {argument}")]
    Domain { function: &'static str, argument: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("negative base {base} raised to non-integer exponent {exponent}")]
    FractionalPowerOfNegative { base: f64, exponent: f64 },
    #[error("non-finite result from {0}")]
    NonFinite(&'static str),
}

/// Kind of a parse failure; the position is carried by [`ParseError`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    InvalidNumber(String),
    UnknownIdentifier(String),
    VariableOutOfRange { name: String, n: usize, m: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} at position {position}", describe(kind))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

fn describe(kind: &ParseErrorKind) -> String {
    use alloc::format;
    match kind {
        ParseErrorKind::Empty => "empty expression".into(),
        ParseErrorKind::UnexpectedChar(c) => format!("syntax error: unexpected character `{c}`"),
        ParseErrorKind::UnexpectedToken(t) => format!("syntax error: unexpected `{t}`"),
        ParseErrorKind::UnexpectedEnd => "syntax error: unexpected end of input".into(),
        ParseErrorKind::InvalidNumber(s) => format!("syntax error: invalid number `{s}`"),
        ParseErrorKind::UnknownIdentifier(s) => format!("unknown identifier `{s}`"),
        ParseErrorKind::VariableOutOfRange { name, n, m } => {
            format!("variable `{name}` out of range for n = {n}, m = {m}")
        }
    }
}

impl ParseError {
    pub fn is_syntax(&self) -> bool {
        !matches!(
            self.kind,
            ParseErrorKind::UnknownIdentifier(_) | ParseErrorKind::VariableOutOfRange { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parse error in `{source_text}`: {error}")]
    Parse { source_text: String, error: ParseError },
    #[error("evaluation failed at {context}: {source}")]
    Eval { context: String, source: EvalError },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid plant: {0}")]
    InvalidPlant(String),
    #[error("unknown plant `{name}`; available: {available}")]
    UnknownPlant { name: String, available: String },
    #[error("negative error bound δ = {value} at {context}")]
    NegativeBound { value: f64, context: String },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("cell masks belong to different grids")]
    GridMismatch,
    #[error("the origin is not inside the grid")]
    OriginOutsideGrid,
    #[error("monomial basis too large: {size} > {max}")]
    BasisTooLarge { size: usize, max: usize },
    #[error("invalid Lyapunov function: {0}")]
    InvalidLyapunov(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel matrix is ill-conditioned even with jitter {jitter}")]
    IllConditioned { jitter: f64 },
    #[error("no trajectories to summarize")]
    NoTrajectories,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
