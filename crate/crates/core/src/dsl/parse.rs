use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{
    Binary, Equation, Operand, OperandRef, StatVariant, Step, StructureError, Unary, UnaryLookup,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax {
        expected: &'static str,
        found: Option<char>,
    },
    UnknownBinary(String),
    UnknownUnary(String),
    UnknownOperand(String),
    UnknownStat(String),
    MissingParameter(String),
    UnexpectedParameter(String),
    IllegalParameter { unary: String, value: String },
    Structure(StructureError),
}

/// A parse failure at a byte offset into the input.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("at position {position}: {kind}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax { expected, found: Some(c) } => {
                write!(f, "syntax error: expected {expected}, found '{c}'")
            }
            ParseErrorKind::Syntax { expected, found: None } => {
                write!(f, "syntax error: expected {expected}, found end of input")
            }
            ParseErrorKind::UnknownBinary(name) => write!(f, "unknown binary function '{name}'"),
            ParseErrorKind::UnknownUnary(name) => write!(f, "unknown unary function '{name}'"),
            ParseErrorKind::UnknownOperand(name) => write!(f, "unknown operand '{name}'"),
            ParseErrorKind::UnknownStat(name) => write!(f, "unknown statistics suffix '.{name}'"),
            ParseErrorKind::MissingParameter(name) => {
                write!(f, "unary '{name}' requires a bracketed parameter")
            }
            ParseErrorKind::UnexpectedParameter(name) => {
                write!(f, "unary '{name}' takes no parameter")
            }
            ParseErrorKind::IllegalParameter { unary, value } => {
                write!(f, "parameter {value} outside the legal set for '{unary}'")
            }
            ParseErrorKind::Structure(e) => write!(f, "{e}"),
        }
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            position: self.pos,
            kind,
        }
    }

    fn expect(&mut self, token: &'static str) -> Result<(), ParseError> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(self.error(ParseErrorKind::Syntax {
                expected: token_name(token),
                found: self.peek(),
            }))
        }
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> (usize, &'a str) {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        (start, &self.src[start..self.pos])
    }

    fn ident(&mut self, expected: &'static str) -> Result<(usize, &'a str), ParseError> {
        self.skip_ws();
        let (start, name) = self.take_while(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        if name.is_empty() {
            return Err(self.error(ParseErrorKind::Syntax {
                expected,
                found: self.peek(),
            }));
        }
        Ok((start, name))
    }
}

fn token_name(token: &'static str) -> &'static str {
    match token {
        "(" => "'('",
        ")" => "')'",
        "," => "','",
        "]" => "']'",
        _ => token,
    }
}

/// Parses the text form `f(u1(op1), u2(op2)) |> f(u1(prev), u2(op2)) ...`.
pub fn parse_equation(text: &str) -> Result<Equation, ParseError> {
    let mut cur = Cursor { src: text, pos: 0 };
    let mut steps = Vec::new();
    let mut step_starts = Vec::new();
    loop {
        cur.skip_ws();
        step_starts.push(cur.pos);
        steps.push(parse_step(&mut cur)?);
        cur.skip_ws();
        if cur.peek().is_none() {
            break;
        }
        if !cur.eat("|>") {
            return Err(cur.error(ParseErrorKind::Syntax {
                expected: "'|>' or end of input",
                found: cur.peek(),
            }));
        }
    }
    Equation::new(steps).map_err(|e| {
        let position = match e {
            StructureError::PrevInFirstStep => step_starts[0],
            StructureError::MissingPrev(n)
            | StructureError::PrevAsSecondOperand(n)
            | StructureError::PrevWithStat(n) => step_starts[n - 1],
            StructureError::StepCount(_) => step_starts.get(super::MAX_STEPS).copied().unwrap_or(0),
        };
        ParseError {
            position,
            kind: ParseErrorKind::Structure(e),
        }
    })
}

fn parse_step(cur: &mut Cursor<'_>) -> Result<Step, ParseError> {
    let (start, name) = cur.ident("binary function name")?;
    let f = Binary::from_name(name).ok_or(ParseError {
        position: start,
        kind: ParseErrorKind::UnknownBinary(name.to_string()),
    })?;
    cur.expect("(")?;
    let (u1, op1) = parse_arg(cur)?;
    cur.expect(",")?;
    let (u2, op2) = parse_arg(cur)?;
    cur.expect(")")?;
    Ok(Step { op1, u1, op2, u2, f })
}

fn parse_arg(cur: &mut Cursor<'_>) -> Result<(Unary, OperandRef), ParseError> {
    let unary = parse_unary(cur)?;
    cur.expect("(")?;
    let operand = parse_operand(cur)?;
    cur.expect(")")?;
    Ok((unary, operand))
}

fn parse_unary(cur: &mut Cursor<'_>) -> Result<Unary, ParseError> {
    let (start, name) = cur.ident("unary function name")?;
    let lookup = Unary::lookup(name).ok_or(ParseError {
        position: start,
        kind: ParseErrorKind::UnknownUnary(name.to_string()),
    })?;
    let has_param = cur.eat("[");
    match (lookup, has_param) {
        (UnaryLookup::Plain(u), false) => Ok(u),
        (UnaryLookup::Plain(_), true) => Err(ParseError {
            position: start,
            kind: ParseErrorKind::UnexpectedParameter(name.to_string()),
        }),
        (UnaryLookup::NeedsParam(_), false) => Err(ParseError {
            position: start,
            kind: ParseErrorKind::MissingParameter(name.to_string()),
        }),
        (UnaryLookup::NeedsParam(tag), true) => {
            cur.skip_ws();
            let (num_start, literal) =
                cur.take_while(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E'));
            let value: f64 = literal.parse().map_err(|_| ParseError {
                position: num_start,
                kind: ParseErrorKind::Syntax {
                    expected: "numeric parameter",
                    found: literal.chars().next().or(cur.peek()),
                },
            })?;
            let unary = Unary::with_param(tag, value).ok_or(ParseError {
                position: num_start,
                kind: ParseErrorKind::IllegalParameter {
                    unary: name.to_string(),
                    value: literal.to_string(),
                },
            })?;
            cur.expect("]")?;
            Ok(unary)
        }
    }
}

fn parse_operand(cur: &mut Cursor<'_>) -> Result<OperandRef, ParseError> {
    let (start, name) = cur.ident("operand name")?;
    let operand = Operand::from_name(name).ok_or(ParseError {
        position: start,
        kind: ParseErrorKind::UnknownOperand(name.to_string()),
    })?;
    let stat = if cur.src[cur.pos..].starts_with('.') {
        cur.pos += 1;
        let (stat_start, stat_name) = cur.take_while(|c| c.is_ascii_lowercase());
        match stat_name {
            "rmean" => StatVariant::RunMean,
            "rstd" => StatVariant::RunStd,
            "rnorm" => StatVariant::RunNorm,
            other => {
                return Err(ParseError {
                    position: stat_start,
                    kind: ParseErrorKind::UnknownStat(other.to_string()),
                })
            }
        }
    } else {
        StatVariant::Raw
    };
    Ok(OperandRef { operand, stat })
}
