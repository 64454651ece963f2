//! Lexer and recursive-descent parser for the equation grammar:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := ("-")? atom ("^" integer)?
//! atom   := number | ident | func "(" expr ")" | "(" expr ")"
//! func   := "sin" | "cos" | "exp" | "ln"
//! ```
//!
//! Identifiers other than `x`, `y`, `p` are free parameter names. Exponents
//! are integers; a negative exponent is only accepted over a constant,
//! nonzero base.

use super::{BinOp, ExprAst, Func, Var};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {}; found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("exponent at byte {offset} must be an integer")]
    NonIntegerExponent { offset: usize },
    #[error("negative exponent at byte {offset} requires a constant nonzero base")]
    NegativeExponent { offset: usize },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                toks.push(Token { tok: Tok::Plus, offset: i });
                i += 1;
            }
            b'-' => {
                toks.push(Token { tok: Tok::Minus, offset: i });
                i += 1;
            }
            b'*' => {
                toks.push(Token { tok: Tok::Star, offset: i });
                i += 1;
            }
            b'/' => {
                toks.push(Token { tok: Tok::Slash, offset: i });
                i += 1;
            }
            b'^' => {
                toks.push(Token { tok: Tok::Caret, offset: i });
                i += 1;
            }
            b'(' => {
                toks.push(Token { tok: Tok::LParen, offset: i });
                i += 1;
            }
            b')' => {
                toks.push(Token { tok: Tok::RParen, offset: i });
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    if i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                        i += 1;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        return Err(ParseError::Syntax {
                            offset: i + 1,
                            expected: vec!["digit after decimal point"],
                            found: byte_at(src, i + 1),
                        });
                    }
                }
                // Exponent part: only consumed when followed by a digit
                // (optionally signed), so `2exp(x)` lexes as `2`, `exp`, ...
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    expected: vec!["number"],
                    found: format!("`{text}`"),
                })?;
                toks.push(Token { tok: Tok::Num(v), offset: start });
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push(Token {
                    tok: Tok::Ident(src[start..i].to_string()),
                    offset: start,
                });
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset: i,
                    expected: vec!["number", "identifier", "operator", "'('", "')'"],
                    found: byte_at(src, i),
                });
            }
        }
    }
    toks.push(Token { tok: Tok::Eof, offset: src.len() });
    Ok(toks)
}

fn byte_at(src: &str, offset: usize) -> String {
    match src[offset.min(src.len())..].chars().next() {
        Some(c) => format!("`{c}`"),
        None => "end of input".into(),
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].offset
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: Vec<&'static str>) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            expected,
            found: self.peek().describe(),
        }
    }

    fn parse_expr(&mut self) -> Result<ExprAst, ParseError> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_term()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_term(&mut self) -> Result<ExprAst, ParseError> {
        let mut lhs = self.parse_factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_factor()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_factor(&mut self) -> Result<ExprAst, ParseError> {
        let negate = if matches!(self.peek(), Tok::Minus) {
            self.bump();
            true
        } else {
            false
        };
        let atom = self.parse_atom()?;
        let powered = if matches!(self.peek(), Tok::Caret) {
            self.bump();
            let n = self.parse_exponent(&atom)?;
            ExprAst::Pow(Box::new(atom), n)
        } else {
            atom
        };
        Ok(if negate {
            ExprAst::Neg(Box::new(powered))
        } else {
            powered
        })
    }

    fn parse_exponent(&mut self, base: &ExprAst) -> Result<i32, ParseError> {
        let sign = if matches!(self.peek(), Tok::Minus) {
            self.bump();
            -1
        } else {
            1
        };
        let offset = self.offset();
        let v = match self.peek() {
            Tok::Num(v) => *v,
            _ => return Err(self.err(vec!["integer exponent"])),
        };
        self.bump();
        if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
            return Err(ParseError::NonIntegerExponent { offset });
        }
        let n = sign * v as i32;
        if n < 0 {
            match base.const_value() {
                Some(c) if c != 0.0 => {}
                _ => return Err(ParseError::NegativeExponent { offset }),
            }
        }
        Ok(n)
    }

    fn parse_atom(&mut self) -> Result<ExprAst, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(ExprAst::Num(v))
            }
            Tok::Ident(name) => {
                let offset = self.offset();
                self.bump();
                if matches!(self.peek(), Tok::LParen) {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "ln" => Func::Ln,
                        _ => return Err(ParseError::UnknownFunction { offset, name }),
                    };
                    self.bump();
                    let arg = self.parse_expr()?;
                    if !matches!(self.peek(), Tok::RParen) {
                        return Err(self.err(vec!["')'"]));
                    }
                    self.bump();
                    Ok(ExprAst::Func(func, Box::new(arg)))
                } else {
                    Ok(match name.as_str() {
                        "x" => ExprAst::Var(Var::X),
                        "y" => ExprAst::Var(Var::Y),
                        "p" => ExprAst::Var(Var::P),
                        _ => ExprAst::Param(name),
                    })
                }
            }
            Tok::LParen => {
                self.bump();
                let inner = self.parse_expr()?;
                if !matches!(self.peek(), Tok::RParen) {
                    return Err(self.err(vec!["')'"]));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.err(vec!["number", "identifier", "'('"])),
        }
    }
}

/// Parse an equation source string into an [`ExprAst`].
pub fn parse(src: &str) -> Result<ExprAst, ParseError> {
    let toks = lex(src)?;
    let mut parser = Parser { toks, pos: 0 };
    let ast = parser.parse_expr()?;
    if !matches!(parser.peek(), Tok::Eof) {
        return Err(parser.err(vec!["'+'", "'-'", "'*'", "'/'", "end of input"]));
    }
    Ok(ast)
}
