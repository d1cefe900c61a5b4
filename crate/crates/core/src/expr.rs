//! Closed-form time-varying interaction weights.
//!
//! Weights are written as infix expressions over the time variable `t`,
//! the reserved scale parameter `eps`, numeric literals, `+ - * /`,
//! unary minus, and the functions `sin`, `cos`, `exp`. The grammar is
//! deliberately tiny: every accepted expression is smooth in `t`, which
//! the downstream analysis relies on. `eps` is a parameter rather than a
//! variable so the same parsed expression can be re-evaluated across a
//! sweep of coupling scales without re-parsing.

use std::fmt;

use crate::error::Error;
use crate::Result;

/// A parsed weight expression. Immutable after parse; cheap to share
/// across threads and evaluate concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightExpr {
    root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Time,
    Eps,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl WeightExpr {
    /// Parse `source` into an expression tree. Errors carry the byte
    /// offset of the offending token.
    pub fn parse(source: &str) -> Result<WeightExpr> {
        let tokens = lex(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expression()?;
        match parser.peek() {
            Token::End => Ok(WeightExpr { root }),
            tok => Err(parser.unexpected(tok)),
        }
    }

    /// Evaluate at time `t` with scale parameter `eps`. Pure IEEE double
    /// arithmetic; division by zero yields an infinity which network
    /// validation rejects later.
    pub fn eval(&self, t: f64, eps: f64) -> f64 {
        eval_node(&self.root, t, eps)
    }

    /// Wrap this expression in a multiplication by `factor`.
    /// Used by tests and sweeps that rescale whole weight families.
    pub fn scaled(&self, factor: f64) -> WeightExpr {
        WeightExpr {
            root: Node::Bin(
                BinOp::Mul,
                Box::new(Node::Num(factor)),
                Box::new(self.root.clone()),
            ),
        }
    }
}

fn eval_node(node: &Node, t: f64, eps: f64) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Time => t,
        Node::Eps => eps,
        Node::Neg(inner) => -eval_node(inner, t, eps),
        Node::Bin(op, lhs, rhs) => {
            let a = eval_node(lhs, t, eps);
            let b = eval_node(rhs, t, eps);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            }
        }
        Node::Call(func, arg) => {
            let x = eval_node(arg, t, eps);
            match func {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
            }
        }
    }
}

// Pretty-printing re-parses to an identical tree modulo redundant
// parentheses; round-tripping is covered by property tests.
impl fmt::Display for WeightExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, 0)
    }
}

/// Precedence used both by the parser and the printer:
/// 1 additive, 2 multiplicative, 3 unary.
fn precedence(node: &Node) -> u8 {
    match node {
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Node::Neg(_) => 3,
        _ => 4,
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node, min_prec: u8) -> fmt::Result {
    let prec = precedence(node);
    let parens = prec < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match node {
        Node::Num(v) => write!(f, "{v}")?,
        Node::Time => write!(f, "t")?,
        Node::Eps => write!(f, "eps")?,
        Node::Neg(inner) => {
            write!(f, "-")?;
            write_node(f, inner, 4)?;
        }
        Node::Bin(op, lhs, rhs) => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            };
            write_node(f, lhs, prec)?;
            write!(f, "{sym}")?;
            // Left-associative: the right child needs strictly higher
            // binding to print unparenthesized.
            write_node(f, rhs, prec + 1)?;
        }
        Node::Call(func, arg) => {
            let name = match func {
                Func::Sin => "sin",
                Func::Cos => "cos",
                Func::Exp => "exp",
            };
            write!(f, "{name}(")?;
            write_node(f, arg, 0)?;
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
    End,
}

fn lex(source: &str) -> Result<Vec<(Token, usize)>> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                tokens.push((Token::Plus, i));
                i += 1;
            }
            b'-' => {
                tokens.push((Token::Minus, i));
                i += 1;
            }
            b'*' => {
                tokens.push((Token::Star, i));
                i += 1;
            }
            b'/' => {
                tokens.push((Token::Slash, i));
                i += 1;
            }
            b'(' => {
                tokens.push((Token::Open, i));
                i += 1;
            }
            b')' => {
                tokens.push((Token::Close, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i], b'0'..=b'9' | b'.') {
                    i += 1;
                }
                // Exponent suffix, e.g. 1.5e-3.
                if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &source[start..i];
                let value: f64 = text.parse().map_err(|_| Error::Parse {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                tokens.push((Token::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push((Token::Ident(source[start..i].to_string()), start));
            }
            _ => {
                return Err(Error::Parse {
                    offset: i,
                    message: format!(
                        "unexpected character `{}`",
                        source[i..].chars().next().unwrap()
                    ),
                });
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    tokens.push((Token::End, source.len()));
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&self, tok: &Token) -> Error {
        let shown = match tok {
            Token::End => "end of input".to_string(),
            Token::Num(v) => format!("number `{v}`"),
            Token::Ident(name) => format!("`{name}`"),
            Token::Plus => "`+`".into(),
            Token::Minus => "`-`".into(),
            Token::Star => "`*`".into(),
            Token::Slash => "`/`".into(),
            Token::Open => "`(`".into(),
            Token::Close => "`)`".into(),
        };
        Error::Parse {
            offset: self.offset(),
            message: format!("unexpected {shown}"),
        }
    }

    /// expression := term (("+" | "-") term)*
    fn expression(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Token::Plus => BinOp::Add,
                Token::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    /// term := factor (("*" | "/") factor)*
    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Token::Star => BinOp::Mul,
                Token::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    /// factor := "-" factor | primary
    fn factor(&mut self) -> Result<Node> {
        if matches!(self.peek(), Token::Minus) {
            self.bump();
            let inner = self.factor()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.primary()
    }

    /// primary := number | "t" | "eps" | func "(" expression ")" | "(" expression ")"
    fn primary(&mut self) -> Result<Node> {
        let offset = self.offset();
        match self.bump() {
            Token::Num(value) => Ok(Node::Num(value)),
            Token::Ident(name) => match name.as_str() {
                "t" => Ok(Node::Time),
                "eps" => Ok(Node::Eps),
                "sin" | "cos" | "exp" => {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        _ => Func::Exp,
                    };
                    if !matches!(self.peek(), Token::Open) {
                        return Err(Error::Parse {
                            offset: self.offset(),
                            message: format!("expected `(` after function `{name}`"),
                        });
                    }
                    self.bump();
                    let arg = self.expression()?;
                    if !matches!(self.peek(), Token::Close) {
                        return Err(self.unexpected(&self.peek().clone()));
                    }
                    self.bump();
                    Ok(Node::Call(func, Box::new(arg)))
                }
                other => Err(Error::Parse {
                    offset,
                    message: format!(
                        "unknown identifier `{other}` (expected t, eps, sin, cos or exp)"
                    ),
                }),
            },
            Token::Open => {
                let inner = self.expression()?;
                if !matches!(self.peek(), Token::Close) {
                    return Err(self.unexpected(&self.peek().clone()));
                }
                self.bump();
                Ok(inner)
            }
            tok => Err(Error::Parse {
                offset,
                message: format!("unexpected {}", describe(&tok)),
            }),
        }
    }
}

fn describe(tok: &Token) -> String {
    match tok {
        Token::End => "end of input".into(),
        Token::Close => "`)`".into(),
        Token::Plus => "`+`".into(),
        Token::Star => "`*`".into(),
        Token::Slash => "`/`".into(),
        Token::Minus => "`-`".into(),
        Token::Open => "`(`".into(),
        Token::Num(v) => format!("number `{v}`"),
        Token::Ident(name) => format!("`{name}`"),
    }
}
