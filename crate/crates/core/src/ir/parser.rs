//! Hand-written lexer and recursive-descent parser for `.tev` programs.

use std::sync::Arc;

use super::ast::{Expr, ExprKind, Ident, Loop, LoopProgram, Param, Span, Stmt};
use super::ParseError;
use crate::tensor::{BinaryOp, Shape, SliceSpec, UnaryOp};
use crate::Tensor;

pub const KEYWORDS: &[&str] = &["func", "tensor", "for", "in", "return"];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    /// Numeric literal text; `integral` when it has no fraction or exponent.
    Number { text: String, integral: bool },
    Punct(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: Span,
}

const PUNCTS: &[&str] = &["..", "(", ")", "{", "}", "[", "]", "<", ">", ",", ":", "=", ";"];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let span = Span::new(line, col);
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut line, &mut col, 1);
            }
            tokens.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                span,
            });
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()));
        if starts_number {
            let start = i;
            let mut integral = true;
            advance(&mut i, &mut line, &mut col, 1);
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&mut i, &mut line, &mut col, 1);
            }
            if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                integral = false;
                advance(&mut i, &mut line, &mut col, 1);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(&mut i, &mut line, &mut col, 1);
                }
            }
            if matches!(chars.get(i), Some('e') | Some('E')) {
                let mut j = i + 1;
                if matches!(chars.get(j), Some('+') | Some('-')) {
                    j += 1;
                }
                if chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
                    integral = false;
                    let n = j - i;
                    advance(&mut i, &mut line, &mut col, n);
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        advance(&mut i, &mut line, &mut col, 1);
                    }
                }
            }
            tokens.push(Token {
                tok: Tok::Number {
                    text: chars[start..i].iter().collect(),
                    integral,
                },
                span,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                tokens.push(Token {
                    tok: Tok::Punct(p),
                    span,
                });
                advance(&mut i, &mut line, &mut col, p.len());
            }
            None => {
                return Err(ParseError::Syntax {
                    line,
                    column: col,
                    message: format!("unexpected character {c:?}"),
                })
            }
        }
    }
    tokens.push(Token {
        tok: Tok::Eof,
        span: Span::new(line, col),
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let idx = (self.pos + ahead).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let span = self.span();
        Err(ParseError::Syntax {
            line: span.line,
            column: span.column,
            message: message.into(),
        })
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number { text, .. } => format!("number {text}"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn expect(&mut self, punct: &'static str) -> Result<Span, ParseError> {
        if *self.peek() == Tok::Punct(punct) {
            Ok(self.bump().span)
        } else {
            self.error(format!("expected `{punct}`, found {}", Self::describe(self.peek())))
        }
    }

    fn eat(&mut self, punct: &'static str) -> bool {
        if *self.peek() == Tok::Punct(punct) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<Span, ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => Ok(self.bump().span),
            other => {
                let found = Self::describe(other);
                self.error(format!("expected `{kw}`, found {found}"))
            }
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let span = self.bump().span;
                Ok((s, span))
            }
            other => self.error(format!("expected identifier, found {}", Self::describe(&other))),
        }
    }

    fn integer(&mut self) -> Result<u64, ParseError> {
        match self.peek().clone() {
            Tok::Number {
                text,
                integral: true,
            } if !text.starts_with('-') => match text.parse::<u64>() {
                Ok(v) => {
                    self.bump();
                    Ok(v)
                }
                Err(_) => self.error(format!("integer {text} is out of range")),
            },
            other => self.error(format!(
                "expected non-negative integer, found {}",
                Self::describe(&other)
            )),
        }
    }

    fn usize(&mut self) -> Result<usize, ParseError> {
        let v = self.integer()?;
        usize::try_from(v).or_else(|_| self.error("integer out of range"))
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match self.peek().clone() {
            Tok::Number { text, .. } => {
                let v: f64 = match text.parse() {
                    Ok(v) => v,
                    Err(_) => return self.error(format!("malformed number {text}")),
                };
                if !v.is_finite() {
                    return self.error(format!("number {text} is not finite"));
                }
                self.bump();
                Ok(v)
            }
            other => self.error(format!("expected number, found {}", Self::describe(&other))),
        }
    }

    /// `[d0, d1, ...]`, possibly empty.
    fn int_list(&mut self) -> Result<Vec<usize>, ParseError> {
        self.expect("[")?;
        let mut out = Vec::new();
        if !self.eat("]") {
            loop {
                out.push(self.usize()?);
                if self.eat("]") {
                    break;
                }
                self.expect(",")?;
            }
        }
        Ok(out)
    }

    /// `<d0, d1, ...>` after the `tensor` keyword.
    fn angle_dims(&mut self) -> Result<Shape, ParseError> {
        self.expect("<")?;
        let mut dims = Vec::new();
        if !self.eat(">") {
            loop {
                dims.push(self.usize()?);
                if self.eat(">") {
                    break;
                }
                self.expect(",")?;
            }
        }
        Ok(Shape::new(dims))
    }

    fn slice_spec(&mut self) -> Result<SliceSpec, ParseError> {
        self.expect("[")?;
        let mut ranges = Vec::new();
        if !self.eat("]") {
            loop {
                let start = self.usize()?;
                self.expect(":")?;
                let stop = self.usize()?;
                ranges.push((start, stop));
                if self.eat("]") {
                    break;
                }
                self.expect(",")?;
            }
        }
        Ok(SliceSpec::new(ranges))
    }

    fn program(&mut self) -> Result<LoopProgram, ParseError> {
        self.keyword("func")?;
        let (name, _) = self.ident()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if !self.eat(")") {
            loop {
                let (pname, span) = self.ident()?;
                self.expect(":")?;
                self.keyword("tensor")?;
                let shape = self.angle_dims()?;
                params.push(Param {
                    name: pname,
                    shape,
                    span,
                });
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect("{")?;
        let pre_stmts = self.stmts()?;
        let lp = if self.at_keyword("for") {
            Some(self.loop_()?)
        } else {
            None
        };
        let post_stmts = self.stmts()?;
        self.keyword("return")?;
        let mut returns = Vec::new();
        loop {
            let (rname, span) = self.ident()?;
            returns.push(Ident { name: rname, span });
            if !self.eat(",") {
                break;
            }
        }
        self.eat(";");
        self.expect("}")?;
        if *self.peek() != Tok::Eof {
            return self.error(format!(
                "unexpected {} after program",
                Self::describe(self.peek())
            ));
        }
        Ok(LoopProgram {
            name,
            params,
            pre_stmts,
            lp,
            post_stmts,
            returns,
        })
    }

    fn loop_(&mut self) -> Result<Loop, ParseError> {
        let span = self.keyword("for")?;
        let (counter, _) = self.ident()?;
        self.keyword("in")?;
        match self.peek() {
            Tok::Number { text, integral: true } if text == "0" => {
                self.bump();
            }
            _ => return self.error("loop range must start at 0"),
        }
        self.expect("..")?;
        let trip_count = self.integer()?;
        self.expect("{")?;
        let body = self.stmts()?;
        self.expect("}")?;
        Ok(Loop {
            counter,
            trip_count,
            body,
            span,
        })
    }

    fn stmts(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut out = Vec::new();
        while matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()))
            && *self.peek_at(1) == Tok::Punct("=")
        {
            let (name, span) = self.ident()?;
            self.expect("=")?;
            let value = self.expr()?;
            self.eat(";");
            out.push(Stmt { name, value, span });
        }
        Ok(out)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Number { .. } => ExprKind::Literal {
                value: Tensor::scalar(self.number()?),
            },
            Tok::Ident(s) if s == "tensor" => {
                self.bump();
                let shape = self.angle_dims()?;
                self.expect("[")?;
                let mut data = Vec::new();
                if !self.eat("]") {
                    loop {
                        data.push(self.number()?);
                        if self.eat("]") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                match Tensor::new(shape, data) {
                    Ok(value) => ExprKind::Literal { value },
                    Err(e) => {
                        return Err(ParseError::Syntax {
                            line: span.line,
                            column: span.column,
                            message: e.to_string(),
                        })
                    }
                }
            }
            Tok::Ident(s) if *self.peek_at(1) == Tok::Punct("(") => {
                self.bump();
                self.expect("(")?;
                let kind = self.call(&s)?;
                self.expect(")")?;
                kind
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident()?;
                ExprKind::Var { name }
            }
            other => {
                return self.error(format!("expected expression, found {}", Self::describe(&other)))
            }
        };
        Ok(Expr { kind, span })
    }

    fn arg(&mut self) -> Result<Arc<Expr>, ParseError> {
        Ok(Arc::new(self.expr()?))
    }

    fn call(&mut self, name: &str) -> Result<ExprKind, ParseError> {
        Ok(match name {
            "add" | "sub" | "mul" => {
                let kind = match name {
                    "add" => BinaryOp::Add,
                    "sub" => BinaryOp::Sub,
                    _ => BinaryOp::Mul,
                };
                let lhs = self.arg()?;
                self.expect(",")?;
                let rhs = self.arg()?;
                ExprKind::Binary { kind, lhs, rhs }
            }
            "neg" | "log" | "exp" => {
                let kind = match name {
                    "neg" => UnaryOp::Neg,
                    "log" => UnaryOp::Log,
                    _ => UnaryOp::Exp,
                };
                ExprKind::Unary {
                    kind,
                    arg: self.arg()?,
                }
            }
            "scale" => {
                let factor = self.number()?;
                self.expect(",")?;
                ExprKind::Scale {
                    factor,
                    arg: self.arg()?,
                }
            }
            "pow" => {
                let base = self.arg()?;
                self.expect(",")?;
                ExprKind::Pow {
                    base,
                    exponent: self.arg()?,
                }
            }
            "reshape" | "broadcast" => {
                let arg = self.arg()?;
                self.expect(",")?;
                let shape = Shape::new(self.int_list()?);
                if name == "reshape" {
                    ExprKind::Reshape { arg, shape }
                } else {
                    ExprKind::Broadcast { arg, shape }
                }
            }
            "transpose" => {
                let arg = self.arg()?;
                self.expect(",")?;
                ExprKind::Transpose {
                    arg,
                    perm: self.int_list()?,
                }
            }
            "slice" => {
                let arg = self.arg()?;
                self.expect(",")?;
                ExprKind::Slice {
                    arg,
                    spec: self.slice_spec()?,
                }
            }
            "concat" => {
                let lhs = self.arg()?;
                self.expect(",")?;
                let rhs = self.arg()?;
                self.expect(",")?;
                ExprKind::Concat {
                    lhs,
                    rhs,
                    axis: self.usize()?,
                }
            }
            "zeros" => ExprKind::Zeros {
                shape: Shape::new(self.int_list()?),
            },
            "ones" => ExprKind::Ones {
                shape: Shape::new(self.int_list()?),
            },
            other => return self.error(format!("unknown operation `{other}`")),
        })
    }
}

/// Parses program text without name resolution or shape checks.
pub fn parse_syntax(text: &str) -> Result<LoopProgram, ParseError> {
    let tokens = lex(text)?;
    Parser { tokens, pos: 0 }.program()
}
