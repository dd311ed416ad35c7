//! Lexer and recursive-descent parser for the SELECT subset.
//!
//! ```text
//! query     := SELECT projection FROM ident [WHERE or_expr] [';']
//! projection:= '*' | ident (',' ident)*
//! or_expr   := and_expr (OR and_expr)*
//! and_expr  := not_expr (AND not_expr)*
//! not_expr  := NOT not_expr | primary
//! primary   := '(' or_expr ')'
//!            | ident cmp_op literal
//!            | ident BETWEEN literal AND literal
//!            | ident LIKE string
//! ```
//! Keywords are case-insensitive; identifiers are case-sensitive and may be
//! double-quoted. Strings are single-quoted with `''` as the escape.

use std::fmt;

use thiserror::Error;

use super::ast::{CompareOp, Literal, Predicate, Projection, QueryAst};

const KEYWORDS: [&str; 8] = ["SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "BETWEEN", "LIKE"];

pub(crate) fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at position {position}: expected {}, found {found}", expected.join(" or "))]
pub struct SyntaxError {
    /// Byte offset into the query text.
    pub position: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Keyword(&'static str),
    Ident(String),
    Number(String),
    Str(String),
    Op(CompareOp),
    Star,
    Comma,
    LParen,
    RParen,
    Semicolon,
    Eof,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Keyword(k) => f.write_str(k),
            Token::Ident(s) => write!(f, "identifier `{s}`"),
            Token::Number(n) => write!(f, "number {n}"),
            Token::Str(s) => write!(f, "string '{s}'"),
            Token::Op(op) => write!(f, "`{}`", op.symbol()),
            Token::Star => f.write_str("`*`"),
            Token::Comma => f.write_str("`,`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
            Token::Semicolon => f.write_str("`;`"),
            Token::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(input: &str) -> Result<Vec<(usize, Token)>, SyntaxError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let err = |position: usize, expected: &str, found: String| SyntaxError {
        position,
        expected: vec![expected.to_string()],
        found,
    };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let token = match c {
            b'*' => {
                i += 1;
                Token::Star
            }
            b',' => {
                i += 1;
                Token::Comma
            }
            b'(' => {
                i += 1;
                Token::LParen
            }
            b')' => {
                i += 1;
                Token::RParen
            }
            b';' => {
                i += 1;
                Token::Semicolon
            }
            b'=' => {
                i += 1;
                Token::Op(CompareOp::Eq)
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 2;
                    Token::Op(CompareOp::Le)
                }
                Some(b'>') => {
                    i += 2;
                    Token::Op(CompareOp::Ne)
                }
                _ => {
                    i += 1;
                    Token::Op(CompareOp::Lt)
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Token::Op(CompareOp::Ge)
                } else {
                    i += 1;
                    Token::Op(CompareOp::Gt)
                }
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 2;
                Token::Op(CompareOp::Ne)
            }
            b'\'' => {
                let (s, next) = quoted(input, i, '\'').ok_or_else(|| err(i, "closing `'`", "end of input".into()))?;
                i = next;
                Token::Str(s)
            }
            b'"' => {
                let (s, next) = quoted(input, i, '"').ok_or_else(|| err(i, "closing `\"`", "end of input".into()))?;
                if s.is_empty() {
                    return Err(err(i, "identifier", "empty quoted identifier".into()));
                }
                i = next;
                Token::Ident(s)
            }
            b'0'..=b'9' | b'-' => {
                if c == b'-' {
                    i += 1;
                }
                let digits_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i == digits_start {
                    return Err(err(start, "number", format!("`{}`", &input[start..i.max(start + 1)])));
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(err(i, "digit after `.`", found_at(input, i)));
                    }
                }
                Token::Number(input[start..i].to_string())
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &input[start..i];
                match KEYWORDS.iter().find(|k| k.eq_ignore_ascii_case(word)) {
                    Some(k) => Token::Keyword(k),
                    None => Token::Ident(word.to_string()),
                }
            }
            _ => return Err(err(i, "token", found_at(input, i))),
        };
        tokens.push((start, token));
    }
    tokens.push((input.len(), Token::Eof));
    Ok(tokens)
}

fn found_at(input: &str, i: usize) -> String {
    input[i..]
        .chars()
        .next()
        .map_or("end of input".to_string(), |c| format!("`{c}`"))
}

/// Reads a `quote`-delimited run starting at byte `start`, with a doubled
/// quote as escape. Returns the content and the index after the closing quote.
fn quoted(input: &str, start: usize, quote: char) -> Option<(String, usize)> {
    let mut out = String::new();
    let mut chars = input[start + 1..].char_indices().peekable();
    while let Some((off, c)) = chars.next() {
        if c == quote {
            if chars.peek().map(|&(_, n)| n) == Some(quote) {
                chars.next();
                out.push(quote);
            } else {
                return Some((out, start + 1 + off + 1));
            }
        } else {
            out.push(c);
        }
    }
    None
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].1
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].1.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let (position, token) = &self.tokens[self.pos];
        SyntaxError {
            position: *position,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: token.to_string(),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Token::Keyword(k) if *k == kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &'static str) -> Result<(), SyntaxError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Token::Ident(_) => match self.advance() {
                Token::Ident(s) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn query(&mut self) -> Result<QueryAst, SyntaxError> {
        self.expect_keyword("SELECT")?;
        let projection = if *self.peek() == Token::Star {
            self.advance();
            Projection::All
        } else {
            if !matches!(self.peek(), Token::Ident(_)) {
                return Err(self.error(&["`*`", "column name"]));
            }
            let mut cols = vec![self.ident()?];
            while *self.peek() == Token::Comma {
                self.advance();
                cols.push(self.ident()?);
            }
            Projection::Columns(cols)
        };
        self.expect_keyword("FROM")?;
        let table = self.ident()?;
        let predicate = if self.eat_keyword("WHERE") {
            Some(self.or_expr()?)
        } else {
            None
        };
        if *self.peek() == Token::Semicolon {
            self.advance();
        }
        if *self.peek() != Token::Eof {
            return Err(self.error(if predicate.is_some() {
                &["AND", "OR", "end of input"]
            } else {
                &["WHERE", "end of input"]
            }));
        }
        Ok(QueryAst {
            projection,
            table,
            predicate,
        })
    }

    fn or_expr(&mut self) -> Result<Predicate, SyntaxError> {
        let mut left = self.and_expr()?;
        while self.eat_keyword("OR") {
            left = Predicate::or(left, self.and_expr()?);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Predicate, SyntaxError> {
        let mut left = self.not_expr()?;
        while self.eat_keyword("AND") {
            left = Predicate::and(left, self.not_expr()?);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Predicate, SyntaxError> {
        if self.eat_keyword("NOT") {
            return Ok(Predicate::negate(self.not_expr()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Predicate, SyntaxError> {
        if *self.peek() == Token::LParen {
            self.advance();
            let inner = self.or_expr()?;
            if *self.peek() != Token::RParen {
                return Err(self.error(&["`)`"]));
            }
            self.advance();
            return Ok(inner);
        }
        if !matches!(self.peek(), Token::Ident(_)) {
            return Err(self.error(&["column name", "`(`", "NOT"]));
        }
        let column = self.ident()?;
        match self.peek().clone() {
            Token::Op(op) => {
                self.advance();
                let literal = self.literal()?;
                Ok(Predicate::Compare { column, op, literal })
            }
            Token::Keyword("BETWEEN") => {
                self.advance();
                let low = self.literal()?;
                self.expect_keyword("AND")?;
                let high = self.literal()?;
                Ok(Predicate::Between { column, low, high })
            }
            Token::Keyword("LIKE") => {
                self.advance();
                match self.peek() {
                    Token::Str(_) => match self.advance() {
                        Token::Str(pattern) => Ok(Predicate::Like { column, pattern }),
                        _ => unreachable!(),
                    },
                    _ => Err(self.error(&["string pattern"])),
                }
            }
            _ => Err(self.error(&["comparison operator", "BETWEEN", "LIKE"])),
        }
    }

    fn literal(&mut self) -> Result<Literal, SyntaxError> {
        match self.peek() {
            Token::Number(_) | Token::Str(_) => match self.advance() {
                Token::Number(n) => Ok(Literal::Number(n)),
                Token::Str(s) => Ok(Literal::Text(s)),
                _ => unreachable!(),
            },
            _ => Err(self.error(&["literal"])),
        }
    }
}

pub fn parse(text: &str) -> Result<QueryAst, SyntaxError> {
    let tokens = lex(text)?;
    Parser { tokens, pos: 0 }.query()
}
