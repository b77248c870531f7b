//! Tokenizer for the `.dc` concrete syntax.
//!
//! `%` starts a line comment. Numbers are signed decimal floats with an
//! optional exponent. A `.` is part of a number only when a digit follows
//! it, so `val(55).` lexes as `val ( 55 ) .`.

use super::Span;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Variable(String),
    Num(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Colon,
    Pipe,
    ColonDash,
    ColonEq,
    ColonColon,
    Tilde,
    TildeEq,
    EqEq,
    NafPlus,
    Plus,
    Minus,
    Question,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{}`", s),
            Tok::Variable(s) => format!("variable `{}`", s),
            Tok::Num(n) => format!("number `{}`", n),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::ColonDash => "`:-`".into(),
            Tok::ColonEq => "`:=`".into(),
            Tok::ColonColon => "`::`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::TildeEq => "`~=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::NafPlus => "`\\+`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Question => "`?`".into(),
        }
    }
}

pub struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

pub struct LexError {
    pub span: Span,
    pub message: String,
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'%') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn span(&self) -> Span {
        Span { line: self.line, col: self.col }
    }

    fn lex_number(&mut self, span: Span) -> Result<(Tok, Span), LexError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.bump();
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        if self.peek() == Some(b'.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mut off = 1;
            if matches!(self.peek_at(1), Some(b'+') | Some(b'-')) {
                off = 2;
            }
            if self.peek_at(off).is_some_and(|c| c.is_ascii_digit()) {
                for _ in 0..=off {
                    self.bump();
                }
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok((Tok::Num(n), span)),
            _ => Err(LexError { span, message: format!("invalid number `{}`", text) }),
        }
    }

    fn lex_word(&mut self, span: Span) -> (Tok, Span) {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.bump();
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        let first = text.as_bytes()[0];
        if first == b'_' || first.is_ascii_uppercase() {
            (Tok::Variable(text), span)
        } else {
            (Tok::Ident(text), span)
        }
    }

    pub fn tokenize(mut self) -> Result<Vec<(Tok, Span)>, LexError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let span = self.span();
            let Some(c) = self.peek() else { break };
            match c {
                b'0'..=b'9' => out.push(self.lex_number(span)?),
                b'-' if self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) => {
                    out.push(self.lex_number(span)?)
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => out.push(self.lex_word(span)),
                b'(' => {
                    self.bump();
                    out.push((Tok::LParen, span));
                }
                b')' => {
                    self.bump();
                    out.push((Tok::RParen, span));
                }
                b'[' => {
                    self.bump();
                    out.push((Tok::LBracket, span));
                }
                b']' => {
                    self.bump();
                    out.push((Tok::RBracket, span));
                }
                b',' => {
                    self.bump();
                    out.push((Tok::Comma, span));
                }
                b'.' => {
                    self.bump();
                    out.push((Tok::Dot, span));
                }
                b'|' => {
                    self.bump();
                    out.push((Tok::Pipe, span));
                }
                b'?' => {
                    self.bump();
                    out.push((Tok::Question, span));
                }
                b'+' => {
                    self.bump();
                    out.push((Tok::Plus, span));
                }
                b'-' => {
                    self.bump();
                    out.push((Tok::Minus, span));
                }
                b':' => {
                    self.bump();
                    match self.peek() {
                        Some(b'-') => {
                            self.bump();
                            out.push((Tok::ColonDash, span));
                        }
                        Some(b'=') => {
                            self.bump();
                            out.push((Tok::ColonEq, span));
                        }
                        Some(b':') => {
                            self.bump();
                            out.push((Tok::ColonColon, span));
                        }
                        _ => out.push((Tok::Colon, span)),
                    }
                }
                b'~' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        out.push((Tok::TildeEq, span));
                    } else {
                        out.push((Tok::Tilde, span));
                    }
                }
                b'=' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        out.push((Tok::EqEq, span));
                    } else {
                        return Err(LexError {
                            span,
                            message: "single `=` is not an operator; use `==` or `~=`".into(),
                        });
                    }
                }
                b'\\' => {
                    self.bump();
                    if self.peek() == Some(b'+') {
                        self.bump();
                        out.push((Tok::NafPlus, span));
                    } else {
                        return Err(LexError {
                            span,
                            message: "expected `+` after `\\`".into(),
                        });
                    }
                }
                0xE2 => {
                    // UTF-8 for `←` (U+2190) is E2 86 90; accepted as `:=`.
                    if self.peek_at(1) == Some(0x86) && self.peek_at(2) == Some(0x90) {
                        self.bump();
                        self.bump();
                        self.bump();
                        out.push((Tok::ColonEq, span));
                    } else {
                        return Err(LexError {
                            span,
                            message: "unexpected character".into(),
                        });
                    }
                }
                other => {
                    return Err(LexError {
                        span,
                        message: format!("unexpected character `{}`", other as char),
                    });
                }
            }
        }
        Ok(out)
    }
}
