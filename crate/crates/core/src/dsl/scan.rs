//! Character scanner shared by the contract and service-repository parsers.
//!
//! The grammar is keyword-led and indentation-insensitive, so the scanner
//! only knows about words, integers, a handful of punctuation characters and
//! raw argument text between parentheses. `#` starts a comment that runs to
//! the end of the line.

use super::{DslError, Pos};

pub(crate) struct Scanner<'a> {
    src: &'a str,
    offset: usize,
    line: usize,
    col: usize,
}

impl<'a> Scanner<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Scanner {
            src,
            offset: 0,
            line: 1,
            col: 1,
        }
    }

    pub(crate) fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.offset..]
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.rest().chars().next()?;
        self.offset += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek_char(&self) -> Option<char> {
        self.rest().chars().next()
    }

    pub(crate) fn skip_trivia(&mut self) {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.peek_char() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    pub(crate) fn at_eof(&mut self) -> bool {
        self.skip_trivia();
        self.rest().is_empty()
    }

    /// Next identifier-like word without consuming it.
    pub(crate) fn peek_word(&mut self) -> Option<&'a str> {
        self.skip_trivia();
        let rest = self.rest();
        let len = word_len(rest);
        if len == 0 {
            None
        } else {
            Some(&rest[..len])
        }
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> DslError {
        DslError::Syntax {
            pos: self.pos(),
            msg: msg.into(),
        }
    }

    pub(crate) fn keyword(&mut self, kw: &str) -> Result<Pos, DslError> {
        self.skip_trivia();
        let pos = self.pos();
        match self.peek_word() {
            Some(w) if w == kw => {
                self.advance(kw.len());
                Ok(pos)
            }
            Some(w) => Err(self.error(format!("expected `{kw}`, found `{w}`"))),
            None => Err(self.unexpected(&format!("`{kw}`"))),
        }
    }

    pub(crate) fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_word() == Some(kw) {
            self.advance(kw.len());
            true
        } else {
            false
        }
    }

    fn advance(&mut self, bytes: usize) {
        let target = self.offset + bytes;
        while self.offset < target {
            self.bump();
        }
    }

    fn unexpected(&self, expected: &str) -> DslError {
        match self.peek_char() {
            Some(c) => self.error(format!("expected {expected}, found `{c}`")),
            None => self.error(format!("expected {expected}, found end of input")),
        }
    }

    pub(crate) fn ident(&mut self) -> Result<(String, Pos), DslError> {
        self.skip_trivia();
        let pos = self.pos();
        match self.peek_word() {
            Some(w) if !w.starts_with(|c: char| c.is_ascii_digit()) => {
                let w = w.to_string();
                self.advance(w.len());
                Ok((w, pos))
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    pub(crate) fn int(&mut self) -> Result<u64, DslError> {
        self.skip_trivia();
        let rest = self.rest();
        let len = rest.bytes().take_while(|b| b.is_ascii_digit()).count();
        if len == 0 || word_len(rest) != len {
            return Err(self.unexpected("an integer"));
        }
        let value = rest[..len]
            .parse::<u64>()
            .map_err(|_| self.error("integer literal out of range"))?;
        self.advance(len);
        Ok(value)
    }

    pub(crate) fn punct(&mut self, p: char) -> Result<(), DslError> {
        self.skip_trivia();
        if self.peek_char() == Some(p) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{p}`")))
        }
    }

    /// `key=INT`, with optional whitespace around `=`.
    pub(crate) fn assignment(&mut self, key: &str) -> Result<u64, DslError> {
        self.keyword(key)?;
        self.punct('=')?;
        self.int()
    }

    /// Raw text after an already-consumed `(` up to the matching `)`.
    /// Whitespace runs are collapsed so signatures compare verbatim modulo
    /// layout.
    pub(crate) fn raw_args(&mut self) -> Result<String, DslError> {
        let start = self.pos();
        let mut text = String::new();
        loop {
            match self.bump() {
                Some(')') => return Ok(normalize_args(&text)),
                Some('(') => {
                    return Err(self.error("nested parentheses are not allowed in argument lists"))
                }
                Some(c) => text.push(c),
                None => {
                    return Err(DslError::Syntax {
                        pos: start,
                        msg: "unterminated argument list".into(),
                    })
                }
            }
        }
    }
}

fn word_len(s: &str) -> usize {
    s.bytes()
        .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
        .count()
}

pub(crate) fn normalize_args(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && word_len(s) == s.len()
        && !s.starts_with(|c: char| c.is_ascii_digit())
}
