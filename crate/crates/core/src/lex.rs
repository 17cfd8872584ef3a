//! Tokenizer and diagnostics shared by the `.uspec` and `.threat` readers.
//!
//! Both formats are line oriented: a declaration starts at column 1 and may
//! continue on following lines that begin with whitespace. `#` starts a
//! comment that runs to the end of the physical line.

use std::fmt;

use thiserror::Error;

/// Stable error codes carried by every [`Diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    /// Malformed token stream.
    Syntax,
    /// Reference to a stage that was never declared.
    UndeclaredStage,
    /// Reference to a cache level that was never declared.
    UndeclaredLevel,
    /// Two axioms share a name.
    DuplicateAxiom,
    /// Unknown predicate, keyword or attribute value.
    Unknown,
    /// A variable is used but not bound by the quantifier.
    UnboundVariable,
    /// A declaration is missing, repeated or out of range.
    Invalid,
    /// Pattern references a node or role that was never declared.
    UndeclaredRole,
    /// Pattern text declares no nodes.
    NoNodes,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Syntax => "E001",
            ErrorCode::UndeclaredStage => "E002",
            ErrorCode::UndeclaredLevel => "E003",
            ErrorCode::DuplicateAxiom => "E004",
            ErrorCode::Unknown => "E005",
            ErrorCode::UnboundVariable => "E006",
            ErrorCode::Invalid => "E007",
            ErrorCode::UndeclaredRole => "E008",
            ErrorCode::NoNodes => "E009",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A located parse or validation error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: error[{code}]: {message}")]
pub struct Diagnostic {
    pub code: ErrorCode,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: ErrorCode, pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic {
            code,
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }
}

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Num(u64),
    Colon,
    Comma,
    LParen,
    RParen,
    Dot,
    Arrow,
    Implies,
    Amp,
    Bar,
    Bang,
    Eq,
    NotEq,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(n) => write!(f, "`{n}`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Implies => f.write_str("`=>`"),
            Tok::Amp => f.write_str("`&`"),
            Tok::Bar => f.write_str("`|`"),
            Tok::Bang => f.write_str("`!`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::NotEq => f.write_str("`!=`"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

/// One declaration, possibly spanning several physical lines.
#[derive(Debug, Clone)]
pub struct Statement {
    pub start: Pos,
    pub tokens: Vec<Token>,
}

/// Splits source text into statements and tokenizes them.
pub fn statements(text: &str) -> Result<Vec<Statement>, Diagnostic> {
    let mut out: Vec<Statement> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        if body.trim().is_empty() {
            continue;
        }
        let continuation = body.starts_with(' ') || body.starts_with('\t');
        let tokens = tokenize_line(body, line_no)?;
        if continuation {
            match out.last_mut() {
                Some(stmt) => stmt.tokens.extend(tokens),
                None => {
                    return Err(Diagnostic::new(
                        ErrorCode::Syntax,
                        tokens[0].pos,
                        "indented continuation line with no declaration before it",
                    ))
                }
            }
        } else {
            out.push(Statement {
                start: tokens[0].pos,
                tokens,
            });
        }
    }
    Ok(out)
}

fn tokenize_line(line: &str, line_no: usize) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    let mut toks = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos {
            line: line_no,
            col: i + 1,
        };
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            toks.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let n = text.parse::<u64>().map_err(|_| {
                Diagnostic::new(ErrorCode::Syntax, pos, format!("number `{text}` out of range"))
            })?;
            toks.push(Token { tok: Tok::Num(n), pos });
            continue;
        }
        let next = chars.get(i + 1).copied();
        let (tok, len) = match (c, next) {
            ('-', Some('>')) => (Tok::Arrow, 2),
            ('=', Some('>')) => (Tok::Implies, 2),
            ('!', Some('=')) => (Tok::NotEq, 2),
            (':', _) => (Tok::Colon, 1),
            (',', _) => (Tok::Comma, 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            ('.', _) => (Tok::Dot, 1),
            ('&', _) => (Tok::Amp, 1),
            ('|', _) => (Tok::Bar, 1),
            ('!', _) => (Tok::Bang, 1),
            ('=', _) => (Tok::Eq, 1),
            _ => {
                return Err(Diagnostic::new(
                    ErrorCode::Syntax,
                    pos,
                    format!("unexpected character `{c}`"),
                ))
            }
        };
        toks.push(Token { tok, pos });
        i += len;
    }
    Ok(toks)
}

/// Cursor over one statement's tokens.
pub struct Cursor<'a> {
    toks: &'a [Token],
    idx: usize,
    end: Pos,
}

impl<'a> Cursor<'a> {
    pub fn new(stmt: &'a Statement) -> Self {
        let end = stmt
            .tokens
            .last()
            .map(|t| Pos {
                line: t.pos.line,
                col: t.pos.col + 1,
            })
            .unwrap_or(stmt.start);
        Cursor {
            toks: &stmt.tokens,
            idx: 0,
            end,
        }
    }

    pub fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.idx).map(|t| &t.tok)
    }

    pub fn pos(&self) -> Pos {
        self.toks.get(self.idx).map(|t| t.pos).unwrap_or(self.end)
    }

    pub fn at_end(&self) -> bool {
        self.idx >= self.toks.len()
    }

    pub fn bump(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.idx);
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: &Tok) -> Result<(), Diagnostic> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.unexpected(&tok.to_string()))
        }
    }

    pub fn ident(&mut self) -> Result<(String, Pos), Diagnostic> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.idx += 1;
                Ok((s, pos))
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    pub fn number(&mut self) -> Result<u64, Diagnostic> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.idx += 1;
                Ok(n)
            }
            _ => Err(self.unexpected("a number")),
        }
    }

    pub fn finish(&self) -> Result<(), Diagnostic> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.unexpected("end of declaration"))
        }
    }

    pub fn unexpected(&self, wanted: &str) -> Diagnostic {
        let found = match self.peek() {
            Some(t) => t.to_string(),
            None => "end of declaration".to_string(),
        };
        Diagnostic::new(
            ErrorCode::Syntax,
            self.pos(),
            format!("expected {wanted}, found {found}"),
        )
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
