//! Lexer and recursive-descent parser for the textual contract syntax.
//!
//! ```text
//! contract    := header item*
//! header      := "agents" id ("," id)* ";" "actions" id ("," id)* ";"
//! item        := annotation | clause_and ";"
//! clause      := pair form
//! pair        := "{" id "," id "}"
//! form        := ("O" | "F" | "P") "(" id ")"
//!              | "[" "!"? id "]" "*"? "(" clause_and ")"
//! clause_and  := clause ("&" clause)*
//! ```
//!
//! `∧` and `¬` are accepted as aliases of `&` and `!`. Errors recover at
//! the next top-level `;`.

use std::fmt;

use thiserror::Error;

use crate::ast::{ActionId, AgentId, AgentPair, Annotation, Clause, ClauseKind, Contract, Event, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    Str(String),
    LBrace,
    RBrace,
    LBrack,
    RBrack,
    LParen,
    RParen,
    Comma,
    Semi,
    Star,
    Bang,
    Amp,
    Eq,
    KwO,
    KwF,
    KwP,
    KwAgents,
    KwActions,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Ident(s) => write!(f, "`{s}`"),
            TokenKind::Str(s) => write!(f, "string {s:?}"),
            TokenKind::LBrace => f.write_str("`{`"),
            TokenKind::RBrace => f.write_str("`}`"),
            TokenKind::LBrack => f.write_str("`[`"),
            TokenKind::RBrack => f.write_str("`]`"),
            TokenKind::LParen => f.write_str("`(`"),
            TokenKind::RParen => f.write_str("`)`"),
            TokenKind::Comma => f.write_str("`,`"),
            TokenKind::Semi => f.write_str("`;`"),
            TokenKind::Star => f.write_str("`*`"),
            TokenKind::Bang => f.write_str("`!`"),
            TokenKind::Amp => f.write_str("`&`"),
            TokenKind::Eq => f.write_str("`=`"),
            TokenKind::KwO => f.write_str("`O`"),
            TokenKind::KwF => f.write_str("`F`"),
            TokenKind::KwP => f.write_str("`P`"),
            TokenKind::KwAgents => f.write_str("`agents`"),
            TokenKind::KwActions => f.write_str("`actions`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: expected {expected}, found {found}")]
pub struct ParseError {
    pub span: Span,
    pub expected: String,
    pub found: String,
}

impl ParseError {
    /// `<file>:<line>:<col>: error: expected <X>, found <Y>`
    pub fn render(&self, file: &str) -> String {
        format!(
            "{}:{}:{}: error: expected {}, found {}",
            file, self.span.start_line, self.span.start_col, self.expected, self.found
        )
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> (u32, u32) {
        (self.line, self.col)
    }
}

/// Lexes the whole input, collecting every lexical error instead of
/// stopping at the first.
pub fn tokenize_all(source: &str) -> (Vec<Token>, Vec<ParseError>) {
    let mut lx = Lexer { chars: source.chars().peekable(), line: 1, col: 1 };
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    loop {
        let (line, col) = lx.pos();
        let Some(&c) = lx.chars.peek() else { break };
        if c.is_whitespace() {
            lx.bump();
            continue;
        }
        let single = match c {
            '{' => Some(TokenKind::LBrace),
            '}' => Some(TokenKind::RBrace),
            '[' => Some(TokenKind::LBrack),
            ']' => Some(TokenKind::RBrack),
            '(' => Some(TokenKind::LParen),
            ')' => Some(TokenKind::RParen),
            ',' => Some(TokenKind::Comma),
            ';' => Some(TokenKind::Semi),
            '*' => Some(TokenKind::Star),
            '!' | '¬' => Some(TokenKind::Bang),
            '&' | '∧' => Some(TokenKind::Amp),
            '=' => Some(TokenKind::Eq),
            _ => None,
        };
        if let Some(kind) = single {
            lx.bump();
            tokens.push(Token { kind, span: Span::new(line, col, line, col) });
            continue;
        }
        if c == '/' {
            lx.bump();
            if lx.chars.peek() == Some(&'/') {
                while let Some(&n) = lx.chars.peek() {
                    if n == '\n' {
                        break;
                    }
                    lx.bump();
                }
            } else {
                errors.push(ParseError {
                    span: Span::new(line, col, line, col),
                    expected: "a token".into(),
                    found: "`/`".into(),
                });
            }
            continue;
        }
        if c == '"' {
            lx.bump();
            let mut text = String::new();
            let mut closed = false;
            let (mut end_line, mut end_col) = (line, col);
            while let Some(&n) = lx.chars.peek() {
                if n == '\n' {
                    break;
                }
                (end_line, end_col) = lx.pos();
                lx.bump();
                match n {
                    '"' => {
                        closed = true;
                        break;
                    }
                    '\\' => match lx.chars.peek() {
                        Some(&e @ ('"' | '\\')) => {
                            (end_line, end_col) = lx.pos();
                            lx.bump();
                            text.push(e);
                        }
                        _ => text.push('\\'),
                    },
                    other => text.push(other),
                }
            }
            if closed {
                tokens.push(Token { kind: TokenKind::Str(text), span: Span::new(line, col, end_line, end_col) });
            } else {
                errors.push(ParseError {
                    span: Span::new(line, col, end_line, end_col),
                    expected: "closing `\"`".into(),
                    found: "end of line".into(),
                });
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut word = String::new();
            let mut end = (line, col);
            while let Some(&n) = lx.chars.peek() {
                if n.is_ascii_alphanumeric() || n == '_' {
                    end = lx.pos();
                    word.push(n);
                    lx.bump();
                } else {
                    break;
                }
            }
            let kind = match word.as_str() {
                "O" => TokenKind::KwO,
                "F" => TokenKind::KwF,
                "P" => TokenKind::KwP,
                "agents" => TokenKind::KwAgents,
                "actions" => TokenKind::KwActions,
                _ => TokenKind::Ident(word),
            };
            tokens.push(Token { kind, span: Span::new(line, col, end.0, end.1) });
            continue;
        }
        lx.bump();
        errors.push(ParseError {
            span: Span::new(line, col, line, col),
            expected: "a token".into(),
            found: format!("`{}`", c.escape_default()),
        });
    }
    (tokens, errors)
}

/// Lexes `source`, failing on the first character outside the alphabet.
pub fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let (tokens, mut errors) = tokenize_all(source);
    if errors.is_empty() {
        Ok(tokens)
    } else {
        Err(errors.remove(0))
    }
}

fn end_of_input_span(source: &str) -> Span {
    let mut line = 1;
    let mut col = 1;
    for c in source.chars() {
        if c == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    Span::new(line, col, line, col)
}

type PResult<T> = Result<T, ParseError>;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    eof: Span,
}

impl Parser {
    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn span(&self) -> Span {
        self.tokens.get(self.pos).map(|t| t.span).unwrap_or(self.eof)
    }

    fn prev_span(&self) -> Span {
        self.pos.checked_sub(1).and_then(|i| self.tokens.get(i)).map(|t| t.span).unwrap_or(self.eof)
    }

    fn error(&self, expected: &str) -> ParseError {
        let found = match self.peek() {
            Some(k) => k.to_string(),
            None => "end of input".to_string(),
        };
        ParseError { span: self.span(), expected: expected.to_string(), found }
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek() == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> PResult<Span> {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            Ok(self.prev_span())
        } else {
            Err(self.error(&kind.to_string()))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Some(TokenKind::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn string(&mut self) -> PResult<String> {
        match self.peek() {
            Some(TokenKind::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error("string literal")),
        }
    }

    fn opt_string(&mut self) -> Option<String> {
        match self.peek() {
            Some(TokenKind::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Some(s)
            }
            _ => None,
        }
    }

    /// Skips to just past the next `;` (or to the end).
    fn recover(&mut self) {
        while let Some(k) = self.peek() {
            let semi = *k == TokenKind::Semi;
            self.pos += 1;
            if semi {
                break;
            }
        }
    }

    fn id_list(&mut self, keyword: TokenKind, what: &str) -> PResult<Vec<String>> {
        self.expect(keyword)?;
        let mut ids = vec![self.ident(what)?];
        while self.eat(&TokenKind::Comma) {
            ids.push(self.ident(what)?);
        }
        self.expect(TokenKind::Semi)?;
        Ok(ids)
    }

    fn pair(&mut self) -> PResult<AgentPair> {
        self.expect(TokenKind::LBrace)?;
        let performer = self.ident("agent identifier")?;
        self.expect(TokenKind::Comma)?;
        let counterparty = self.ident("agent identifier")?;
        self.expect(TokenKind::RBrace)?;
        Ok(AgentPair { performer: AgentId(performer), counterparty: AgentId(counterparty) })
    }

    fn event(&mut self) -> PResult<Event> {
        let pair = self.pair()?;
        let action = ActionId(self.ident("action identifier")?);
        Ok(Event { pair, action })
    }

    fn clause(&mut self) -> PResult<Clause> {
        let start = self.span();
        let pair = self.pair()?;
        let kind = match self.peek() {
            Some(TokenKind::KwO | TokenKind::KwF | TokenKind::KwP) => {
                let op = self.peek().cloned();
                self.pos += 1;
                self.expect(TokenKind::LParen)?;
                let action = ActionId(self.ident("action identifier")?);
                self.expect(TokenKind::RParen)?;
                let e = Event { pair, action };
                match op {
                    Some(TokenKind::KwO) => ClauseKind::Obligation(e),
                    Some(TokenKind::KwF) => ClauseKind::Prohibition(e),
                    _ => ClauseKind::Permission(e),
                }
            }
            Some(TokenKind::LBrack) => {
                self.pos += 1;
                let negated = self.eat(&TokenKind::Bang);
                let action = ActionId(self.ident("action identifier")?);
                self.expect(TokenKind::RBrack)?;
                let star = self.eat(&TokenKind::Star);
                if negated && !star {
                    return Err(self.error("`*` after a negated guard"));
                }
                self.expect(TokenKind::LParen)?;
                let body = Box::new(self.clause_and()?);
                self.expect(TokenKind::RParen)?;
                let guard = Event { pair, action };
                if star {
                    ClauseKind::IterBoxNeg { guard, body, positive_star: !negated }
                } else {
                    ClauseKind::Box { guard, body }
                }
            }
            _ => return Err(self.error("`O`, `F`, `P` or `[`")),
        };
        Ok(Clause { kind, span: start.to(self.prev_span()) })
    }

    fn clause_and(&mut self) -> PResult<Clause> {
        let mut items = vec![self.clause()?];
        while self.eat(&TokenKind::Amp) {
            items.push(self.clause()?);
        }
        // Right-nest, each And spanning from its left conjunct to the end.
        let mut acc = items.pop().expect("at least one clause");
        while let Some(prev) = items.pop() {
            let span = prev.span.to(acc.span);
            acc = Clause { kind: ClauseKind::And(Box::new(prev), Box::new(acc)), span };
        }
        Ok(acc)
    }

    fn annotation(&mut self, keyword: &str) -> PResult<Annotation> {
        self.pos += 1;
        let ann = match keyword {
            "contract" => Annotation::ContractName(self.ident("contract name")?),
            "invalid_state" => Annotation::InvalidStateMessage(self.string()?),
            "role" => {
                let agent = AgentId(self.ident("agent identifier")?);
                let name = self.ident("role name")?;
                Annotation::Role { agent, name, message: self.opt_string() }
            }
            "state" => {
                let event = self.event()?;
                Annotation::State { event, name: self.ident("state name")? }
            }
            "payable" => {
                let event = self.event()?;
                self.expect(TokenKind::Eq)?;
                let param = self.ident("parameter name")?;
                Annotation::Payable { event, param, message: self.opt_string() }
            }
            "nonpayable" => Annotation::NonPayable { event: self.event()? },
            "function" => {
                let event = self.event()?;
                Annotation::Function { event, name: self.ident("function name")? }
            }
            "flag" => {
                let event = self.event()?;
                let name = self.ident("flag name")?;
                let set_message = self.opt_string();
                let require_message = if set_message.is_some() { self.opt_string() } else { None };
                Annotation::Flag { event, name, set_message, require_message }
            }
            "rule" => {
                let event = self.event()?;
                Annotation::Rule { event, message: self.string()? }
            }
            "message" => {
                let event = self.event()?;
                Annotation::Message { event, text: self.string()? }
            }
            "internal" => Annotation::Internal { event: self.event()? },
            _ => unreachable!("caller checks the keyword"),
        };
        self.expect(TokenKind::Semi)?;
        Ok(ann)
    }
}

pub const ANNOTATION_KEYWORDS: &[&str] = &[
    "contract",
    "invalid_state",
    "role",
    "state",
    "payable",
    "nonpayable",
    "function",
    "flag",
    "rule",
    "message",
    "internal",
];

/// Parses a complete contract. All syntax errors are reported, one per
/// faulty top-level item.
pub fn parse_contract(source: &str) -> Result<Contract, Vec<ParseError>> {
    let (tokens, lex_errors) = tokenize_all(source);
    if !lex_errors.is_empty() {
        return Err(lex_errors);
    }
    let mut p = Parser { tokens, pos: 0, eof: end_of_input_span(source) };
    let mut errors = Vec::new();

    let agents = p.id_list(TokenKind::KwAgents, "agent identifier").unwrap_or_else(|e| {
        errors.push(e);
        p.recover();
        Vec::new()
    });
    let actions = p.id_list(TokenKind::KwActions, "action identifier").unwrap_or_else(|e| {
        errors.push(e);
        p.recover();
        Vec::new()
    });

    let mut annotations = Vec::new();
    let mut clauses = Vec::new();
    while let Some(kind) = p.peek() {
        let result = match kind {
            TokenKind::Ident(word) if ANNOTATION_KEYWORDS.contains(&word.as_str()) => {
                let word = word.clone();
                p.annotation(&word).map(|a| annotations.push(a))
            }
            TokenKind::LBrace => p
                .clause_and()
                .and_then(|c| p.expect(TokenKind::Semi).map(|_| c))
                .map(|c| clauses.push(c)),
            _ => Err(p.error("clause or annotation")),
        };
        if let Err(e) = result {
            errors.push(e);
            p.recover();
        }
    }

    if errors.is_empty() {
        Ok(Contract {
            agents: agents.into_iter().map(AgentId).collect(),
            actions: actions.into_iter().map(ActionId).collect(),
            annotations,
            clauses,
        })
    } else {
        Err(errors)
    }
}
