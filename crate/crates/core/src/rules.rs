//! Parser and canonical printer for `.cep` rule files.
//!
//! ```text
//! ruleset     := classes_decl fluent_decl+
//! classes_decl:= "classes" name ("," name)* ";"
//! fluent_decl := "fluent" name "{" "start:" pattern ";" "end:" pattern ";" "}"
//! pattern     := "repeat(" name "," "count=" int "," "window=" int ")"
//! ```
//!
//! Whitespace is insignificant and `#` starts a comment that runs to the end
//! of the line. Class ids follow declaration order.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::ec::{validate_ruleset, ClassId, FluentId, PatternRule, Polarity, RuleSet};

/// Location of a token in the source text. Lines and columns are 1-based,
/// byte offsets are 0-based and half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {span}: {message}")]
    Syntax { message: String, span: SourceSpan },
    #[error("semantic error at {span}: {message}")]
    Semantic { message: String, span: SourceSpan },
}

impl ParseError {
    pub fn span(&self) -> SourceSpan {
        match self {
            ParseError::Syntax { span, .. } | ParseError::Semantic { span, .. } => *span,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            ParseError::Syntax { message, .. } | ParseError::Semantic { message, .. } => message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Punct(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0, line: 1, col: 1 }
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek_char()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Result<(Tok, SourceSpan), ParseError> {
        self.skip_trivia();
        let (line, column, start) = (self.line, self.col, self.pos);
        let span_to = |end: usize| SourceSpan { line, column, start, end };
        let Some(c) = self.peek_char() else {
            return Ok((Tok::Eof, span_to(start)));
        };
        if c.is_ascii_alphabetic() || c == '_' {
            while self.peek_char().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                self.bump();
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), span_to(self.pos)));
        }
        if c.is_ascii_digit() {
            while self.peek_char().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
            let text = &self.src[start..self.pos];
            return match text.parse() {
                Ok(n) => Ok((Tok::Int(n), span_to(self.pos))),
                Err(_) => Err(ParseError::Syntax {
                    message: format!("integer `{text}` out of range"),
                    span: span_to(self.pos),
                }),
            };
        }
        self.bump();
        if ",;{}():=".contains(c) {
            Ok((Tok::Punct(c), span_to(self.pos)))
        } else {
            Err(ParseError::Syntax { message: format!("unexpected character `{c}`"), span: span_to(self.pos) })
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    span: SourceSpan,
}

struct RawPattern {
    class: String,
    class_span: SourceSpan,
    count: usize,
    window: usize,
    span: SourceSpan,
}

/// A name with the span where it was written.
type Named = (String, SourceSpan);

struct RawFluent {
    name: String,
    span: SourceSpan,
    start: RawPattern,
    end: RawPattern,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let (tok, span) = lexer.next_token()?;
        Ok(Self { lexer, tok, span })
    }

    fn advance(&mut self) -> Result<(Tok, SourceSpan), ParseError> {
        let (tok, span) = self.lexer.next_token()?;
        Ok((std::mem::replace(&mut self.tok, tok), std::mem::replace(&mut self.span, span)))
    }

    fn unexpected<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax { message: format!("expected {expected}, found {}", self.tok), span: self.span })
    }

    fn punct(&mut self, c: char) -> Result<SourceSpan, ParseError> {
        if self.tok == Tok::Punct(c) {
            Ok(self.advance()?.1)
        } else {
            self.unexpected(&format!("`{c}`"))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<SourceSpan, ParseError> {
        if matches!(&self.tok, Tok::Ident(s) if s == kw) {
            Ok(self.advance()?.1)
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    fn name(&mut self) -> Result<(String, SourceSpan), ParseError> {
        match &self.tok {
            Tok::Ident(_) => match self.advance()? {
                (Tok::Ident(s), span) => Ok((s, span)),
                _ => unreachable!(),
            },
            _ => self.unexpected("a name"),
        }
    }

    fn int(&mut self) -> Result<(usize, SourceSpan), ParseError> {
        match self.tok {
            Tok::Int(n) => {
                let span = self.advance()?.1;
                usize::try_from(n)
                    .map(|n| (n, span))
                    .map_err(|_| ParseError::Syntax { message: format!("integer `{n}` out of range"), span })
            }
            _ => self.unexpected("an integer"),
        }
    }

    fn ruleset(&mut self) -> Result<(Vec<Named>, Vec<RawFluent>), ParseError> {
        self.keyword("classes")?;
        let mut classes = vec![self.name()?];
        while self.tok == Tok::Punct(',') {
            self.advance()?;
            classes.push(self.name()?);
        }
        self.punct(';')?;
        let mut fluents = vec![self.fluent()?];
        while self.tok != Tok::Eof {
            fluents.push(self.fluent()?);
        }
        Ok((classes, fluents))
    }

    fn fluent(&mut self) -> Result<RawFluent, ParseError> {
        self.keyword("fluent")?;
        let (name, span) = self.name()?;
        self.punct('{')?;
        self.keyword("start")?;
        self.punct(':')?;
        let start = self.pattern()?;
        self.punct(';')?;
        self.keyword("end")?;
        self.punct(':')?;
        let end = self.pattern()?;
        self.punct(';')?;
        self.punct('}')?;
        Ok(RawFluent { name, span, start, end })
    }

    fn pattern(&mut self) -> Result<RawPattern, ParseError> {
        let open = self.keyword("repeat")?;
        self.punct('(')?;
        let (class, class_span) = self.name()?;
        self.punct(',')?;
        self.keyword("count")?;
        self.punct('=')?;
        let (count, _) = self.int()?;
        self.punct(',')?;
        self.keyword("window")?;
        self.punct('=')?;
        let (window, _) = self.int()?;
        let close = self.punct(')')?;
        let span = SourceSpan { end: close.end, ..open };
        Ok(RawPattern { class, class_span, count, window, span })
    }
}

/// Parses and validates a rule file.
pub fn parse_ruleset(text: &str) -> Result<RuleSet, ParseError> {
    let mut parser = Parser::new(text)?;
    let (class_decls, fluent_decls) = parser.ruleset()?;

    let mut classes: Vec<String> = Vec::with_capacity(class_decls.len());
    for (name, span) in class_decls {
        if classes.contains(&name) {
            return Err(ParseError::Semantic { message: format!("duplicate class `{name}`"), span });
        }
        classes.push(name);
    }

    let mut fluents: Vec<String> = Vec::new();
    let mut rules = Vec::new();
    for decl in fluent_decls {
        if fluents.contains(&decl.name) {
            return Err(ParseError::Semantic { message: format!("duplicate fluent `{}`", decl.name), span: decl.span });
        }
        let fluent = FluentId(fluents.len());
        fluents.push(decl.name);
        for (polarity, pat) in [(Polarity::Start, decl.start), (Polarity::End, decl.end)] {
            let trigger = classes.iter().position(|c| *c == pat.class).ok_or_else(|| ParseError::Semantic {
                message: format!("unknown class `{}`", pat.class),
                span: pat.class_span,
            })?;
            let semantic = |message: &str| Err(ParseError::Semantic { message: message.into(), span: pat.span });
            if pat.count > pat.window {
                return semantic("count exceeds window");
            }
            if pat.count < 2 {
                return semantic("count must be at least 2");
            }
            if pat.window < 2 {
                return semantic("window must be at least 2");
            }
            rules.push(PatternRule {
                fluent,
                polarity,
                trigger_class: ClassId(trigger),
                count: pat.count,
                window: pat.window,
            });
        }
    }

    let rs = RuleSet { classes, fluents, rules };
    // The grammar already rules these out; kept in sync with the core invariants.
    if let Some(v) = validate_ruleset(&rs).into_iter().next() {
        return Err(ParseError::Semantic {
            message: v.to_string(),
            span: SourceSpan { line: 1, column: 1, start: 0, end: 0 },
        });
    }
    Ok(rs)
}

/// Canonical text form; `parse_ruleset(&pretty_print(rs)) == Ok(rs)` for any
/// valid `rs` whose rules are grouped Start then End per fluent.
pub fn pretty_print(rs: &RuleSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "classes {};", rs.classes.join(", "));
    for (f, name) in rs.fluents.iter().enumerate() {
        let _ = writeln!(out, "fluent {name} {{");
        for polarity in [Polarity::Start, Polarity::End] {
            if let Some(rule) = rs.rules.iter().find(|r| r.fluent == FluentId(f) && r.polarity == polarity) {
                let _ = writeln!(
                    out,
                    "  {}: repeat({}, count={}, window={});",
                    polarity.keyword(),
                    rs.classes[rule.trigger_class.0],
                    rule.count,
                    rule.window
                );
            }
        }
        out.push_str("}\n");
    }
    out
}
