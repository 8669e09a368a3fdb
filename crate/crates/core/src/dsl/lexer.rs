//! Tokenizer for the feature DSL.

use super::{AggFunc, DslError, TimeFunc};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    // Structure
    Feature,
    Where,
    Window,
    All,
    Hours,
    Days,
    // Aggregates ("last" doubles as the window keyword)
    Agg(AggFunc),
    Time(TimeFunc),
    // Boolean
    And,
    Or,
    Not,
    In,
    Is,
    Null,
    // Punctuation and operators
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Feature => "'feature'".into(),
            Tok::Where => "'where'".into(),
            Tok::Window => "'window'".into(),
            Tok::All => "'all'".into(),
            Tok::Hours => "'hours'".into(),
            Tok::Days => "'days'".into(),
            Tok::Agg(f) => format!("'{}'", f.name()),
            Tok::Time(TimeFunc::Hour) => "'hour'".into(),
            Tok::Time(TimeFunc::Dayofweek) => "'dayofweek'".into(),
            Tok::And => "'and'".into(),
            Tok::Or => "'or'".into(),
            Tok::Not => "'not'".into(),
            Tok::In => "'in'".into(),
            Tok::Is => "'is'".into(),
            Tok::Null => "'null'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::Comma => "','".into(),
            Tok::Eq => "'='".into(),
            Tok::Ne => "'!='".into(),
            Tok::Lt => "'<'".into(),
            Tok::Le => "'<='".into(),
            Tok::Gt => "'>'".into(),
            Tok::Ge => "'>='".into(),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

pub struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "feature" => Tok::Feature,
        "where" => Tok::Where,
        "window" => Tok::Window,
        "all" => Tok::All,
        "hours" => Tok::Hours,
        "days" => Tok::Days,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        "in" => Tok::In,
        "is" => Tok::Is,
        "null" => Tok::Null,
        "count" => Tok::Agg(AggFunc::Count),
        "sum" => Tok::Agg(AggFunc::Sum),
        "mean" => Tok::Agg(AggFunc::Mean),
        "min" => Tok::Agg(AggFunc::Min),
        "max" => Tok::Agg(AggFunc::Max),
        "std" => Tok::Agg(AggFunc::Std),
        "nunique" => Tok::Agg(AggFunc::Nunique),
        "first" => Tok::Agg(AggFunc::First),
        "last" => Tok::Agg(AggFunc::Last),
        "hour" => Tok::Time(TimeFunc::Hour),
        "dayofweek" => Tok::Time(TimeFunc::Dayofweek),
        _ => return None,
    })
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn error(&self, message: String, expected: &[&str]) -> DslError {
        DslError::Parse {
            line: self.line,
            col: self.col,
            message,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn tokenize(mut self) -> Result<Vec<(Tok, Span)>, DslError> {
        let mut out = Vec::new();
        loop {
            // Skip whitespace and comments.
            loop {
                match self.peek() {
                    Some(b) if b.is_ascii_whitespace() => {
                        self.bump();
                    }
                    Some(b'#') => {
                        while let Some(b) = self.peek() {
                            if b == b'\n' {
                                break;
                            }
                            self.bump();
                        }
                    }
                    _ => break,
                }
            }
            let span = Span {
                line: self.line,
                col: self.col,
            };
            let b = match self.peek() {
                None => {
                    out.push((Tok::Eof, span));
                    return Ok(out);
                }
                Some(b) => b,
            };
            let tok = match b {
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'[' => {
                    self.bump();
                    Tok::LBracket
                }
                b']' => {
                    self.bump();
                    Tok::RBracket
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'-' => {
                    self.bump();
                    Tok::Minus
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'=' => {
                    self.bump();
                    Tok::Eq
                }
                b'!' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Ne
                    } else {
                        return Err(self.error("stray '!'".into(), &["'!='"]));
                    }
                }
                b'<' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Le
                    } else {
                        Tok::Lt
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Ge
                    } else {
                        Tok::Gt
                    }
                }
                b'"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None | Some(b'\n') => {
                                return Err(
                                    self.error("unterminated string literal".into(), &["'\"'"])
                                )
                            }
                            Some(b'"') => break,
                            Some(b'\\') => match self.bump() {
                                Some(b'"') => s.push('"'),
                                Some(b'\\') => s.push('\\'),
                                other => {
                                    return Err(self.error(
                                        format!("invalid escape {:?}", other.map(char::from)),
                                        &["'\\\"'", "'\\\\'"],
                                    ))
                                }
                            },
                            Some(c) => s.push(char::from(c)),
                        }
                    }
                    Tok::Str(s)
                }
                b'0'..=b'9' => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(b'0'..=b'9')) {
                        self.bump();
                    }
                    if self.peek() == Some(b'.') {
                        self.bump();
                        if !matches!(self.peek(), Some(b'0'..=b'9')) {
                            return Err(self.error("digits required after '.'".into(), &["digit"]));
                        }
                        while matches!(self.peek(), Some(b'0'..=b'9')) {
                            self.bump();
                        }
                    }
                    if matches!(self.peek(), Some(b'e' | b'E')) {
                        self.bump();
                        if matches!(self.peek(), Some(b'+' | b'-')) {
                            self.bump();
                        }
                        if !matches!(self.peek(), Some(b'0'..=b'9')) {
                            return Err(
                                self.error("digits required in exponent".into(), &["digit"])
                            );
                        }
                        while matches!(self.peek(), Some(b'0'..=b'9')) {
                            self.bump();
                        }
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    let v: f64 = text
                        .parse()
                        .map_err(|_| self.error(format!("bad number {text:?}"), &["number"]))?;
                    if !v.is_finite() {
                        return Err(self.error(format!("number {text:?} overflows"), &["number"]));
                    }
                    Tok::Number(v)
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let start = self.pos;
                    while matches!(
                        self.peek(),
                        Some(b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'_')
                    ) {
                        self.bump();
                    }
                    let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    if word.bytes().any(|c| c.is_ascii_uppercase()) {
                        return Err(self.error(
                            format!("identifier {word:?} must be lowercase"),
                            &["lowercase identifier"],
                        ));
                    }
                    keyword(word).unwrap_or_else(|| Tok::Ident(word.to_string()))
                }
                other => {
                    return Err(self.error(
                        format!("unexpected character {:?}", char::from(other)),
                        &["token"],
                    ))
                }
            };
            out.push((tok, span));
        }
    }
}
