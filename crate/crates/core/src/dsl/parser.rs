//! Recursive-descent parser for the feature DSL.

use super::lexer::{Lexer, Span, Tok};
use super::{
    AggFunc, AggSpec, BinOp, DslError, Expr, FeatureBody, FeatureDef, Literal, Program, UnOp,
    Window, WindowUnit,
};

/// Expression context: decides what identifiers mean and which atoms are
/// admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ctx {
    /// Aggregate argument: columns, literals, arithmetic, time extractors.
    Value,
    /// Filter: everything in `Value` plus comparisons and boolean logic.
    Bool,
    /// Derived definition: earlier feature names and numbers only.
    Derived,
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

pub fn parse(text: &str) -> Result<Program, DslError> {
    let toks = Lexer::new(text).tokenize()?;
    let mut p = Parser { toks, pos: 0 };
    let mut defs = Vec::new();
    loop {
        if matches!(p.peek(), Tok::Eof) {
            break;
        }
        defs.push(p.parse_def()?);
    }
    if defs.is_empty() {
        return Err(p.err_here("empty program", &["'feature'"]));
    }
    Ok(Program { defs })
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: &str, expected: &[&str]) -> DslError {
        let span = self.span();
        DslError::Parse {
            line: span.line,
            col: span.col,
            message: format!("{message}, found {}", self.peek().describe()),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn expect(&mut self, want: Tok, expected: &str) -> Result<(), DslError> {
        if std::mem::discriminant(self.peek()) == std::mem::discriminant(&want) {
            self.bump();
            Ok(())
        } else {
            Err(self.err_here("unexpected token", &[expected]))
        }
    }

    fn expect_ident(&mut self) -> Result<String, DslError> {
        match self.peek() {
            Tok::Ident(_) => match self.bump() {
                Tok::Ident(s) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.err_here("expected identifier", &["identifier"])),
        }
    }

    fn parse_def(&mut self) -> Result<FeatureDef, DslError> {
        self.expect(Tok::Feature, "'feature'")?;
        let name = self.expect_ident()?;
        self.expect(Tok::Eq, "'='")?;
        let body = match self.peek() {
            Tok::Agg(_) => FeatureBody::Agg(self.parse_agg()?),
            _ => FeatureBody::Derived(self.parse_expr_top(Ctx::Derived)?),
        };
        Ok(FeatureDef { name, body })
    }

    fn parse_agg(&mut self) -> Result<AggSpec, DslError> {
        let func = match self.bump() {
            Tok::Agg(f) => f,
            _ => unreachable!(),
        };
        self.expect(Tok::LParen, "'('")?;
        let arg = if matches!(self.peek(), Tok::RParen) {
            None
        } else {
            Some(self.parse_expr_top(Ctx::Value)?)
        };
        // Arity is part of the grammar: count is the only argument-free
        // aggregate.
        match (func, &arg) {
            (AggFunc::Count, Some(_)) => {
                return Err(self.err_here("count takes no argument", &["')'"]))
            }
            (AggFunc::Count, None) => {}
            (f, None) => {
                return Err(self.err_here(
                    &format!("{} requires an argument", f.name()),
                    &["expression"],
                ))
            }
            _ => {}
        }
        self.expect(Tok::RParen, "')'")?;
        let filter = if matches!(self.peek(), Tok::Where) {
            self.bump();
            Some(self.parse_expr_top(Ctx::Bool)?)
        } else {
            None
        };
        let window = if matches!(self.peek(), Tok::Window) {
            self.bump();
            match self.peek() {
                Tok::All => {
                    self.bump();
                    Window::All
                }
                Tok::Agg(AggFunc::Last) => {
                    self.bump();
                    let n = match self.peek() {
                        Tok::Number(v)
                            if v.fract() == 0.0 && *v >= 0.0 && *v <= u64::MAX as f64 =>
                        {
                            let n = *v as u64;
                            self.bump();
                            n
                        }
                        _ => {
                            return Err(
                                self.err_here("window size must be an integer", &["integer"])
                            )
                        }
                    };
                    let unit = match self.peek() {
                        Tok::Hours => {
                            self.bump();
                            WindowUnit::Hours
                        }
                        Tok::Days => {
                            self.bump();
                            WindowUnit::Days
                        }
                        _ => {
                            return Err(
                                self.err_here("expected window unit", &["'hours'", "'days'"])
                            )
                        }
                    };
                    Window::Last { n, unit }
                }
                _ => return Err(self.err_here("expected window clause", &["'all'", "'last'"])),
            }
        } else {
            Window::All
        };
        Ok(AggSpec {
            agg: func,
            arg,
            filter,
            window,
        })
    }

    /// Entry level per context: filters start at `or`, value and derived
    /// expressions start at additive.
    fn parse_expr_top(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        match ctx {
            Ctx::Bool => self.parse_or(ctx),
            Ctx::Value | Ctx::Derived => self.parse_additive(ctx),
        }
    }

    fn parse_or(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        let mut lhs = self.parse_and(ctx)?;
        while matches!(self.peek(), Tok::Or) {
            self.bump();
            let rhs = self.parse_and(ctx)?;
            lhs = Expr::Binary {
                op: BinOp::Or,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_and(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        let mut lhs = self.parse_not(ctx)?;
        while matches!(self.peek(), Tok::And) {
            self.bump();
            let rhs = self.parse_not(ctx)?;
            lhs = Expr::Binary {
                op: BinOp::And,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_not(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        if matches!(self.peek(), Tok::Not) {
            self.bump();
            let inner = self.parse_not(ctx)?;
            return Ok(Expr::Unary {
                op: UnOp::Not,
                expr: Box::new(inner),
            });
        }
        self.parse_cmp(ctx)
    }

    fn parse_cmp(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        let lhs = self.parse_additive(ctx)?;
        let op = match self.peek() {
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::In => {
                self.bump();
                return self.parse_in_list(lhs);
            }
            Tok::Is => {
                self.bump();
                let negated = if matches!(self.peek(), Tok::Not) {
                    self.bump();
                    true
                } else {
                    false
                };
                self.expect(Tok::Null, "'null'")?;
                return Ok(Expr::IsNull {
                    expr: Box::new(lhs),
                    negated,
                });
            }
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.parse_additive(ctx)?;
        Ok(Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn parse_in_list(&mut self, lhs: Expr) -> Result<Expr, DslError> {
        self.expect(Tok::LBracket, "'['")?;
        let mut list = Vec::new();
        loop {
            let lit = match self.peek().clone() {
                Tok::Number(v) => {
                    self.bump();
                    Literal::Number(v)
                }
                Tok::Minus => {
                    self.bump();
                    match self.peek().clone() {
                        Tok::Number(v) => {
                            self.bump();
                            Literal::Number(-v)
                        }
                        _ => return Err(self.err_here("expected number", &["number"])),
                    }
                }
                Tok::Str(s) => {
                    self.bump();
                    Literal::Str(s)
                }
                _ => return Err(self.err_here("expected literal", &["number", "string"])),
            };
            list.push(lit);
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBracket => {
                    self.bump();
                    break;
                }
                _ => return Err(self.err_here("expected ',' or ']'", &["','", "']'"])),
            }
        }
        Ok(Expr::In {
            expr: Box::new(lhs),
            list,
        })
    }

    fn parse_additive(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        let mut lhs = self.parse_mul(ctx)?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.parse_mul(ctx)?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_mul(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        let mut lhs = self.parse_unary(ctx)?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.parse_unary(ctx)?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        if matches!(self.peek(), Tok::Minus) {
            self.bump();
            let inner = self.parse_unary(ctx)?;
            return Ok(Expr::Unary {
                op: UnOp::Neg,
                expr: Box::new(inner),
            });
        }
        self.parse_atom(ctx)
    }

    fn parse_atom(&mut self, ctx: Ctx) -> Result<Expr, DslError> {
        match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                Ok(Expr::Number(v))
            }
            Tok::Str(s) if ctx != Ctx::Derived => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(Expr::Ident(name))
            }
            Tok::Time(func) if ctx != Ctx::Derived => {
                if !matches!(self.peek2(), Tok::LParen) {
                    return Err(self.err_here("time extractor needs '(col)'", &["'('"]));
                }
                self.bump();
                self.bump(); // '('
                let column = self.expect_ident()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Expr::Time { func, column })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.parse_expr_top(ctx)?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            _ => {
                let expected: &[&str] = match ctx {
                    Ctx::Derived => &["number", "feature name", "'('", "'-'"],
                    _ => &[
                        "number",
                        "string",
                        "column",
                        "'hour'",
                        "'dayofweek'",
                        "'('",
                        "'-'",
                    ],
                };
                Err(self.err_here("expected expression", expected))
            }
        }
    }
}
