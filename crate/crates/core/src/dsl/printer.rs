//! Canonical pretty-printer. `parse(pretty_print(p))` is structurally `p`.

use super::{AggFunc, BinOp, Expr, FeatureBody, FeatureDef, Literal, Program, UnOp, Window};

pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    for def in &program.defs {
        out.push_str(&print_def(def));
        out.push('\n');
    }
    out
}

pub fn print_def(def: &FeatureDef) -> String {
    let body = match &def.body {
        FeatureBody::Agg(a) => {
            let mut s = match (&a.agg, &a.arg) {
                (AggFunc::Count, _) => "count()".to_string(),
                (f, Some(arg)) => format!("{}({})", f.name(), print_expr(arg, 0, false)),
                (f, None) => format!("{}()", f.name()),
            };
            if let Some(filter) = &a.filter {
                s.push_str(&format!(" where {}", print_expr(filter, 0, false)));
            }
            if let Window::Last { n, unit } = a.window {
                let unit = match unit {
                    super::WindowUnit::Hours => "hours",
                    super::WindowUnit::Days => "days",
                };
                s.push_str(&format!(" window last {n} {unit}"));
            }
            s
        }
        FeatureBody::Derived(e) => print_expr(e, 0, false),
    };
    format!("feature {} = {}", def.name, body)
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op: BinOp::Or, .. } => 1,
        Expr::Binary { op: BinOp::And, .. } => 2,
        Expr::Unary { op: UnOp::Not, .. } => 3,
        Expr::Binary {
            op: BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge,
            ..
        }
        | Expr::In { .. }
        | Expr::IsNull { .. } => 4,
        Expr::Binary {
            op: BinOp::Add | BinOp::Sub,
            ..
        } => 5,
        Expr::Binary {
            op: BinOp::Mul | BinOp::Div,
            ..
        } => 6,
        Expr::Unary { op: UnOp::Neg, .. } => 7,
        _ => 8,
    }
}

fn op_text(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Eq => "=",
        BinOp::Ne => "!=",
        BinOp::Lt => "<",
        BinOp::Le => "<=",
        BinOp::Gt => ">",
        BinOp::Ge => ">=",
        BinOp::And => "and",
        BinOp::Or => "or",
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

/// Minimal-parenthesis printing: a child is wrapped when its precedence is
/// lower than the parent's, or equal on the right of a binary operator
/// (all binaries parse left-associatively).
fn print_expr(e: &Expr, parent_prec: u8, is_rhs: bool) -> String {
    let prec = precedence(e);
    let raw = match e {
        Expr::Ident(name) => name.clone(),
        Expr::Number(v) => format!("{v}"),
        Expr::Str(s) => escape(s),
        Expr::Binary { op, lhs, rhs } => format!(
            "{} {} {}",
            print_expr(lhs, prec, false),
            op_text(*op),
            print_expr(rhs, prec, true)
        ),
        Expr::Unary {
            op: UnOp::Neg,
            expr,
        } => format!("-{}", print_expr(expr, prec, false)),
        Expr::Unary {
            op: UnOp::Not,
            expr,
        } => format!("not {}", print_expr(expr, prec, false)),
        Expr::In { expr, list } => {
            let items: Vec<String> = list
                .iter()
                .map(|l| match l {
                    Literal::Number(v) => format!("{v}"),
                    Literal::Str(s) => escape(s),
                })
                .collect();
            format!(
                "{} in [{}]",
                print_expr(expr, prec, false),
                items.join(", ")
            )
        }
        Expr::IsNull { expr, negated } => format!(
            "{} is {}null",
            print_expr(expr, prec, false),
            if *negated { "not " } else { "" }
        ),
        Expr::Time { func, column } => {
            let name = match func {
                super::TimeFunc::Hour => "hour",
                super::TimeFunc::Dayofweek => "dayofweek",
            };
            format!("{name}({column})")
        }
    };
    if prec < parent_prec || (is_rhs && prec == parent_prec) {
        format!("({raw})")
    } else {
        raw
    }
}
