//! The feature definition language: a small deterministic DSL for
//! per-entity aggregation over event logs.
//!
//! A program is a sequence of feature definitions. Each definition is
//! either an aggregate over the entity's events (with optional filter and
//! time window) or a derived arithmetic expression over earlier features:
//!
//! ```text
//! feature recent = count() where action = "play" window last 7 days
//! feature spend  = sum(amount)
//! feature rate   = recent / (spend + 1)
//! ```
//!
//! Programs are parsed to an AST, type-checked against the data schema,
//! pretty-printed canonically, and executed per entity. An external-runner
//! escape hatch executes arbitrary generated programs out of process.

mod exec;
mod external;
mod lexer;
mod parser;
mod printer;
mod typecheck;

pub use exec::{execute, ExecOptions, WindowAnchor};
pub use external::{execute_external, RunnerConfig};
pub use parser::parse;
pub use printer::{pretty_print, print_def};
pub use typecheck::typecheck;

use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum DslError {
    #[error("parse error at line {line}, column {col}: {message} (expected one of: {})", expected.join(", "))]
    Parse {
        line: usize,
        col: usize,
        message: String,
        expected: Vec<String>,
    },
    #[error("typecheck error in definition {def:?}: {message}")]
    Typecheck { def: String, message: String },
    #[error("execution error in definition {def:?}: {message}")]
    Execution { def: String, message: String },
    #[error("execution timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("runner failed (exit {code:?}): {stderr}")]
    Runner { code: Option<i32>, stderr: String },
    #[error("runner output violates contract: {0}")]
    OutputContract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub defs: Vec<FeatureDef>,
}

impl Program {
    pub fn def_names(&self) -> Vec<&str> {
        self.defs.iter().map(|d| d.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub body: FeatureBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureBody {
    Agg(AggSpec),
    Derived(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggSpec {
    pub agg: AggFunc,
    /// Absent only for `count`.
    pub arg: Option<Expr>,
    pub filter: Option<Expr>,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFunc {
    Count,
    Sum,
    Mean,
    Min,
    Max,
    Std,
    Nunique,
    First,
    Last,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Mean => "mean",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Std => "std",
            AggFunc::Nunique => "nunique",
            AggFunc::First => "first",
            AggFunc::Last => "last",
        }
    }

    /// `nunique`, `first` and `last` accept any column type; the other
    /// argument-taking aggregates require a numeric argument.
    pub fn accepts_any_type(self) -> bool {
        matches!(self, AggFunc::Nunique | AggFunc::First | AggFunc::Last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    All,
    Last { n: u64, unit: WindowUnit },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowUnit {
    Hours,
    Days,
}

impl WindowUnit {
    pub fn seconds(self) -> i64 {
        match self {
            WindowUnit::Hours => 3_600,
            WindowUnit::Days => 86_400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeFunc {
    Hour,
    Dayofweek,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Number(f64),
    Str(String),
}

/// Expressions cover both value and boolean positions; `typecheck`
/// enforces well-typedness per context. Identifiers resolve to event
/// columns inside aggregates and to earlier feature names inside derived
/// definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Ident(String),
    Number(f64),
    Str(String),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Unary {
        op: UnOp,
        expr: Box<Expr>,
    },
    In {
        expr: Box<Expr>,
        list: Vec<Literal>,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    Time {
        func: TimeFunc,
        column: String,
    },
}

// ---------------------------------------------------------------------------
// Identifiers and keywords
// ---------------------------------------------------------------------------

pub const KEYWORDS: &[&str] = &[
    "feature",
    "where",
    "window",
    "all",
    "last",
    "hours",
    "days",
    "and",
    "or",
    "not",
    "in",
    "is",
    "null",
    "count",
    "sum",
    "mean",
    "min",
    "max",
    "std",
    "nunique",
    "first",
    "hour",
    "dayofweek",
];

/// `[a-z_][a-z0-9_]*` and not a reserved word.
pub fn is_valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    let ok_first = matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_');
    ok_first
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !KEYWORDS.contains(&s)
}

/// Grammar and semantics reference handed to the code-generating agents.
pub const GRAMMAR_REFERENCE: &str = r##"Feature DSL reference
---------------------
program  := def+
def      := "feature" IDENT "=" (agg | derived)
agg      := AGG "(" valexpr? ")" ["where" boolexpr]
            ["window" ("all" | "last" INT ("hours" | "days"))]
derived  := arithmetic over earlier feature names and numeric literals
AGG      := count | sum | mean | min | max | std | nunique | first | last
IDENT    := [a-z_][a-z0-9_]*   (keywords are reserved)
comments := "#" to end of line

Value expressions may use event columns, numeric and "string" literals,
arithmetic (+ - * /), and the extractors hour(col) / dayofweek(col) on
timestamp columns (UTC; dayofweek: 0 = Monday .. 6 = Sunday).
Filters additionally allow comparisons (= != < <= > >=), membership
(col in ["a", "b"]), null tests (col is null / col is not null), and
and / or / not.

Semantics, per entity, over its events sorted by time:
- window keeps events with t > t_max - n * unit, where t_max is the
  global maximum timestamp of the whole log;
- count() takes no argument and counts the filtered events;
- sum/mean/min/max/std need a numeric argument; std is population std;
- nunique/first/last accept any column type; first/last of a
  categorical or text value yield its global frequency (count / N);
  first/last of a timestamp yield epoch seconds;
- null cells are dropped before aggregating; empty input yields 0;
- division by zero yields 0 everywhere;
- derived definitions may reference only earlier feature names.
"##;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifier_validity() {
        for ok in ["x", "_x", "abc_9", "sessions_last_3d"] {
            assert!(is_valid_identifier(ok), "{ok}");
        }
        for bad in ["", "9x", "Abc", "a-b", "count", "last", "feature", "null"] {
            assert!(!is_valid_identifier(bad), "{bad}");
        }
    }
}
