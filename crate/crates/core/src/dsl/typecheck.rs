//! Static validation of programs against a data schema.

use std::collections::BTreeSet;

use super::{AggFunc, BinOp, DslError, Expr, FeatureBody, Literal, Program, UnOp};
use crate::dataset::{DataSchema, Dtype};

/// Expression types. Timestamps are distinct from numbers: they only meet
/// arithmetic through `hour()` / `dayofweek()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Num,
    Str,
    Ts,
    Bool,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Num => "number",
            Ty::Str => "string",
            Ty::Ts => "timestamp",
            Ty::Bool => "boolean",
        }
    }
}

fn column_ty(dtype: Dtype) -> Ty {
    match dtype {
        Dtype::Int | Dtype::Float => Ty::Num,
        Dtype::Categorical | Dtype::Text => Ty::Str,
        Dtype::Timestamp => Ty::Ts,
    }
}

struct Checker<'a> {
    schema: &'a DataSchema,
    def_name: &'a str,
}

impl<'a> Checker<'a> {
    fn err(&self, message: String) -> DslError {
        DslError::Typecheck {
            def: self.def_name.to_string(),
            message,
        }
    }

    /// Types an expression in column context (aggregate args and filters).
    fn type_of(&self, e: &Expr) -> Result<Ty, DslError> {
        match e {
            Expr::Number(_) => Ok(Ty::Num),
            Expr::Str(_) => Ok(Ty::Str),
            Expr::Ident(name) => match self.schema.column(name) {
                Some(c) => Ok(column_ty(c.dtype)),
                None => Err(self.err(format!("unknown column {name:?}"))),
            },
            Expr::Time { func, column } => match self.schema.column(column) {
                Some(c) if c.dtype == Dtype::Timestamp => Ok(Ty::Num),
                Some(c) => Err(self.err(format!(
                    "{func:?} applies only to timestamp columns, {column:?} is {}",
                    c.dtype.as_str()
                ))),
                None => Err(self.err(format!("unknown column {column:?}"))),
            },
            Expr::Unary {
                op: UnOp::Neg,
                expr,
            } => {
                let t = self.type_of(expr)?;
                if t != Ty::Num {
                    return Err(self.err(format!("negation requires a number, got {}", t.name())));
                }
                Ok(Ty::Num)
            }
            Expr::Unary {
                op: UnOp::Not,
                expr,
            } => {
                let t = self.type_of(expr)?;
                if t != Ty::Bool {
                    return Err(self.err(format!("'not' requires a boolean, got {}", t.name())));
                }
                Ok(Ty::Bool)
            }
            Expr::Binary { op, lhs, rhs } => {
                let lt = self.type_of(lhs)?;
                let rt = self.type_of(rhs)?;
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                        if lt != Ty::Num || rt != Ty::Num {
                            return Err(self.err(format!(
                                "arithmetic requires numbers, got {} and {}",
                                lt.name(),
                                rt.name()
                            )));
                        }
                        Ok(Ty::Num)
                    }
                    BinOp::Eq | BinOp::Ne => {
                        if lt != rt || lt == Ty::Bool {
                            return Err(self.err(format!(
                                "'='/'!=' compare matching value types, got {} and {}",
                                lt.name(),
                                rt.name()
                            )));
                        }
                        Ok(Ty::Bool)
                    }
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                        let ordered =
                            (lt == Ty::Num && rt == Ty::Num) || (lt == Ty::Ts && rt == Ty::Ts);
                        if !ordered {
                            return Err(self.err(format!(
                                "ordering compares numbers or timestamps, got {} and {}",
                                lt.name(),
                                rt.name()
                            )));
                        }
                        Ok(Ty::Bool)
                    }
                    BinOp::And | BinOp::Or => {
                        if lt != Ty::Bool || rt != Ty::Bool {
                            return Err(self.err(format!(
                                "'and'/'or' require booleans, got {} and {}",
                                lt.name(),
                                rt.name()
                            )));
                        }
                        Ok(Ty::Bool)
                    }
                }
            }
            Expr::In { expr, list } => {
                let t = self.type_of(expr)?;
                let all_num = list.iter().all(|l| matches!(l, Literal::Number(_)));
                let all_str = list.iter().all(|l| matches!(l, Literal::Str(_)));
                match t {
                    Ty::Num if all_num => Ok(Ty::Bool),
                    Ty::Str if all_str => Ok(Ty::Bool),
                    Ty::Num | Ty::Str => {
                        Err(self.err("'in' list literals must match the value type".into()))
                    }
                    other => Err(self.err(format!("'in' cannot test {} values", other.name()))),
                }
            }
            Expr::IsNull { expr, .. } => {
                // Null tests accept any value-typed operand.
                let t = self.type_of(expr)?;
                if t == Ty::Bool {
                    return Err(self.err("'is null' cannot test a boolean".into()));
                }
                Ok(Ty::Bool)
            }
        }
    }

    /// Derived bodies reference earlier feature names and numbers only.
    fn check_derived(&self, e: &Expr, defined: &BTreeSet<&str>) -> Result<(), DslError> {
        match e {
            Expr::Number(_) => Ok(()),
            Expr::Ident(name) => {
                if !defined.contains(name.as_str()) {
                    return Err(self.err(format!(
                        "derived definition references {name:?}, which is not an earlier feature"
                    )));
                }
                Ok(())
            }
            Expr::Unary {
                op: UnOp::Neg,
                expr,
            } => self.check_derived(expr, defined),
            Expr::Binary {
                op: BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div,
                lhs,
                rhs,
            } => {
                self.check_derived(lhs, defined)?;
                self.check_derived(rhs, defined)
            }
            // The parser cannot produce the remaining shapes in derived
            // position; reject defensively for hand-built ASTs.
            other => Err(self.err(format!(
                "expression {other:?} is not valid in a derived body"
            ))),
        }
    }
}

/// Validates column references, dtype compatibility, aggregate argument
/// types, duplicate names and derived-name ordering.
pub fn typecheck(program: &Program, schema: &DataSchema) -> Result<(), DslError> {
    let mut defined: BTreeSet<&str> = BTreeSet::new();
    for def in &program.defs {
        let checker = Checker {
            schema,
            def_name: &def.name,
        };
        if defined.contains(def.name.as_str()) {
            return Err(checker.err(format!("duplicate feature name {:?}", def.name)));
        }
        if schema.column(&def.name).is_some() {
            return Err(checker.err(format!(
                "feature name {:?} shadows an event column",
                def.name
            )));
        }
        match &def.body {
            FeatureBody::Agg(agg) => {
                if let Some(arg) = &agg.arg {
                    let t = checker.type_of(arg)?;
                    match t {
                        Ty::Bool => {
                            return Err(checker
                                .err("aggregate argument must be a value, not a boolean".into()))
                        }
                        Ty::Num => {}
                        Ty::Str | Ty::Ts if agg.agg.accepts_any_type() => {}
                        other => {
                            return Err(checker.err(format!(
                                "{} requires a numeric argument, got {}",
                                agg.agg.name(),
                                other.name()
                            )))
                        }
                    }
                }
                if let Some(filter) = &agg.filter {
                    let t = checker.type_of(filter)?;
                    if t != Ty::Bool {
                        return Err(
                            checker.err(format!("filter must be boolean, got {}", t.name()))
                        );
                    }
                }
                debug_assert!(agg.agg != AggFunc::Count || agg.arg.is_none());
            }
            FeatureBody::Derived(e) => checker.check_derived(e, &defined)?,
        }
        defined.insert(def.name.as_str());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use crate::dataset::ColumnSpec;

    fn schema() -> DataSchema {
        DataSchema {
            dataset_context: String::new(),
            columns: vec![
                ColumnSpec {
                    name: "uid".into(),
                    dtype: Dtype::Categorical,
                    description: String::new(),
                },
                ColumnSpec {
                    name: "action".into(),
                    dtype: Dtype::Categorical,
                    description: String::new(),
                },
                ColumnSpec {
                    name: "ts".into(),
                    dtype: Dtype::Timestamp,
                    description: String::new(),
                },
                ColumnSpec {
                    name: "v".into(),
                    dtype: Dtype::Float,
                    description: String::new(),
                },
                ColumnSpec {
                    name: "k".into(),
                    dtype: Dtype::Int,
                    description: String::new(),
                },
            ],
            entity_id_column: "uid".into(),
            timestamp_column: "ts".into(),
            baseline_feature_columns: vec![],
        }
    }

    fn check(src: &str) -> Result<(), DslError> {
        typecheck(&parse(src).unwrap(), &schema())
    }

    #[test]
    fn accepts_well_typed_programs() {
        check("feature n = count() where action = \"click\" window last 2 days").unwrap();
        check("feature s = sum(v * 2 + k)").unwrap();
        check("feature u = nunique(action)").unwrap();
        check("feature f = first(ts)").unwrap();
        check("feature h = mean(hour(ts)) where dayofweek(ts) in [5, 6]").unwrap();
        check("feature a = sum(v)\nfeature b = count()\nfeature r = a / (b + 1)").unwrap();
        check("feature n = count() where v is null or v >= 0.5").unwrap();
    }

    #[test]
    fn sum_over_categorical_rejected() {
        let err = check("feature s = sum(action)").unwrap_err();
        match err {
            DslError::Typecheck { def, message } => {
                assert_eq!(def, "s");
                assert!(message.contains("numeric"));
            }
            _ => panic!("wrong error"),
        }
    }

    #[test]
    fn derived_referencing_later_definition_rejected() {
        let err = check("feature r = n + 1\nfeature n = count()").unwrap_err();
        assert!(matches!(err, DslError::Typecheck { .. }));
    }

    #[test]
    fn hour_on_non_timestamp_rejected() {
        let err = check("feature h = mean(hour(v))").unwrap_err();
        match err {
            DslError::Typecheck { message, .. } => assert!(message.contains("timestamp")),
            _ => panic!("wrong error"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(check("feature n = count()\nfeature n = sum(v)").is_err());
    }

    #[test]
    fn unknown_column_rejected() {
        assert!(check("feature s = sum(nope)").is_err());
    }

    #[test]
    fn type_confusions_rejected() {
        assert!(check("feature n = count() where action > 3").is_err());
        assert!(check("feature n = count() where v = \"x\"").is_err());
        assert!(check("feature n = count() where action in [1, 2]").is_err());
        assert!(check("feature n = count() where v + action > 1").is_err());
        assert!(check("feature s = sum(ts)").is_err());
    }

    #[test]
    fn feature_shadowing_column_rejected() {
        assert!(check("feature v = count()").is_err());
    }
}
