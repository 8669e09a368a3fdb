//! Deterministic per-entity execution of feature programs.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::{
    AggFunc, BinOp, DslError, Expr, FeatureBody, Literal, Program, TimeFunc, UnOp, Window,
};
use crate::dataset::{Dataset, Dtype, EventRow, Value};
use crate::table::FeatureTable;
use crate::timeutil;
use crate::{EntityId, Scalar};

/// Where window clauses anchor their cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowAnchor {
    /// One prediction time for all entities: the log's maximum timestamp.
    #[default]
    Global,
    /// Each entity's own last event.
    PerEntity,
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub anchor: WindowAnchor,
    /// Number of worker threads; results are independent of the choice.
    pub workers: usize,
    pub timeout: Option<Duration>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            anchor: WindowAnchor::Global,
            workers: 1,
            timeout: None,
        }
    }
}

/// Evaluated cell: `None` is null.
type Cell = Option<Value>;

struct EvalCtx<'a> {
    dataset: &'a Dataset,
    /// Global `category -> count / N` tables, one per string column used
    /// by a first/last aggregate.
    freq: HashMap<String, HashMap<String, f64>>,
    global_max_ts: i64,
}

fn div_safe(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

impl<'a> EvalCtx<'a> {
    fn column_value(&self, row: &EventRow, name: &str) -> Cell {
        let idx = self.dataset.schema.column_index(name)?;
        match &row.values[idx] {
            Value::Null => None,
            other => Some(other.clone()),
        }
    }

    /// Evaluates a value expression on one event row with null propagation.
    fn eval_value(&self, e: &Expr, row: &EventRow) -> Cell {
        match e {
            Expr::Number(v) => Some(Value::Float(*v)),
            Expr::Str(s) => Some(Value::Str(s.clone())),
            Expr::Ident(name) => self.column_value(row, name),
            Expr::Time { func, column } => {
                let v = self.column_value(row, column)?;
                let ts = match v {
                    Value::Ts(t) => t,
                    _ => return None,
                };
                let out = match func {
                    TimeFunc::Hour => timeutil::hour_utc(ts),
                    TimeFunc::Dayofweek => timeutil::dayofweek_utc(ts),
                };
                Some(Value::Float(out as f64))
            }
            Expr::Unary {
                op: UnOp::Neg,
                expr,
            } => {
                let v = self.eval_value(expr, row)?.as_number()?;
                Some(Value::Float(-v))
            }
            Expr::Unary { op: UnOp::Not, .. } => None, // boolean in value position: typecheck forbids
            Expr::Binary { op, lhs, rhs } => {
                let a = self.eval_value(lhs, row)?.as_number()?;
                let b = self.eval_value(rhs, row)?.as_number()?;
                let v = match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => div_safe(a, b),
                    _ => return None,
                };
                Some(Value::Float(v))
            }
            Expr::In { .. } | Expr::IsNull { .. } => None,
        }
    }

    /// Three-valued boolean evaluation; `None` means "unknown" (a null
    /// leaked into a comparison) and rows only pass on `Some(true)`.
    fn eval_bool(&self, e: &Expr, row: &EventRow) -> Option<bool> {
        match e {
            Expr::Binary {
                op: BinOp::And,
                lhs,
                rhs,
            } => match (self.eval_bool(lhs, row), self.eval_bool(rhs, row)) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            Expr::Binary {
                op: BinOp::Or,
                lhs,
                rhs,
            } => match (self.eval_bool(lhs, row), self.eval_bool(rhs, row)) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
            Expr::Unary {
                op: UnOp::Not,
                expr,
            } => self.eval_bool(expr, row).map(|b| !b),
            Expr::Binary { op, lhs, rhs } => {
                let a = self.eval_value(lhs, row)?;
                let b = self.eval_value(rhs, row)?;
                compare(*op, &a, &b)
            }
            Expr::In { expr, list } => {
                let v = self.eval_value(expr, row)?;
                let hit = list.iter().any(|l| match (l, &v) {
                    (Literal::Number(n), v) => v.as_number() == Some(*n),
                    (Literal::Str(s), Value::Str(vs)) => s == vs,
                    _ => false,
                });
                Some(hit)
            }
            Expr::IsNull { expr, negated } => {
                let is_null = self.eval_value(expr, row).is_none();
                Some(is_null != *negated)
            }
            // A bare value in boolean position is rejected by typecheck.
            _ => None,
        }
    }
}

fn compare(op: BinOp, a: &Value, b: &Value) -> Option<bool> {
    // Numbers (int/float) compare numerically, strings as strings,
    // timestamps as their epoch value.
    let ord = match (a, b) {
        (Value::Str(x), Value::Str(y)) => x.partial_cmp(y),
        (Value::Ts(x), Value::Ts(y)) => x.partial_cmp(y),
        _ => {
            let x = a.as_number()?;
            let y = b.as_number()?;
            x.partial_cmp(&y)
        }
    }?;
    Some(match op {
        BinOp::Eq => ord == std::cmp::Ordering::Equal,
        BinOp::Ne => ord != std::cmp::Ordering::Equal,
        BinOp::Lt => ord == std::cmp::Ordering::Less,
        BinOp::Le => ord != std::cmp::Ordering::Greater,
        BinOp::Gt => ord == std::cmp::Ordering::Greater,
        BinOp::Ge => ord != std::cmp::Ordering::Less,
        _ => return None,
    })
}

/// Canonical key for nunique counting.
fn distinct_key(v: &Value) -> String {
    match v {
        Value::Int(i) => format!("i{i}"),
        Value::Float(f) => {
            let f = if *f == 0.0 { 0.0 } else { *f }; // collapse -0.0
            format!("f{}", f.to_bits())
        }
        Value::Str(s) => format!("s{s}"),
        Value::Ts(t) => format!("t{t}"),
        Value::Null => "n".into(),
    }
}

fn numeric_encode(v: &Value, column_freq: Option<&HashMap<String, f64>>) -> f64 {
    match v {
        Value::Int(i) => *i as f64,
        Value::Float(f) => *f,
        Value::Ts(t) => *t as f64,
        Value::Str(s) => column_freq.and_then(|m| m.get(s)).copied().unwrap_or(0.0),
        Value::Null => 0.0,
    }
}

/// Name of the column a first/last argument resolves to when it is a
/// plain string column (the case needing frequency encoding).
fn str_column_of(e: &Expr, dataset: &Dataset) -> Option<String> {
    if let Expr::Ident(name) = e {
        let c = dataset.schema.column(name)?;
        if matches!(c.dtype, Dtype::Categorical | Dtype::Text) {
            return Some(name.clone());
        }
    }
    None
}

fn aggregate(
    agg: AggFunc,
    values: &[Value],
    n_rows: usize,
    freq: Option<&HashMap<String, f64>>,
) -> f64 {
    match agg {
        AggFunc::Count => n_rows as f64,
        AggFunc::Sum => values.iter().filter_map(Value::as_number).sum(),
        AggFunc::Mean => {
            let nums: Vec<f64> = values.iter().filter_map(Value::as_number).collect();
            if nums.is_empty() {
                0.0
            } else {
                nums.iter().sum::<f64>() / nums.len() as f64
            }
        }
        AggFunc::Min => values
            .iter()
            .filter_map(Value::as_number)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            })
            .unwrap_or(0.0),
        AggFunc::Max => values
            .iter()
            .filter_map(Value::as_number)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
            .unwrap_or(0.0),
        AggFunc::Std => {
            let nums: Vec<f64> = values.iter().filter_map(Value::as_number).collect();
            if nums.len() <= 1 {
                return 0.0;
            }
            let n = nums.len() as f64;
            let mean = nums.iter().sum::<f64>() / n;
            let var = nums.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            var.sqrt()
        }
        AggFunc::Nunique => {
            let mut seen = std::collections::BTreeSet::new();
            for v in values {
                seen.insert(distinct_key(v));
            }
            seen.len() as f64
        }
        AggFunc::First => values
            .first()
            .map(|v| numeric_encode(v, freq))
            .unwrap_or(0.0),
        AggFunc::Last => values
            .last()
            .map(|v| numeric_encode(v, freq))
            .unwrap_or(0.0),
    }
}

/// Executes a type-checked program for the given entities.
///
/// Pure in `(program, dataset, ids)`: the row storage order does not
/// matter because events are keyed by `(timestamp, row_index)`, and the
/// worker count does not affect results.
pub fn execute(
    program: &Program,
    dataset: &Dataset,
    ids: &[EntityId],
    opts: &ExecOptions,
) -> Result<FeatureTable, DslError> {
    let deadline = opts.timeout.map(|t| (Instant::now(), t));

    // Frequency tables for string-valued first/last arguments: integer
    // counts divided once, so 3 of 5 is exactly 0.6.
    let mut freq: HashMap<String, HashMap<String, f64>> = HashMap::new();
    let n_total = dataset.events.len() as f64;
    for def in &program.defs {
        if let FeatureBody::Agg(a) = &def.body {
            if matches!(a.agg, AggFunc::First | AggFunc::Last) {
                if let Some(col) = a.arg.as_ref().and_then(|e| str_column_of(e, dataset)) {
                    if freq.contains_key(&col) {
                        continue;
                    }
                    let idx = dataset.schema.column_index(&col).unwrap();
                    let mut counts: HashMap<String, usize> = HashMap::new();
                    for row in &dataset.events.rows {
                        if let Value::Str(s) = &row.values[idx] {
                            *counts.entry(s.clone()).or_default() += 1;
                        }
                    }
                    freq.insert(
                        col,
                        counts
                            .into_iter()
                            .map(|(k, c)| (k, c as f64 / n_total))
                            .collect(),
                    );
                }
            }
        }
    }

    let ctx = EvalCtx {
        dataset,
        freq,
        global_max_ts: dataset.events.max_ts(),
    };

    let run_chunk = |chunk: &[EntityId]| -> Result<Vec<Vec<Scalar>>, DslError> {
        let mut rows = Vec::with_capacity(chunk.len());
        for id in chunk {
            if let Some((start, budget)) = deadline {
                if start.elapsed() > budget {
                    return Err(DslError::Timeout(budget));
                }
            }
            rows.push(execute_entity(program, &ctx, id, opts.anchor)?);
        }
        Ok(rows)
    };

    let workers = opts.workers.max(1);
    let values = if workers == 1 || ids.len() < 2 {
        run_chunk(ids)?
    } else {
        let chunk_size = ids.len().div_ceil(workers);
        let chunks: Vec<&[EntityId]> = ids.chunks(chunk_size).collect();
        let results: Vec<Result<Vec<Vec<Scalar>>, DslError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|c| scope.spawn(move || run_chunk(c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        let mut merged = Vec::with_capacity(ids.len());
        for r in results {
            merged.extend(r?);
        }
        merged
    };

    Ok(FeatureTable {
        entity_ids: ids.to_vec(),
        columns: program.defs.iter().map(|d| d.name.clone()).collect(),
        values,
    })
}

fn execute_entity(
    program: &Program,
    ctx: &EvalCtx<'_>,
    id: &str,
    anchor: WindowAnchor,
) -> Result<Vec<Scalar>, DslError> {
    let events = ctx.dataset.entity_events(id);
    let anchor_ts = match anchor {
        WindowAnchor::Global => ctx.global_max_ts,
        WindowAnchor::PerEntity => events.last().map(|r| r.ts).unwrap_or(ctx.global_max_ts),
    };

    let mut env: HashMap<&str, f64> = HashMap::new();
    let mut out = Vec::with_capacity(program.defs.len());
    for def in &program.defs {
        let v = match &def.body {
            FeatureBody::Agg(agg) => {
                let cutoff = match agg.window {
                    Window::All => None,
                    Window::Last { n, unit } => {
                        Some(anchor_ts.saturating_sub((n as i64).saturating_mul(unit.seconds())))
                    }
                };
                let mut kept_rows = 0usize;
                let mut values: Vec<Value> = Vec::new();
                for row in &events {
                    if let Some(cut) = cutoff {
                        if row.ts <= cut {
                            continue;
                        }
                    }
                    if let Some(filter) = &agg.filter {
                        if ctx.eval_bool(filter, row) != Some(true) {
                            continue;
                        }
                    }
                    kept_rows += 1;
                    if let Some(arg) = &agg.arg {
                        // Null arguments are dropped before aggregating.
                        if let Some(v) = ctx.eval_value(arg, row) {
                            values.push(v);
                        }
                    }
                }
                let freq_table = agg
                    .arg
                    .as_ref()
                    .and_then(|e| str_column_of(e, ctx.dataset))
                    .and_then(|c| ctx.freq.get(&c));
                aggregate(agg.agg, &values, kept_rows, freq_table)
            }
            FeatureBody::Derived(e) => eval_derived(e, &env, &def.name)?,
        };
        if !v.is_finite() {
            return Err(DslError::Execution {
                def: def.name.clone(),
                message: format!("produced non-finite value {v} for entity {id:?}"),
            });
        }
        env.insert(def.name.as_str(), v);
        out.push(v);
    }
    Ok(out)
}

fn eval_derived(e: &Expr, env: &HashMap<&str, f64>, def: &str) -> Result<f64, DslError> {
    Ok(match e {
        Expr::Number(v) => *v,
        Expr::Ident(name) => *env.get(name.as_str()).ok_or_else(|| DslError::Execution {
            def: def.to_string(),
            message: format!("unknown feature {name:?}"),
        })?,
        Expr::Unary {
            op: UnOp::Neg,
            expr,
        } => -eval_derived(expr, env, def)?,
        Expr::Binary { op, lhs, rhs } => {
            let a = eval_derived(lhs, env, def)?;
            let b = eval_derived(rhs, env, def)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => div_safe(a, b),
                other => {
                    return Err(DslError::Execution {
                        def: def.to_string(),
                        message: format!("operator {other:?} invalid in derived body"),
                    })
                }
            }
        }
        other => {
            return Err(DslError::Execution {
                def: def.to_string(),
                message: format!("expression {other:?} invalid in derived body"),
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, Dataset};
    use std::io::Write;
    use std::path::Path;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    fn schema_json() -> &'static str {
        r#"{
            "dataset_context": "",
            "columns": [
                {"name": "uid", "dtype": "categorical", "description": ""},
                {"name": "action", "dtype": "categorical", "description": ""},
                {"name": "ts", "dtype": "timestamp", "description": ""},
                {"name": "v", "dtype": "float", "description": ""}
            ],
            "entity_id_column": "uid",
            "timestamp_column": "ts",
            "baseline_feature_columns": []
        }"#
    }

    fn load(events: &str, labels: &str) -> Dataset {
        let dir = tempfile::tempdir().unwrap();
        let e = write_file(dir.path(), "e.csv", events);
        let l = write_file(dir.path(), "l.csv", labels);
        let s = write_file(dir.path(), "s.json", schema_json());
        load_dataset(&e, &l, &s).unwrap()
    }

    fn run(ds: &Dataset, src: &str, ids: &[&str]) -> FeatureTable {
        let p = super::super::parse(src).unwrap();
        super::super::typecheck(&p, &ds.schema).unwrap();
        let ids: Vec<EntityId> = ids.iter().map(|s| s.to_string()).collect();
        execute(&p, ds, &ids, &ExecOptions::default()).unwrap()
    }

    fn toy() -> Dataset {
        load(
            "uid,action,ts,v\n\
             A,click,100,1\n\
             A,buy,200,2\n\
             A,click,300,3\n\
             B,click,150,\n\
             B,buy,250,5\n",
            "entity_id,label\nA,1\nB,0\n",
        )
    }

    #[test]
    fn count_and_mean() {
        let ds = toy();
        let t = run(&ds, "feature n = count()\nfeature m = mean(v)", &["A", "B"]);
        assert_eq!(t.values[0], vec![3.0, 2.0]);
        // B has a null v at ts=150; mean over the remaining value.
        assert_eq!(t.values[1], vec![2.0, 5.0]);
    }

    #[test]
    fn window_hand_cases() {
        // Global max is 300: "last 150 hours" spans everything; "last 1
        // hours" keeps t > 300 - 3600, still everything.
        let ds = toy();
        let t = run(&ds, "feature w = count() window last 150 hours", &["A"]);
        assert_eq!(t.values[0], vec![3.0]);
        let t = run(&ds, "feature w = count() window last 1 hours", &["A"]);
        assert_eq!(t.values[0], vec![3.0]);

        // Same entity events, but another entity pushes the global max to
        // 10000: t > 6400 keeps nothing of A.
        let ds = load(
            "uid,action,ts,v\nA,c,100,1\nA,c,200,2\nA,c,300,3\nZ,c,10000,1\n",
            "entity_id,label\nA,1\nZ,0\n",
        );
        let t = run(&ds, "feature w = count() window last 1 hours", &["A", "Z"]);
        assert_eq!(t.values[0], vec![0.0]);
        assert_eq!(t.values[1], vec![1.0]);
    }

    #[test]
    fn per_entity_anchor_option() {
        let ds = load(
            "uid,action,ts,v\nA,c,100,1\nA,c,200,2\nA,c,300,3\nZ,c,10000,1\n",
            "entity_id,label\nA,1\nZ,0\n",
        );
        let p = super::super::parse("feature w = count() window last 1 hours").unwrap();
        let opts = ExecOptions {
            anchor: WindowAnchor::PerEntity,
            ..Default::default()
        };
        let t = execute(&p, &ds, &["A".to_string()], &opts).unwrap();
        // Anchored at A's own max (300), the hour window keeps all 3.
        assert_eq!(t.values[0], vec![3.0]);
    }

    #[test]
    fn filters_and_null_semantics() {
        let ds = toy();
        let t = run(
            &ds,
            "feature buys = count() where action = \"buy\"",
            &["A", "B"],
        );
        assert_eq!(t.values, vec![vec![1.0], vec![1.0]]);
        let t = run(&ds, "feature nv = count() where v is null", &["A", "B"]);
        assert_eq!(t.values, vec![vec![0.0], vec![1.0]]);
        // Comparison with null is unknown, so the row drops.
        let t = run(&ds, "feature big = count() where v > 1", &["B"]);
        assert_eq!(t.values, vec![vec![1.0]]);
    }

    #[test]
    fn empty_aggregate_defaults() {
        let ds = toy();
        let t = run(
            &ds,
            "feature s = sum(v) where action = \"nope\"\n\
             feature m = mean(v) where action = \"nope\"\n\
             feature mn = min(v) where action = \"nope\"\n\
             feature sd = std(v) where action = \"nope\"\n\
             feature u = nunique(action) where action = \"nope\"\n\
             feature f = first(v) where action = \"nope\"",
            &["A"],
        );
        assert_eq!(t.values[0], vec![0.0; 6]);
    }

    #[test]
    fn std_single_event_is_zero() {
        let ds = toy();
        let t = run(&ds, "feature sd = std(v) where action = \"buy\"", &["A"]);
        assert_eq!(t.values[0], vec![0.0]);
    }

    #[test]
    fn first_last_encode_strings_and_timestamps() {
        let ds = toy();
        // A's first action is click; click appears 3 times in 5 events.
        let t = run(
            &ds,
            "feature fa = first(action)\nfeature lt = last(ts)",
            &["A"],
        );
        assert_eq!(t.values[0], vec![0.6, 300.0]);
        // First non-null v for B is 5 (the null at ts=150 is dropped).
        let t = run(&ds, "feature fv = first(v)", &["B"]);
        assert_eq!(t.values[0], vec![5.0]);
    }

    #[test]
    fn derived_safe_division() {
        let ds = toy();
        let t = run(
            &ds,
            "feature z = count() where action = \"nope\"\nfeature r = z / z",
            &["A"],
        );
        assert_eq!(t.values[0], vec![0.0, 0.0]);
    }

    #[test]
    fn storage_order_is_irrelevant() {
        let mut ds = load(
            "uid,action,ts,v\nA,c,100,1\nB,c,100,2\nA,c,100,3\nB,c,50,4\n",
            "entity_id,label\nA,1\nB,0\n",
        );
        let before = run(
            &ds,
            "feature f = first(v)\nfeature l = last(v)",
            &["A", "B"],
        );
        // Shuffle the in-memory row storage; (ts, row_index) still orders.
        ds.events.rows.reverse();
        ds.rebuild_index();
        let after = run(
            &ds,
            "feature f = first(v)\nfeature l = last(v)",
            &["A", "B"],
        );
        assert_eq!(before, after);
        assert_eq!(before.values[0], vec![1.0, 3.0]);
    }

    #[test]
    fn workers_do_not_change_results() {
        let ds = toy();
        let p = super::super::parse("feature n = count()\nfeature m = mean(v * 2)").unwrap();
        let ids: Vec<EntityId> = vec!["A".into(), "B".into()];
        let one = execute(&p, &ds, &ids, &ExecOptions::default()).unwrap();
        for workers in [2, 3, 8] {
            let k = execute(
                &p,
                &ds,
                &ids,
                &ExecOptions {
                    workers,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(one, k);
        }
    }

    #[test]
    fn widening_window_never_decreases_count() {
        let ds = toy();
        let mut prev = 0.0;
        for hours in [1, 10, 100, 1000] {
            let t = run(
                &ds,
                &format!("feature n = count() window last {hours} hours"),
                &["A"],
            );
            assert!(t.values[0][0] >= prev);
            prev = t.values[0][0];
        }
    }
}
