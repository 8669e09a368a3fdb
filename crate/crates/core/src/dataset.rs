//! Event-log loading, validation, splitting and the baseline feature matrix.
//!
//! Wire formats: events and labels are UTF-8 CSV with a header row; the
//! schema is a JSON document. Timestamps are normalized to epoch seconds at
//! load, rows are sorted by `(timestamp, original row index)`, and missing
//! cells become explicit nulls.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::table::FeatureTable;
use crate::timeutil;
use crate::{EntityId, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Int,
    Float,
    Categorical,
    Timestamp,
    Text,
}

impl Dtype {
    pub fn is_numeric(self) -> bool {
        matches!(self, Dtype::Int | Dtype::Float)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Int => "int",
            Dtype::Float => "float",
            Dtype::Categorical => "categorical",
            Dtype::Timestamp => "timestamp",
            Dtype::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub dtype: Dtype,
    #[serde(default)]
    pub description: String,
}

/// Declared shape of the event table plus free-text context for the agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    #[serde(default)]
    pub dataset_context: String,
    pub columns: Vec<ColumnSpec>,
    pub entity_id_column: String,
    pub timestamp_column: String,
    #[serde(default)]
    pub baseline_feature_columns: Vec<String>,
}

impl DataSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if c.name.is_empty() {
                return Err(DatasetError::Schema("empty column name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(DatasetError::Schema(format!(
                    "duplicate column name {:?}",
                    c.name
                )));
            }
        }
        if self.column(&self.entity_id_column).is_none() {
            return Err(DatasetError::Schema(format!(
                "entity_id_column {:?} is not a declared column",
                self.entity_id_column
            )));
        }
        match self.column(&self.timestamp_column) {
            None => {
                return Err(DatasetError::Schema(format!(
                    "timestamp_column {:?} is not a declared column",
                    self.timestamp_column
                )))
            }
            Some(c) if c.dtype != Dtype::Timestamp => {
                return Err(DatasetError::Schema(format!(
                    "timestamp_column {:?} must have dtype timestamp",
                    self.timestamp_column
                )))
            }
            _ => {}
        }
        for name in &self.baseline_feature_columns {
            match self.column(name) {
                None => {
                    return Err(DatasetError::Schema(format!(
                        "baseline feature column {name:?} is not declared"
                    )))
                }
                Some(c) if !c.dtype.is_numeric() && c.dtype != Dtype::Categorical => {
                    return Err(DatasetError::Schema(format!(
                        "baseline feature column {name:?} must be numeric or categorical"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Plain-text rendering used inside agent prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.dataset_context.is_empty() {
            out.push_str(&format!("Context: {}\n", self.dataset_context));
        }
        out.push_str(&format!(
            "Entity column: {} | Timestamp column: {}\nColumns:\n",
            self.entity_id_column, self.timestamp_column
        ));
        for c in &self.columns {
            out.push_str(&format!("  - {} ({})", c.name, c.dtype.as_str()));
            if !c.description.is_empty() {
                out.push_str(&format!(": {}", c.description));
            }
            out.push('\n');
        }
        if !self.baseline_feature_columns.is_empty() {
            out.push_str(&format!(
                "Baseline feature columns: {}\n",
                self.baseline_feature_columns.join(", ")
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Values and rows
// ---------------------------------------------------------------------------

/// A coerced cell. Timestamps carry epoch seconds, categorical and text
/// cells both carry strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Ts(i64),
    Null,
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub entity: EntityId,
    /// Epoch seconds, copied out of the timestamp column.
    pub ts: i64,
    /// Original position in the events file, the sort tiebreaker.
    pub row_index: usize,
    /// One value per schema column, in schema order.
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    /// Rows in `(ts, row_index)` ascending order.
    pub rows: Vec<EventRow>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_ts(&self) -> i64 {
        self.rows.iter().map(|r| r.ts).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: u8,
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub entries: BTreeMap<EntityId, LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: DataSchema,
    pub events: EventLog,
    pub labels: LabelSet,
    /// Row indices into `events.rows` per entity, in event order. Rebuilt
    /// after deserialization, never persisted.
    #[serde(skip)]
    entity_rows: BTreeMap<EntityId, Vec<usize>>,
}

impl Dataset {
    pub fn new(schema: DataSchema, events: EventLog, labels: LabelSet) -> Self {
        let mut d = Dataset {
            schema,
            events,
            labels,
            entity_rows: BTreeMap::new(),
        };
        d.rebuild_index();
        d
    }

    pub fn rebuild_index(&mut self) {
        let mut map: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
        for (i, row) in self.events.rows.iter().enumerate() {
            map.entry(row.entity.clone()).or_default().push(i);
        }
        // Per-entity order is (ts, row_index) even if the row storage was
        // permuted, keeping execution independent of storage order.
        let rows = &self.events.rows;
        for idxs in map.values_mut() {
            idxs.sort_by_key(|&i| (rows[i].ts, rows[i].row_index));
        }
        self.entity_rows = map;
    }

    /// Event rows of one entity, in `(ts, row_index)` order.
    pub fn entity_events(&self, id: &str) -> Vec<&EventRow> {
        self.entity_rows
            .get(id)
            .map(|idxs| idxs.iter().map(|&i| &self.events.rows[i]).collect())
            .unwrap_or_default()
    }

    /// Sorted ids of all labeled entities.
    pub fn labeled_ids(&self) -> Vec<EntityId> {
        self.labels.entries.keys().cloned().collect()
    }

    pub fn label_of(&self, id: &str) -> Option<u8> {
        self.labels.entries.get(id).map(|e| e.label)
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

fn coerce_cell(raw: &str, dtype: Dtype, row: usize, column: &str) -> Result<Value, DatasetError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(Value::Null);
    }
    let err = |message: String| DatasetError::Parse {
        row,
        column: column.to_string(),
        message,
    };
    match dtype {
        Dtype::Int => trimmed
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| err(format!("cannot coerce {trimmed:?} to int"))),
        Dtype::Float => {
            let v = trimmed
                .parse::<f64>()
                .map_err(|_| err(format!("cannot coerce {trimmed:?} to float")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite float {trimmed:?}")));
            }
            Ok(Value::Float(v))
        }
        Dtype::Categorical | Dtype::Text => Ok(Value::Str(trimmed.to_string())),
        Dtype::Timestamp => timeutil::parse_timestamp(trimmed)
            .map(Value::Ts)
            .ok_or_else(|| err(format!("cannot parse timestamp {trimmed:?}"))),
    }
}

pub fn load_schema(path: &Path) -> Result<DataSchema, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let schema: DataSchema = serde_json::from_str(&text)
        .map_err(|e| DatasetError::Schema(format!("invalid schema document: {e}")))?;
    schema.validate()?;
    Ok(schema)
}

/// Loads, validates and sorts the dataset triplet.
pub fn load_dataset(
    events_path: &Path,
    labels_path: &Path,
    schema_path: &Path,
) -> Result<Dataset, DatasetError> {
    let schema = load_schema(schema_path)?;

    // Events.
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(events_path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                DatasetError::io(events_path, std::io::Error::other(e.to_string()))
            }
            _ => DatasetError::Schema(format!("events csv: {e}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Schema(format!("events csv header: {e}")))?
        .clone();
    let mut header_to_schema: Vec<usize> = Vec::with_capacity(headers.len());
    let mut seen_headers = BTreeSet::new();
    for h in headers.iter() {
        if !seen_headers.insert(h.to_string()) {
            return Err(DatasetError::Schema(format!(
                "duplicate events column {h:?}"
            )));
        }
        let idx = schema
            .column_index(h)
            .ok_or_else(|| DatasetError::Schema(format!("undeclared events column {h:?}")))?;
        header_to_schema.push(idx);
    }
    for c in &schema.columns {
        if !headers.iter().any(|h| h == c.name) {
            return Err(DatasetError::Schema(format!(
                "schema column {:?} missing from events file",
                c.name
            )));
        }
    }
    let entity_idx = schema.column_index(&schema.entity_id_column).unwrap();
    let ts_idx = schema.column_index(&schema.timestamp_column).unwrap();

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row_no = i + 1; // 1-based data row
        let rec = rec.map_err(|e| DatasetError::Parse {
            row: row_no,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        let mut values = vec![Value::Null; schema.columns.len()];
        for (j, cell) in rec.iter().enumerate() {
            let schema_idx = header_to_schema[j];
            let col = &schema.columns[schema_idx];
            values[schema_idx] = coerce_cell(cell, col.dtype, row_no, &col.name)?;
        }
        let entity = match &values[entity_idx] {
            Value::Null => {
                return Err(DatasetError::Parse {
                    row: row_no,
                    column: schema.entity_id_column.clone(),
                    message: "null entity id".into(),
                })
            }
            Value::Int(v) => v.to_string(),
            Value::Float(v) => v.to_string(),
            Value::Str(s) => s.clone(),
            Value::Ts(v) => v.to_string(),
        };
        let ts = match &values[ts_idx] {
            Value::Ts(v) => *v,
            _ => {
                return Err(DatasetError::Parse {
                    row: row_no,
                    column: schema.timestamp_column.clone(),
                    message: "null or unparseable timestamp".into(),
                })
            }
        };
        rows.push(EventRow {
            entity,
            ts,
            row_index: i,
            values,
        });
    }
    if rows.is_empty() {
        return Err(DatasetError::Schema(
            "events file contains no data rows".into(),
        ));
    }
    rows.sort_by_key(|r| (r.ts, r.row_index));

    // Labels.
    let labels = load_labels(labels_path)?;
    let entities: BTreeSet<&str> = rows.iter().map(|r| r.entity.as_str()).collect();
    for id in labels.entries.keys() {
        if !entities.contains(id.as_str()) {
            return Err(DatasetError::Schema(format!(
                "labeled entity {id:?} does not appear in the event log"
            )));
        }
    }

    Ok(Dataset::new(schema, EventLog { rows }, labels))
}

fn load_labels(path: &Path) -> Result<LabelSet, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DatasetError::io(path, std::io::Error::other(e.to_string())),
            _ => DatasetError::Schema(format!("labels csv: {e}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Schema(format!("labels csv header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_split = match cols.as_slice() {
        ["entity_id", "label"] => false,
        ["entity_id", "label", "split"] => true,
        _ => {
            return Err(DatasetError::Schema(
                "labels file must have columns entity_id,label[,split]".into(),
            ))
        }
    };
    let mut entries = BTreeMap::new();
    let mut tagged = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| DatasetError::Parse {
            row: row_no,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(DatasetError::Parse {
                row: row_no,
                column: "entity_id".into(),
                message: "empty entity id".into(),
            });
        }
        let label = match rec[1].trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(DatasetError::Parse {
                    row: row_no,
                    column: "label".into(),
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        let split = if has_split {
            match rec.get(2).map(str::trim).unwrap_or("") {
                "" => None,
                "train" => Some(SplitTag::Train),
                "test" => Some(SplitTag::Test),
                other => {
                    return Err(DatasetError::Parse {
                        row: row_no,
                        column: "split".into(),
                        message: format!("split must be train or test, got {other:?}"),
                    })
                }
            }
        } else {
            None
        };
        if split.is_some() {
            tagged += 1;
        }
        if entries
            .insert(id.clone(), LabelEntry { label, split })
            .is_some()
        {
            return Err(DatasetError::Schema(format!(
                "duplicate label row for entity {id:?}"
            )));
        }
    }
    if entries.is_empty() {
        return Err(DatasetError::Schema(
            "labels file contains no data rows".into(),
        ));
    }
    if tagged > 0 && tagged != entries.len() {
        return Err(DatasetError::Schema(
            "labels file mixes tagged and untagged split values".into(),
        ));
    }
    Ok(LabelSet { entries })
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    FromLabels,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.mode == SplitMode::Random {
            match self.train_fraction {
                None => {
                    return Err(DatasetError::Schema(
                        "random split requires train_fraction".into(),
                    ))
                }
                Some(f) if !(f > 0.0 && f < 1.0) => {
                    return Err(DatasetError::Schema(
                        "train_fraction must lie strictly between 0 and 1".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn check_both_classes(
    dataset: &Dataset,
    ids: &BTreeSet<EntityId>,
    side: &str,
) -> Result<(), DatasetError> {
    let mut has = [false, false];
    for id in ids {
        if let Some(l) = dataset.label_of(id) {
            has[l as usize] = true;
        }
    }
    if ids.is_empty() || !has[0] || !has[1] {
        return Err(DatasetError::DegenerateSplit(format!(
            "{side} side must be non-empty and contain both classes"
        )));
    }
    Ok(())
}

/// Partitions the labeled entities into train and test ids.
///
/// Random mode is a pure function of the sorted entity ids, the seed and
/// the fraction; the train side gets `floor(fraction * count)` entities.
pub fn split_entities(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(BTreeSet<EntityId>, BTreeSet<EntityId>), DatasetError> {
    spec.validate()?;
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    match spec.mode {
        SplitMode::FromLabels => {
            for (id, entry) in &dataset.labels.entries {
                match entry.split {
                    Some(SplitTag::Train) => {
                        train.insert(id.clone());
                    }
                    Some(SplitTag::Test) => {
                        test.insert(id.clone());
                    }
                    None => {
                        return Err(DatasetError::Schema(format!(
                            "from_labels split requires a split tag for every entity \
                             (missing for {id:?})"
                        )))
                    }
                }
            }
        }
        SplitMode::Random => {
            let ids = dataset.labeled_ids();
            if ids.len() < 4 {
                return Err(DatasetError::DegenerateSplit(
                    "random split needs at least 4 labeled entities".into(),
                ));
            }
            let fraction = spec.train_fraction.unwrap();
            let n_train = ((ids.len() as f64) * fraction).floor() as usize;
            let mut shuffled = ids;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            shuffled.shuffle(&mut rng);
            for (i, id) in shuffled.into_iter().enumerate() {
                if i < n_train {
                    train.insert(id);
                } else {
                    test.insert(id);
                }
            }
        }
    }
    check_both_classes(dataset, &train, "train")?;
    check_both_classes(dataset, &test, "test")?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Baseline matrix
// ---------------------------------------------------------------------------

/// One baseline row per requested entity.
///
/// Numeric baseline columns take the value from the entity's earliest
/// event (nulls become 0). Categorical columns are frequency-encoded: the
/// earliest event's category maps to `count(category across all events) / N`.
pub fn baseline_matrix(dataset: &Dataset, ids: &[EntityId]) -> FeatureTable {
    let schema = &dataset.schema;
    if schema.baseline_feature_columns.is_empty() {
        return FeatureTable::zero_width(ids.to_vec());
    }
    let n_total = dataset.events.len() as f64;
    // Global category counts per categorical baseline column.
    let mut freq: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
    for name in &schema.baseline_feature_columns {
        if dataset.schema.column(name).map(|c| c.dtype) == Some(Dtype::Categorical) {
            let idx = schema.column_index(name).unwrap();
            let counts = freq.entry(name.as_str()).or_default();
            for row in &dataset.events.rows {
                if let Value::Str(s) = &row.values[idx] {
                    *counts.entry(s.as_str()).or_default() += 1;
                }
            }
        }
    }

    let mut values = Vec::with_capacity(ids.len());
    for id in ids {
        let events = dataset.entity_events(id);
        let earliest = events.first();
        let mut row = Vec::with_capacity(schema.baseline_feature_columns.len());
        for name in &schema.baseline_feature_columns {
            let idx = schema.column_index(name).unwrap();
            let col = schema.column(name).unwrap();
            let v: Scalar = match earliest.map(|e| &e.values[idx]) {
                Some(Value::Str(s)) if col.dtype == Dtype::Categorical => {
                    let count = freq[name.as_str()].get(s.as_str()).copied().unwrap_or(0);
                    count as f64 / n_total
                }
                Some(other) => other.as_number().unwrap_or(0.0),
                None => 0.0,
            };
            row.push(v);
        }
        values.push(row);
    }
    FeatureTable {
        entity_ids: ids.to_vec(),
        columns: schema.baseline_feature_columns.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    fn toy_schema_json() -> &'static str {
        r#"{
            "dataset_context": "toy",
            "columns": [
                {"name": "uid", "dtype": "categorical", "description": "user"},
                {"name": "action", "dtype": "categorical", "description": ""},
                {"name": "ts", "dtype": "timestamp", "description": ""},
                {"name": "age", "dtype": "int", "description": ""}
            ],
            "entity_id_column": "uid",
            "timestamp_column": "ts",
            "baseline_feature_columns": []
        }"#
    }

    fn load_toy(events: &str, labels: &str) -> Result<Dataset, DatasetError> {
        let dir = tempfile::tempdir().unwrap();
        let e = write_file(dir.path(), "events.csv", events);
        let l = write_file(dir.path(), "labels.csv", labels);
        let s = write_file(dir.path(), "schema.json", toy_schema_json());
        load_dataset(&e, &l, &s)
    }

    #[test]
    fn minimal_well_formed_input() {
        let ds = load_toy(
            "uid,action,ts,age\nA,click,100,30\nB,click,50,40\nA,buy,200,31\n",
            "entity_id,label\nA,1\nB,0\n",
        )
        .unwrap();
        assert_eq!(ds.events.len(), 3);
        assert_eq!(ds.labels.entries.len(), 2);
        // Sorted by timestamp: B first.
        assert_eq!(ds.events.rows[0].entity, "B");
    }

    #[test]
    fn unlabeled_entities_load_fine() {
        let ds = load_toy(
            "uid,action,ts,age\nA,click,100,30\nC,click,150,22\nB,click,50,40\n",
            "entity_id,label\nA,1\nB,0\n",
        )
        .unwrap();
        assert_eq!(ds.labeled_ids(), vec!["A".to_string(), "B".to_string()]);
        assert_eq!(ds.entity_events("C").len(), 1);
    }

    #[test]
    fn uncoercible_cell_names_row_and_column() {
        let err = load_toy(
            "uid,action,ts,age\nA,click,100,abc\nB,click,50,40\n",
            "entity_id,label\nA,1\nB,0\n",
        )
        .unwrap_err();
        match err {
            DatasetError::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "age");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn labeled_entity_missing_from_log_is_schema_error() {
        let err = load_toy(
            "uid,action,ts,age\nA,click,100,30\n",
            "entity_id,label\nA,1\nZ,0\n",
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Schema(_)));
    }

    #[test]
    fn quoted_cells_with_commas() {
        let ds = load_toy(
            "uid,action,ts,age\nA,\"click, then buy\",100,30\nB,x,50,40\n",
            "entity_id,label\nA,1\nB,0\n",
        )
        .unwrap();
        let a = ds.entity_events("A");
        assert_eq!(a[0].values[1], Value::Str("click, then buy".into()));
    }

    #[test]
    fn loading_twice_is_byte_identical() {
        let events = "uid,action,ts,age\nA,click,100,30\nB,click,100,40\nA,buy,200,31\n";
        let labels = "entity_id,label\nA,1\nB,0\n";
        let d1 = load_toy(events, labels).unwrap();
        let d2 = load_toy(events, labels).unwrap();
        assert_eq!(
            serde_json::to_string(&d1).unwrap(),
            serde_json::to_string(&d2).unwrap()
        );
    }

    #[test]
    fn split_from_labels_copies_tags() {
        let ds = load_toy(
            "uid,action,ts,age\nA,c,1,1\nB,c,2,2\nC,c,3,3\nD,c,4,4\n",
            "entity_id,label,split\nA,1,train\nB,0,train\nC,1,test\nD,0,test\n",
        )
        .unwrap();
        let spec = SplitSpec {
            mode: SplitMode::FromLabels,
            train_fraction: None,
            seed: 0,
        };
        let (train, test) = split_entities(&ds, &spec).unwrap();
        assert_eq!(train.iter().cloned().collect::<Vec<_>>(), vec!["A", "B"]);
        assert_eq!(test.iter().cloned().collect::<Vec<_>>(), vec!["C", "D"]);
    }

    #[test]
    fn random_split_is_deterministic_and_sized() {
        let mut events = String::from("uid,action,ts,age\n");
        let mut labels = String::from("entity_id,label\n");
        for i in 0..100 {
            events.push_str(&format!("u{i:03},c,{i},1\n"));
            labels.push_str(&format!("u{i:03},{}\n", i % 2));
        }
        let ds = load_toy(&events, &labels).unwrap();
        let spec = SplitSpec {
            mode: SplitMode::Random,
            train_fraction: Some(0.55),
            seed: 7,
        };
        let (tr1, te1) = split_entities(&ds, &spec).unwrap();
        let (tr2, te2) = split_entities(&ds, &spec).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(tr1.len(), 55);
        assert_eq!(te1.len(), 45);
        assert!(tr1.is_disjoint(&te1));
    }

    #[test]
    fn degenerate_split_rejected() {
        let ds = load_toy(
            "uid,action,ts,age\nA,c,1,1\nB,c,2,2\nC,c,3,3\nD,c,4,4\n",
            "entity_id,label,split\nA,1,train\nB,1,train\nC,1,test\nD,0,test\n",
        )
        .unwrap();
        let spec = SplitSpec {
            mode: SplitMode::FromLabels,
            train_fraction: None,
            seed: 0,
        };
        assert!(matches!(
            split_entities(&ds, &spec),
            Err(DatasetError::DegenerateSplit(_))
        ));
    }

    fn baseline_ds() -> Dataset {
        let dir = tempfile::tempdir().unwrap();
        let schema = r#"{
            "dataset_context": "",
            "columns": [
                {"name": "uid", "dtype": "categorical", "description": ""},
                {"name": "kind", "dtype": "categorical", "description": ""},
                {"name": "ts", "dtype": "timestamp", "description": ""},
                {"name": "age", "dtype": "int", "description": ""}
            ],
            "entity_id_column": "uid",
            "timestamp_column": "ts",
            "baseline_feature_columns": ["age", "kind"]
        }"#;
        let e = write_file(
            dir.path(),
            "events.csv",
            "uid,kind,ts,age\nA,x,1,30\nA,x,5,31\nB,x,2,40\nB,y,3,41\n",
        );
        let l = write_file(dir.path(), "labels.csv", "entity_id,label\nA,1\nB,0\n");
        let s = write_file(dir.path(), "schema.json", schema);
        load_dataset(&e, &l, &s).unwrap()
    }

    #[test]
    fn baseline_earliest_event_and_frequency_encoding() {
        let ds = baseline_ds();
        let t = baseline_matrix(&ds, &["A".into(), "B".into()]);
        assert_eq!(t.columns, vec!["age", "kind"]);
        // A's earliest event has age 30; kind x appears 3 times out of 4.
        assert_eq!(t.values[0], vec![30.0, 0.75]);
        // B's earliest event (ts=2) has kind x too.
        assert_eq!(t.values[1], vec![40.0, 0.75]);
    }

    #[test]
    fn baseline_empty_columns_zero_width() {
        let ds = load_toy(
            "uid,action,ts,age\nA,c,1,1\nB,c,2,2\n",
            "entity_id,label\nA,1\nB,0\n",
        )
        .unwrap();
        let t = baseline_matrix(&ds, &["A".into(), "B".into()]);
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.n_cols(), 0);
    }

    #[test]
    fn baseline_restriction_consistency() {
        let ds = baseline_ds();
        let both = baseline_matrix(&ds, &["A".into(), "B".into()]);
        let only_a = baseline_matrix(&ds, &["A".into()]);
        assert_eq!(both.values[0], only_a.values[0]);
    }
}
