//! Per-entity feature tables: the numeric output of feature execution.

use std::fmt;
use std::path::Path;

use crate::{EntityId, Scalar};

/// One row per entity, one column per feature, all values finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub entity_ids: Vec<EntityId>,
    pub columns: Vec<String>,
    /// Row-major: `values[row][col]`.
    pub values: Vec<Vec<Scalar>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("table shape mismatch: {0}")]
    Shape(String),
}

impl FeatureTable {
    /// A table with the given rows and no columns.
    pub fn zero_width(entity_ids: Vec<EntityId>) -> Self {
        let values = vec![Vec::new(); entity_ids.len()];
        FeatureTable {
            entity_ids,
            columns: Vec::new(),
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Column-concatenates two tables covering the same entities in the
    /// same order.
    pub fn concat_columns(&self, other: &FeatureTable) -> Result<FeatureTable, TableError> {
        if self.entity_ids != other.entity_ids {
            return Err(TableError::Shape(
                "cannot concatenate tables over different entity sets".into(),
            ));
        }
        let mut columns = self.columns.clone();
        columns.extend(other.columns.iter().cloned());
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().chain(b.iter()).copied().collect())
            .collect();
        Ok(FeatureTable {
            entity_ids: self.entity_ids.clone(),
            columns,
            values,
        })
    }

    /// Rows restricted to the given ids, in the given order.
    pub fn restrict(&self, ids: &[EntityId]) -> Result<FeatureTable, TableError> {
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let idx = self
                .entity_ids
                .iter()
                .position(|e| e == id)
                .ok_or_else(|| TableError::Shape(format!("entity {id} missing from table")))?;
            rows.push(self.values[idx].clone());
        }
        Ok(FeatureTable {
            entity_ids: ids.to_vec(),
            columns: self.columns.clone(),
            values: rows,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TableError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["entity_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.entity_ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format_scalar(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`FeatureTable::write_csv`] or by an external
    /// runner (header row, first column `entity_id`, numeric cells).
    pub fn read_csv(path: &Path) -> Result<FeatureTable, TableError> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.is_empty() || &headers[0] != "entity_id" {
            return Err(TableError::Shape("first column must be entity_id".into()));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut entity_ids = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != columns.len() + 1 {
                return Err(TableError::Shape(format!("row {} has wrong arity", i + 1)));
            }
            entity_ids.push(rec[0].to_string());
            let mut row = Vec::with_capacity(columns.len());
            for (j, cell) in rec.iter().skip(1).enumerate() {
                let v: Scalar = cell.trim().parse().map_err(|_| {
                    TableError::Shape(format!(
                        "non-numeric cell in row {} column {}",
                        i + 1,
                        columns[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(TableError::Shape(format!(
                        "non-finite cell in row {} column {}",
                        i + 1,
                        columns[j]
                    )));
                }
                row.push(v);
            }
            values.push(row);
        }
        Ok(FeatureTable {
            entity_ids,
            columns,
            values,
        })
    }
}

/// Round-trippable decimal formatting (shortest representation).
pub fn format_scalar(v: Scalar) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

impl fmt::Display for FeatureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "entity_id,{}", self.columns.join(","))?;
        for (id, row) in self.entity_ids.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format_scalar(*v)).collect();
            writeln!(f, "{},{}", id, cells.join(","))?;
        }
        Ok(())
    }
}
