//! The reward loop: standardization, the built-in logistic-regression
//! learner, ranking/classification metrics, and feature-set evaluation.
//!
//! The numeric kernels are generic over the float type; the engine
//! instantiates them with [`crate::Scalar`].

use std::collections::BTreeSet;
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::dataset::{baseline_matrix, Dataset};
use crate::table::FeatureTable;
use crate::{EntityId, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("degenerate labels: both classes are required")]
    DegenerateLabels,
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("external learner failed (exit {code:?}): {stderr}")]
    Runner { code: Option<i32>, stderr: String },
    #[error("external learner timed out after {0:?}")]
    Timeout(Duration),
    #[error("external learner output violates contract: {0}")]
    OutputContract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Config and report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    BuiltinLogreg,
    External {
        command_template: String,
        timeout_seconds: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerConfig {
    #[serde(default = "default_l2")]
    pub l2_lambda: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_iters")]
    pub iterations: u32,
    #[serde(default = "default_kind", flatten)]
    pub kind: LearnerKind,
}

fn default_l2() -> f64 {
    1e-3
}
fn default_lr() -> f64 {
    0.1
}
fn default_iters() -> u32 {
    300
}
fn default_kind() -> LearnerKind {
    LearnerKind::BuiltinLogreg
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            l2_lambda: default_l2(),
            learning_rate: default_lr(),
            iterations: default_iters(),
            kind: default_kind(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !self.l2_lambda.is_finite() || self.l2_lambda < 0.0 {
            return Err(EvalError::Config(
                "l2_lambda must be a finite value >= 0".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(EvalError::Config(
                "learning_rate must be a finite value > 0".into(),
            ));
        }
        if self.iterations < 1 {
            return Err(EvalError::Config("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// The metric suite reported per evaluation. The target metric driving
/// rewards is `auc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<F = Scalar> {
    pub accuracy: F,
    pub precision: F,
    pub recall: F,
    pub f1: F,
    pub auc: F,
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-column train statistics for `(x - mean) / std` scaling; columns
/// with zero variance map to all-zeros.
#[derive(Debug, Clone)]
pub struct Preprocessor<F> {
    pub means: Vec<F>,
    pub stds: Vec<F>,
}

pub fn fit_preprocess<F: Float>(train: &[Vec<F>]) -> Preprocessor<F> {
    let cols = train.first().map(Vec::len).unwrap_or(0);
    let n = F::from(train.len().max(1)).unwrap();
    let mut means = vec![F::zero(); cols];
    let mut stds = vec![F::zero(); cols];
    for j in 0..cols {
        let mut sum = F::zero();
        for row in train {
            sum = sum + row[j];
        }
        let mean = sum / n;
        let mut var = F::zero();
        for row in train {
            let d = row[j] - mean;
            var = var + d * d;
        }
        means[j] = mean;
        stds[j] = (var / n).sqrt();
    }
    Preprocessor { means, stds }
}

pub fn apply_preprocess<F: Float>(pre: &Preprocessor<F>, table: &[Vec<F>]) -> Vec<Vec<F>> {
    table
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if pre.stds[j] == F::zero() {
                        F::zero()
                    } else {
                        (v - pre.means[j]) / pre.stds[j]
                    }
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LogregModel<F> {
    pub weights: Vec<F>,
    pub intercept: F,
}

fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

impl<F: Float> LogregModel<F> {
    pub fn predict_proba(&self, x: &[Vec<F>]) -> Vec<F> {
        x.iter()
            .map(|row| {
                let mut z = self.intercept;
                for (w, v) in self.weights.iter().zip(row) {
                    z = z + *w * *v;
                }
                sigmoid(z)
            })
            .collect()
    }
}

/// Regularized mean cross-entropy: `mean(ce) + lambda * ||w||^2`. The
/// intercept is not penalized.
pub fn logreg_loss<F: Float>(x: &[Vec<F>], y: &[u8], w: &[F], b: F, l2_lambda: F) -> F {
    let n = F::from(x.len()).unwrap();
    let mut total = F::zero();
    for (row, &label) in x.iter().zip(y) {
        let mut z = b;
        for (wj, v) in w.iter().zip(row) {
            z = z + *wj * *v;
        }
        // Stable cross-entropy: max(z, 0) - z*y + ln(1 + exp(-|z|)).
        let zy = if label == 1 { z } else { F::zero() };
        let ce = z.max(F::zero()) - zy + (F::one() + (-z.abs()).exp()).ln();
        total = total + ce;
    }
    let mut penalty = F::zero();
    for wj in w {
        penalty = penalty + *wj * *wj;
    }
    total / n + l2_lambda * penalty
}

/// Analytic gradient of [`logreg_loss`] in `(w, b)`.
pub fn logreg_gradient<F: Float>(
    x: &[Vec<F>],
    y: &[u8],
    w: &[F],
    b: F,
    l2_lambda: F,
) -> (Vec<F>, F) {
    let n = F::from(x.len()).unwrap();
    let two = F::from(2.0).unwrap();
    let mut grad_w = vec![F::zero(); w.len()];
    let mut grad_b = F::zero();
    for (row, &label) in x.iter().zip(y) {
        let mut z = b;
        for (wj, v) in w.iter().zip(row) {
            z = z + *wj * *v;
        }
        let err = sigmoid(z) - F::from(label).unwrap();
        for (g, v) in grad_w.iter_mut().zip(row) {
            *g = *g + err * *v;
        }
        grad_b = grad_b + err;
    }
    for (g, wj) in grad_w.iter_mut().zip(w) {
        *g = *g / n + two * l2_lambda * *wj;
    }
    (grad_w, grad_b / n)
}

/// Full-batch gradient descent from all-zero weights for exactly
/// `iterations` steps at a fixed learning rate.
pub fn train_logreg<F: Float>(
    x: &[Vec<F>],
    y: &[u8],
    cfg: &LearnerConfig,
) -> Result<LogregModel<F>, EvalError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(EvalError::Shape(format!(
            "{} rows vs {} labels",
            x.len(),
            y.len()
        )));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(EvalError::DegenerateLabels);
    }
    let dims = x.first().map(Vec::len).unwrap_or(0);
    let lr = F::from(cfg.learning_rate).unwrap();
    let lambda = F::from(cfg.l2_lambda).unwrap();
    let mut w = vec![F::zero(); dims];
    let mut b = F::zero();
    for _ in 0..cfg.iterations {
        let (gw, gb) = logreg_gradient(x, y, &w, b, lambda);
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj = *wj - lr * *g;
        }
        b = b - lr * gb;
    }
    Ok(LogregModel {
        weights: w,
        intercept: b,
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Probability that a random positive outranks a random negative, ties
/// counted one half (the rank-statistic formulation).
pub fn auc<F: Float>(labels: &[u8], scores: &[F]) -> Result<F, EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::Shape(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    // Average ranks over tie groups, then the Mann-Whitney identity.
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores must not be NaN")
    });
    let mut rank_sum_pos = F::zero();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group [i, j] shares the mean rank.
        let mean_rank = F::from(i + 1 + j + 1).unwrap() / F::from(2.0).unwrap();
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos = rank_sum_pos + mean_rank;
            }
        }
        i = j + 1;
    }
    let np = F::from(n_pos).unwrap();
    let nn = F::from(n_neg).unwrap();
    let u = rank_sum_pos - np * (np + F::one()) / F::from(2.0).unwrap();
    Ok(u / (np * nn))
}

/// Thresholded confusion-matrix metrics plus AUC. Predicts positive when
/// `score >= threshold`; precision is 0 when nothing is predicted
/// positive; f1 is 0 when precision + recall is 0.
pub fn classification_metrics<F: Float>(
    labels: &[u8],
    scores: &[F],
    threshold: F,
) -> Result<MetricsReport<F>, EvalError> {
    let auc = auc(labels, scores)?;
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&l, &s) in labels.iter().zip(scores) {
        let pred = s >= threshold;
        match (pred, l) {
            (true, 1) => tp += 1,
            (true, _) => fp += 1,
            (false, 1) => fne += 1,
            (false, _) => tn += 1,
        }
    }
    let f = |v: usize| F::from(v).unwrap();
    let precision = if tp + fp == 0 {
        F::zero()
    } else {
        f(tp) / f(tp + fp)
    };
    let recall = if tp + fne == 0 {
        F::zero()
    } else {
        f(tp) / f(tp + fne)
    };
    let f1 = if precision + recall == F::zero() {
        F::zero()
    } else {
        F::from(2.0).unwrap() * precision * recall / (precision + recall)
    };
    let accuracy = f(tp + tn) / f(labels.len());
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        auc,
    })
}

// ---------------------------------------------------------------------------
// Feature-set evaluation
// ---------------------------------------------------------------------------

pub struct Split {
    pub train_ids: BTreeSet<EntityId>,
    pub test_ids: BTreeSet<EntityId>,
}

/// Evaluates a candidate feature table: concatenates the baseline matrix,
/// fits the learner on the train rows, and reports metrics on the test
/// rows. The feature table must cover every labeled entity.
pub fn evaluate_feature_set(
    features: &FeatureTable,
    dataset: &Dataset,
    split: &Split,
    cfg: &LearnerConfig,
) -> Result<MetricsReport, EvalError> {
    cfg.validate()?;
    let all_ids = dataset.labeled_ids();
    let base = baseline_matrix(dataset, &all_ids);
    let features = features
        .restrict(&all_ids)
        .map_err(|e| EvalError::Shape(format!("feature table must cover labeled ids: {e}")))?;
    let matrix = base
        .concat_columns(&features)
        .map_err(|e| EvalError::Shape(e.to_string()))?;

    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut train_ids = Vec::new();
    let mut test_x = Vec::new();
    let mut test_y = Vec::new();
    let mut test_ids = Vec::new();
    for (id, row) in matrix.entity_ids.iter().zip(&matrix.values) {
        let label = dataset
            .label_of(id)
            .ok_or_else(|| EvalError::Shape(format!("entity {id:?} has no label")))?;
        if split.train_ids.contains(id) {
            train_x.push(row.clone());
            train_y.push(label);
            train_ids.push(id.clone());
        } else if split.test_ids.contains(id) {
            test_x.push(row.clone());
            test_y.push(label);
            test_ids.push(id.clone());
        }
    }
    if train_x.is_empty() || test_x.is_empty() {
        return Err(EvalError::Shape("split sides must be non-empty".into()));
    }

    let scores = match &cfg.kind {
        LearnerKind::BuiltinLogreg => {
            let pre = fit_preprocess(&train_x);
            let xt = apply_preprocess(&pre, &train_x);
            let xe = apply_preprocess(&pre, &test_x);
            let model = train_logreg(&xt, &train_y, cfg)?;
            model.predict_proba(&xe)
        }
        LearnerKind::External {
            command_template,
            timeout_seconds,
        } => run_external_learner(
            command_template,
            *timeout_seconds,
            &matrix.columns,
            &train_ids,
            &train_x,
            &train_y,
            &test_ids,
            &test_x,
        )?,
    };
    classification_metrics(&test_y, &scores, 0.5)
}

/// External learner contract: `{train_csv}` has entity_id, features and a
/// trailing label column; `{test_csv}` has entity_id and features; the
/// command writes `{output_csv}` with columns `entity_id,score`.
#[allow(clippy::too_many_arguments)]
fn run_external_learner(
    command_template: &str,
    timeout_seconds: u64,
    columns: &[String],
    train_ids: &[EntityId],
    train_x: &[Vec<Scalar>],
    train_y: &[u8],
    test_ids: &[EntityId],
    test_x: &[Vec<Scalar>],
) -> Result<Vec<Scalar>, EvalError> {
    let dir = tempfile::tempdir()?;
    let train_csv = dir.path().join("train.csv");
    let test_csv = dir.path().join("test.csv");
    let output_csv = dir.path().join("scores.csv");

    let mut w = csv::Writer::from_path(&train_csv).map_err(|e| EvalError::Config(e.to_string()))?;
    let mut header = vec!["entity_id".to_string()];
    header.extend(columns.iter().cloned());
    header.push("label".into());
    w.write_record(&header)
        .map_err(|e| EvalError::Config(e.to_string()))?;
    for ((id, row), y) in train_ids.iter().zip(train_x).zip(train_y) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| crate::table::format_scalar(*v)));
        rec.push(y.to_string());
        w.write_record(&rec)
            .map_err(|e| EvalError::Config(e.to_string()))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&test_csv).map_err(|e| EvalError::Config(e.to_string()))?;
    let mut header = vec!["entity_id".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)
        .map_err(|e| EvalError::Config(e.to_string()))?;
    for (id, row) in test_ids.iter().zip(test_x) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| crate::table::format_scalar(*v)));
        w.write_record(&rec)
            .map_err(|e| EvalError::Config(e.to_string()))?;
    }
    w.flush()?;

    let cmd = command_template
        .replace("{train_csv}", &train_csv.display().to_string())
        .replace("{test_csv}", &test_csv.display().to_string())
        .replace("{output_csv}", &output_csv.display().to_string());
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()?;
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let err_handle = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr_pipe.read_to_string(&mut buf);
        buf
    });
    let budget = Duration::from_secs(timeout_seconds);
    let started = Instant::now();
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None if started.elapsed() > budget => {
                let _ = child.kill();
                let _ = child.wait();
                let _ = err_handle.join();
                return Err(EvalError::Timeout(budget));
            }
            None => std::thread::sleep(Duration::from_millis(10)),
        }
    };
    let stderr = err_handle.join().unwrap_or_default();
    if !status.success() {
        return Err(EvalError::Runner {
            code: status.code(),
            stderr: stderr.trim().into(),
        });
    }

    let mut r = csv::Reader::from_path(&output_csv)
        .map_err(|e| EvalError::OutputContract(e.to_string()))?;
    let headers = r
        .headers()
        .map_err(|e| EvalError::OutputContract(e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["entity_id", "score"] {
        return Err(EvalError::OutputContract(
            "output must have columns entity_id,score".into(),
        ));
    }
    let mut scores: std::collections::HashMap<String, Scalar> = std::collections::HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| EvalError::OutputContract(e.to_string()))?;
        let v: Scalar = rec[1]
            .trim()
            .parse()
            .map_err(|_| EvalError::OutputContract(format!("non-numeric score {:?}", &rec[1])))?;
        if !v.is_finite() {
            return Err(EvalError::OutputContract("non-finite score".into()));
        }
        if scores.insert(rec[0].to_string(), v).is_some() {
            return Err(EvalError::OutputContract(format!(
                "duplicate score row {:?}",
                &rec[0]
            )));
        }
    }
    test_ids
        .iter()
        .map(|id| {
            scores
                .get(id)
                .copied()
                .ok_or_else(|| EvalError::OutputContract(format!("missing score for {id:?}")))
        })
        .collect()
}
