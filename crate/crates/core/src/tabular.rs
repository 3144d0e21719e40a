//! Tabular datasets: schema declaration, CSV loading, stratified splitting,
//! and Dirichlet label-skew partitioning across emulated nodes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, stage};

/// A single cell: categorical columns hold text, continuous columns hold reals.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Cat(String),
    Cont(f64),
}

impl Value {
    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            Value::Cont(_) => None,
        }
    }

    pub fn as_cont(&self) -> Option<f64> {
        match self {
            Value::Cont(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }
}

/// Declares which columns are categorical, which are continuous, and which
/// one carries the class label. The target column is treated as categorical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    column_names: Vec<String>,
    categorical: Vec<String>,
    continuous: Vec<String>,
    target: String,
}

impl TableSchema {
    /// Build a schema from the three disjoint column groups. Column order is
    /// categorical columns, then continuous columns, then the target.
    pub fn new(
        categorical: Vec<String>,
        continuous: Vec<String>,
        target: impl Into<String>,
    ) -> Result<Self> {
        let target = target.into();
        let mut column_names = Vec::with_capacity(categorical.len() + continuous.len() + 1);
        column_names.extend(categorical.iter().cloned());
        column_names.extend(continuous.iter().cloned());
        column_names.push(target.clone());

        let schema = TableSchema {
            column_names,
            categorical,
            continuous,
            target,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::Schema("target column name is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.column_names {
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate column '{name}'")));
            }
        }
        if self.categorical.iter().any(|c| *c == self.target)
            || self.continuous.iter().any(|c| *c == self.target)
        {
            return Err(Error::Schema(format!(
                "target column '{}' also declared as a feature",
                self.target
            )));
        }
        if let Some(c) = self.categorical.iter().find(|c| self.continuous.contains(c)) {
            return Err(Error::Schema(format!(
                "column '{c}' declared both categorical and continuous"
            )));
        }
        Ok(())
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn categorical_cols(&self) -> &[String] {
        &self.categorical
    }

    pub fn continuous_cols(&self) -> &[String] {
        &self.continuous
    }

    pub fn target_col(&self) -> &str {
        &self.target
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn is_continuous(&self, name: &str) -> bool {
        self.continuous.iter().any(|c| c == name)
    }

    /// Feature columns in schema order (everything except the target).
    pub fn feature_cols(&self) -> impl Iterator<Item = &String> {
        self.column_names.iter().filter(move |c| **c != self.target)
    }
}

/// Rows are stored aligned to `schema.column_names()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: TableSchema,
    rows: Vec<Vec<Value>>,
}

impl Dataset {
    pub fn new(schema: TableSchema, rows: Vec<Vec<Value>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.column_names.len() {
                return Err(Error::Schema(format!(
                    "row {i} has {} cells, schema declares {} columns",
                    row.len(),
                    schema.column_names.len()
                )));
            }
            for (name, value) in schema.column_names.iter().zip(row) {
                let ok = if schema.is_continuous(name) {
                    matches!(value, Value::Cont(_))
                } else {
                    matches!(value, Value::Cat(_))
                };
                if !ok {
                    return Err(Error::Schema(format!(
                        "row {i}, column '{name}': value kind does not match schema"
                    )));
                }
            }
        }
        Ok(Dataset { schema, rows })
    }

    pub fn empty(schema: TableSchema) -> Self {
        Dataset {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Class label of one row.
    pub fn label_of(&self, row: usize) -> &str {
        let ti = self
            .schema
            .col_index(self.schema.target_col())
            .expect("target column is always in column_names");
        self.rows[row][ti]
            .as_cat()
            .expect("target values are categorical by construction")
    }

    /// Count of rows per class label.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for i in 0..self.len() {
            *counts.entry(self.label_of(i).to_string()).or_insert(0) += 1;
        }
        counts
    }

    /// Append all rows of `other`; schemas must be identical.
    pub fn extend_rows(&mut self, other: &Dataset) -> Result<()> {
        if self.schema != other.schema {
            return Err(Error::Schema(
                "cannot merge datasets with different schemas".into(),
            ));
        }
        self.rows.extend(other.rows.iter().cloned());
        Ok(())
    }

    fn select(&self, mut indices: Vec<usize>) -> Dataset {
        indices.sort_unstable();
        Dataset {
            schema: self.schema.clone(),
            rows: indices.into_iter().map(|i| self.rows[i].clone()).collect(),
        }
    }

    /// Row indices grouped by class label, in label order.
    fn rows_by_label(&self) -> BTreeMap<String, Vec<usize>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            groups.entry(self.label_of(i).to_string()).or_default().push(i);
        }
        groups
    }
}

/// One emulated node's local slice of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePartition {
    pub node_id: usize,
    pub data: Dataset,
}

/// Per-node class label counts, the first thing a node shares with the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub node_id: usize,
    pub counts: BTreeMap<String, usize>,
}

impl ClassDistribution {
    pub fn count(&self, label: &str) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Result of loading a CSV file: the dataset plus how many rows were dropped
/// for holding empty cells.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: Dataset,
    pub rows_dropped: usize,
}

/// Load a comma-separated file with a header row. The header must contain
/// every schema column (order-insensitive); extra file columns are ignored.
/// Rows with empty cells are dropped and counted; a non-empty cell that fails
/// numeric parsing in a continuous column is an error.
pub fn load_dataset(path: impl AsRef<Path>, schema: &TableSchema) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let mut positions = Vec::with_capacity(schema.column_names().len());
    for name in schema.column_names() {
        match headers.iter().position(|h| h == name) {
            Some(p) => positions.push(p),
            None => {
                return Err(Error::Schema(format!(
                    "file is missing declared column '{name}'"
                )))
            }
        }
    }
    let extra: Vec<&str> = headers
        .iter()
        .filter(|h| !schema.column_names().iter().any(|c| c == h))
        .collect();
    if !extra.is_empty() {
        log::warn!("ignoring undeclared columns: {extra:?}");
    }

    let mut rows = Vec::new();
    let mut rows_dropped = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_idx + 1,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(schema.column_names().len());
        let mut drop = false;
        for (name, &pos) in schema.column_names().iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("").trim();
            if cell.is_empty() {
                drop = true;
                break;
            }
            if schema.is_continuous(name) {
                let v: f64 = cell.parse().map_err(|e| Error::Parse {
                    row: row_idx + 1,
                    column: name.clone(),
                    message: format!("'{cell}' is not a number ({e})"),
                })?;
                row.push(Value::Cont(v));
            } else {
                row.push(Value::Cat(cell.to_string()));
            }
        }
        if drop {
            rows_dropped += 1;
        } else {
            rows.push(row);
        }
    }
    if rows_dropped > 0 {
        log::warn!("dropped {rows_dropped} rows with empty cells");
    }
    Ok(LoadReport {
        dataset: Dataset::new(schema.clone(), rows)?,
        rows_dropped,
    })
}

/// Stratified train/test split. Each class contributes `floor(fraction * n)`
/// rows to the test set, so per-class test counts are within one row of the
/// exact fraction. Single-row classes go entirely to train.
pub fn split_train_test(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if data.is_empty() {
        return Err(Error::Contract("cannot split an empty dataset".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (label, mut indices) in data.rows_by_label() {
        if indices.len() == 1 {
            log::warn!("class '{label}' has a single row; keeping it in train");
            train_idx.push(indices[0]);
            continue;
        }
        let mut rng = seeding::rng_from(seed, &[stage::SPLIT, seeding::hash_label(&label)]);
        indices.shuffle(&mut rng);
        let n_test = (test_fraction * indices.len() as f64).floor() as usize;
        test_idx.extend_from_slice(&indices[..n_test]);
        train_idx.extend_from_slice(&indices[n_test..]);
    }
    Ok((data.select(train_idx), data.select(test_idx)))
}

/// Partition training rows across `n_nodes` emulated nodes. For each class
/// label independently, a probability vector over nodes is drawn from
/// Dirichlet(alpha * 1_n) and the class rows are dealt to nodes in those
/// proportions, rounded by largest remainder so every row is placed exactly
/// once.
pub fn dirichlet_partition(
    data: &Dataset,
    n_nodes: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<NodePartition>> {
    if data.is_empty() {
        return Err(Error::Contract("cannot partition an empty dataset".into()));
    }
    if n_nodes == 0 {
        return Err(Error::Contract("n_nodes must be at least 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("alpha must be positive, got {alpha}")));
    }

    let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for (label, mut indices) in data.rows_by_label() {
        let mut rng =
            seeding::rng_from(seed, &[stage::PARTITION, seeding::hash_label(&label)]);
        let probs = sample_dirichlet(alpha, n_nodes, &mut rng);
        let counts = largest_remainder_counts(&probs, indices.len());
        indices.shuffle(&mut rng);
        let mut cursor = 0;
        for (node, &count) in counts.iter().enumerate() {
            per_node[node].extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    Ok(per_node
        .into_iter()
        .enumerate()
        .map(|(node_id, idx)| NodePartition {
            node_id,
            data: data.select(idx),
        })
        .collect())
}

/// Symmetric Dirichlet draw via normalized Gamma(alpha, 1) variates.
fn sample_dirichlet(alpha: f64, n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        // All draws underflowed to zero (possible for very small alpha).
        return vec![1.0 / n as f64; n];
    }
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

/// Round `probs * total` to integer counts summing exactly to `total`,
/// assigning leftovers to the largest fractional remainders (ties to the
/// lower node id).
fn largest_remainder_counts(probs: &[f64], total: usize) -> Vec<usize> {
    let targets: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &node in order.iter().take(total - assigned) {
        counts[node] += 1;
    }
    counts
}

/// Class label counts of one node partition.
pub fn class_distribution(part: &NodePartition) -> ClassDistribution {
    ClassDistribution {
        node_id: part.node_id,
        counts: part.data.class_counts(),
    }
}
