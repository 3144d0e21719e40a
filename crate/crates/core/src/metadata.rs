//! Federated encoding protocol: nodes announce their categorical vocabularies,
//! continuous ranges, and class distributions; the server merges them into a
//! single [`GlobalMetadata`] so every node encodes rows into an identically
//! shaped numeric matrix. Without this round, nodes holding different category
//! subsets would one-hot encode to different widths and model aggregation
//! would break.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{ClassDistribution, Dataset, NodePartition, TableSchema, Value};

/// What one node reveals about its local data: unique categorical values,
/// continuous min/max, and its class distribution. Never the rows themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMetadata {
    pub node_id: usize,
    pub categories: BTreeMap<String, BTreeSet<String>>,
    pub ranges: BTreeMap<String, (f64, f64)>,
    pub class_dist: ClassDistribution,
}

/// The merged, federation-wide view used for uniform encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetadata {
    schema: TableSchema,
    /// Sorted, duplicate-free vocabulary per categorical column; the index of
    /// a value is its one-hot position.
    vocab: BTreeMap<String, Vec<String>>,
    /// Elementwise (min over nodes, max over nodes) per continuous column.
    global_ranges: BTreeMap<String, (f64, f64)>,
    /// Continuous columns whose global range collapsed to a point.
    degenerate: BTreeSet<String>,
    /// Sorted union of all locally observed class labels.
    class_labels: Vec<String>,
    pub per_node_class_dist: Vec<ClassDistribution>,
}

/// Column-block layout of the encoded feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub blocks: Vec<LayoutBlock>,
    width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub column: String,
    pub offset: usize,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockKind {
    Categorical { values: Vec<String> },
    Continuous { min: f64, max: f64, degenerate: bool },
}

impl EncodingLayout {
    /// Build a layout from blocks laid end to end; offsets must already be
    /// consistent (as produced by [`GlobalMetadata::layout`] or by hand in
    /// tests).
    pub fn new(blocks: Vec<LayoutBlock>) -> Self {
        let width = blocks
            .iter()
            .map(|b| match &b.kind {
                BlockKind::Categorical { values } => b.offset + values.len(),
                BlockKind::Continuous { .. } => b.offset + 1,
            })
            .max()
            .unwrap_or(0);
        EncodingLayout { blocks, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (start, end) column ranges of all categorical blocks.
    pub fn categorical_ranges(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.kind {
                BlockKind::Categorical { values } => Some((b.offset, b.offset + values.len())),
                BlockKind::Continuous { .. } => None,
            })
            .collect()
    }

    /// Column indices of the continuous slots.
    pub fn continuous_offsets(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.kind {
                BlockKind::Continuous { .. } => Some(b.offset),
                BlockKind::Categorical { .. } => None,
            })
            .collect()
    }

    /// Extend the layout with one trailing categorical block (used by the
    /// whole-table GAN baseline, which appends the class label as a feature).
    pub fn with_extra_block(&self, column: &str, values: &[String]) -> EncodingLayout {
        let mut blocks = self.blocks.clone();
        blocks.push(LayoutBlock {
            column: column.to_string(),
            offset: self.width,
            kind: BlockKind::Categorical {
                values: values.to_vec(),
            },
        });
        EncodingLayout {
            blocks,
            width: self.width + values.len(),
        }
    }
}

/// Numeric matrix produced by [`encode`]: one-hot categorical blocks, [-1, 1]
/// scaled continuous slots, and a parallel vector of class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub layout: EncodingLayout,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    /// Rows whose class index equals `label_idx`.
    pub fn rows_with_label(&self, label_idx: usize) -> EncodedMatrix {
        let idx: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label_idx)
            .map(|(i, _)| i)
            .collect();
        self.select_rows(&idx)
    }

    pub fn select_rows(&self, idx: &[usize]) -> EncodedMatrix {
        let features = self.features.select(ndarray::Axis(0), idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        EncodedMatrix {
            features,
            labels,
            layout: self.layout.clone(),
        }
    }
}

/// Compute one node's metadata from its local rows only.
pub fn collect_local_metadata(part: &NodePartition, schema: &TableSchema) -> LocalMetadata {
    let mut categories: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();

    for row in part.data.rows() {
        for (name, value) in schema.column_names().iter().zip(row) {
            if name == schema.target_col() {
                continue;
            }
            match value {
                Value::Cat(s) => {
                    categories
                        .entry(name.clone())
                        .or_default()
                        .insert(s.clone());
                }
                Value::Cont(v) => {
                    ranges
                        .entry(name.clone())
                        .and_modify(|(lo, hi)| {
                            *lo = lo.min(*v);
                            *hi = hi.max(*v);
                        })
                        .or_insert((*v, *v));
                }
            }
        }
    }

    LocalMetadata {
        node_id: part.node_id,
        categories,
        ranges,
        class_dist: crate::tabular::class_distribution(part),
    }
}

/// Merge node metadata into the global dictionary: sorted vocabulary unions,
/// elementwise range min/max, and the sorted union of class labels. The
/// result is independent of submission order.
pub fn merge_metadata(schema: &TableSchema, locals: &[LocalMetadata]) -> Result<GlobalMetadata> {
    if locals.is_empty() {
        return Err(Error::Contract(
            "merge_metadata requires at least one node's metadata".into(),
        ));
    }

    let mut vocab_sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut global_ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut class_set: BTreeSet<String> = BTreeSet::new();
    for local in locals {
        for (col, values) in &local.categories {
            vocab_sets
                .entry(col.clone())
                .or_default()
                .extend(values.iter().cloned());
        }
        for (col, &(lo, hi)) in &local.ranges {
            global_ranges
                .entry(col.clone())
                .and_modify(|(glo, ghi)| {
                    *glo = glo.min(lo);
                    *ghi = ghi.max(hi);
                })
                .or_insert((lo, hi));
        }
        class_set.extend(local.class_dist.counts.keys().cloned());
    }

    let mut degenerate = BTreeSet::new();
    for (col, &(lo, hi)) in &global_ranges {
        if lo == hi {
            log::warn!("continuous column '{col}' is degenerate (min == max == {lo}); it encodes to a constant 0");
            degenerate.insert(col.clone());
        }
    }

    let mut per_node: Vec<ClassDistribution> = locals.iter().map(|l| l.class_dist.clone()).collect();
    per_node.sort_by_key(|d| d.node_id);
    per_node.dedup_by_key(|d| d.node_id);

    Ok(GlobalMetadata {
        schema: schema.clone(),
        vocab: vocab_sets
            .into_iter()
            .map(|(col, set)| (col, set.into_iter().collect()))
            .collect(),
        global_ranges,
        degenerate,
        class_labels: class_set.into_iter().collect(),
        per_node_class_dist: per_node,
    })
}

impl GlobalMetadata {
    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }

    pub fn vocab(&self, column: &str) -> Option<&[String]> {
        self.vocab.get(column).map(|v| v.as_slice())
    }

    pub fn range(&self, column: &str) -> Option<(f64, f64)> {
        self.global_ranges.get(column).copied()
    }

    /// Column-block layout over the schema's feature columns (target excluded).
    pub fn layout(&self) -> EncodingLayout {
        let mut blocks = Vec::new();
        let mut offset = 0usize;
        for name in self.schema.feature_cols() {
            if self.schema.is_continuous(name) {
                let (min, max) = self.global_ranges.get(name).copied().unwrap_or((0.0, 0.0));
                blocks.push(LayoutBlock {
                    column: name.clone(),
                    offset,
                    kind: BlockKind::Continuous {
                        min,
                        max,
                        degenerate: self.degenerate.contains(name) || min == max,
                    },
                });
                offset += 1;
            } else {
                let values = self.vocab.get(name).cloned().unwrap_or_default();
                let width = values.len();
                blocks.push(LayoutBlock {
                    column: name.clone(),
                    offset,
                    kind: BlockKind::Categorical { values },
                });
                offset += width;
            }
        }
        EncodingLayout {
            blocks,
            width: offset,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Encode a dataset against the global metadata: categorical columns become
/// one-hot blocks in vocabulary order, continuous columns map affinely onto
/// [-1, 1], labels become class indices. Row order is preserved.
pub fn encode(data: &Dataset, gm: &GlobalMetadata) -> Result<EncodedMatrix> {
    if data.schema() != gm.schema() {
        return Err(Error::Schema(
            "dataset schema does not match the metadata schema".into(),
        ));
    }
    let layout = gm.layout();
    let n = data.len();
    let mut features = Array2::<f64>::zeros((n, layout.width()));
    let mut labels = Vec::with_capacity(n);

    let col_pos: Vec<usize> = layout
        .blocks
        .iter()
        .map(|b| data.schema().col_index(&b.column).expect("layout column exists"))
        .collect();
    let target_idx = data
        .schema()
        .col_index(data.schema().target_col())
        .expect("target column exists");

    for (i, row) in data.rows().iter().enumerate() {
        for (block, &pos) in layout.blocks.iter().zip(&col_pos) {
            match (&block.kind, &row[pos]) {
                (BlockKind::Categorical { values }, Value::Cat(s)) => {
                    let vi = values
                        .binary_search(s)
                        .map_err(|_| Error::UnknownCategory {
                            column: block.column.clone(),
                            value: s.clone(),
                        })?;
                    features[[i, block.offset + vi]] = 1.0;
                }
                (BlockKind::Continuous { min, max, degenerate }, Value::Cont(v)) => {
                    features[[i, block.offset]] = if *degenerate {
                        0.0
                    } else {
                        2.0 * (v - min) / (max - min) - 1.0
                    };
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column '{}' value kind does not match its block",
                        block.column
                    )))
                }
            }
        }
        let label = row[target_idx].as_cat().expect("target is categorical");
        let li = gm.class_index(label).ok_or_else(|| Error::UnknownCategory {
            column: gm.schema().target_col().to_string(),
            value: label.to_string(),
        })?;
        labels.push(li);
    }

    Ok(EncodedMatrix {
        features,
        labels,
        layout,
    })
}

/// Invert [`encode`]. Categorical blocks are discretized by argmax (ties go
/// to the lowest index), so generator outputs that are merely simplex-like
/// still decode; continuous slots are inverse-mapped and clipped to the
/// global range.
pub fn decode(m: &EncodedMatrix, gm: &GlobalMetadata) -> Result<Dataset> {
    let layout = gm.layout();
    if m.layout.width() != layout.width() {
        return Err(Error::Contract(format!(
            "encoded width {} does not match metadata layout width {}",
            m.layout.width(),
            layout.width()
        )));
    }

    let schema = gm.schema().clone();
    let n_cols = schema.column_names().len();
    let target_idx = schema.col_index(schema.target_col()).expect("target exists");

    let mut rows = Vec::with_capacity(m.n_rows());
    for i in 0..m.n_rows() {
        let mut row = vec![Value::Cont(0.0); n_cols];
        for block in &layout.blocks {
            let pos = schema.col_index(&block.column).expect("layout column exists");
            match &block.kind {
                BlockKind::Categorical { values } => {
                    let mut best = 0usize;
                    let mut best_v = f64::NEG_INFINITY;
                    for (j, vi) in (block.offset..block.offset + values.len()).enumerate() {
                        let v = m.features[[i, vi]];
                        if v > best_v {
                            best_v = v;
                            best = j;
                        }
                    }
                    row[pos] = Value::Cat(values[best].clone());
                }
                BlockKind::Continuous { min, max, degenerate } => {
                    let x = m.features[[i, block.offset]];
                    let v = if *degenerate {
                        *min
                    } else {
                        ((x + 1.0) / 2.0 * (max - min) + min).clamp(*min, *max)
                    };
                    row[pos] = Value::Cont(v);
                }
            }
        }
        let li = m.labels[i];
        let label = gm
            .class_labels
            .get(li)
            .ok_or_else(|| Error::Contract(format!("label index {li} out of range")))?;
        row[target_idx] = Value::Cat(label.clone());
        rows.push(row);
    }

    Dataset::new(schema, rows)
}
