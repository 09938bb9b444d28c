//! Tabular datasets: schema-driven loading and encoding, group index sets,
//! the χ² independence diagnostic, a binary split cache, and a synthetic
//! generator with known fairness structure.

mod cache;
mod chi2;
mod load;
mod schema;
pub mod synthetic;

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use chi2::{chi2_from_counts, chi2_independence, contingency};
pub use load::{load_tabular, read_numeric_csv, Encoder};
pub use schema::{
    parse_key_values, CmpOp, Column, ColumnKind, Entry, Filter, Label, LabelRule, Schema, SplitRecipe,
};

use crate::diff::Matrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

/// Encoded rows of one split. Either label may be absent on a row.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub features: Matrix,
    pub t: Vec<Option<u8>>,
    pub s: Vec<Option<u8>>,
    /// Extra binary labels for downstream transfer tasks, one vector per task.
    pub transfer: Vec<Vec<Option<u8>>>,
    pub tag: SplitTag,
}

impl DatasetSplit {
    pub fn new(features: Matrix, t: Vec<Option<u8>>, s: Vec<Option<u8>>, tag: SplitTag) -> Result<Self> {
        if t.len() != features.rows() || s.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                found: t.len().min(s.len()),
            });
        }
        if t.iter().chain(&s).flatten().any(|&v| v > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        Ok(Self {
            features,
            t,
            s,
            transfer: Vec::new(),
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows subset, labels included.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            transfer: self.transfer.iter().map(|l| idx.iter().map(|&i| l[i]).collect()).collect(),
            tag: self.tag,
        }
    }

    pub fn labels(&self, attr: Attribute) -> &[Option<u8>] {
        match attr {
            Attribute::Target => &self.t,
            Attribute::Sensitive => &self.s,
        }
    }

    /// All labels of one attribute, failing if any row lacks it.
    pub fn complete_labels(&self, attr: Attribute) -> Result<Vec<u8>> {
        self.labels(attr)
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::InvalidInput(format!("row {i} has no {} label", attr.name()))))
            .collect()
    }

    /// Rows carrying both labels.
    pub fn fully_labeled(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.t[i].is_some() && self.s[i].is_some()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
    pub feature_names: Vec<String>,
    pub transfer_names: Vec<String>,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = &DatasetSplit> {
        [&self.train, &self.val, &self.test].into_iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attribute {
    Target,
    Sensitive,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Self::Target => "target",
            Self::Sensitive => "sensitive",
        }
    }
}

/// Index sets of the two values of a binary attribute (`p`: 0, `q`: 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPair {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
}

/// Rows with attribute 0 and 1, ignoring rows without the label.
pub fn group_indices(split: &DatasetSplit, attr: Attribute) -> Result<GroupPair> {
    let labels = split.labels(attr);
    let p: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(0)).collect();
    let q: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(1)).collect();
    for (set, v) in [(&p, 0), (&q, 1)] {
        if set.is_empty() {
            return Err(Error::EmptyGroup(format!("no rows with {} = {v}", attr.name())));
        }
    }
    Ok(GroupPair { p, q })
}

/// Sensitive-group index sets within each target class: `result[t]` pairs
/// `(s = 0, t)` with `(s = 1, t)`.
pub fn conditional_group_indices(split: &DatasetSplit) -> Result<[GroupPair; 2]> {
    let cell = |s: u8, t: u8| -> Result<Vec<usize>> {
        let v: Vec<usize> = (0..split.len())
            .filter(|&i| split.s[i] == Some(s) && split.t[i] == Some(t))
            .collect();
        if v.is_empty() {
            return Err(Error::EmptyGroup(format!("no rows with s = {s}, t = {t}")));
        }
        Ok(v)
    };
    Ok([
        GroupPair {
            p: cell(0, 0)?,
            q: cell(1, 0)?,
        },
        GroupPair {
            p: cell(0, 1)?,
            q: cell(1, 1)?,
        },
    ])
}
