use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// One `key = value` line of a declarative config file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped; keys
/// may repeat.
pub fn parse_key_values(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// How a raw column value becomes a binary label.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelRule {
    /// 1 when the value is one of these strings.
    OneOf(Vec<String>),
    /// 1 when the value parses as a number above the threshold.
    Above(f64),
}

impl LabelRule {
    pub fn apply(&self, value: &str) -> Option<u8> {
        match self {
            Self::OneOf(vals) => Some(vals.iter().any(|v| v == value) as u8),
            Self::Above(th) => value.parse::<f64>().ok().map(|x| (x > *th) as u8),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Label {
    pub column: String,
    pub rule: LabelRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Row filter `column op value`; numeric when both sides parse as numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    pub column: String,
    pub op: CmpOp,
    pub value: String,
}

impl Filter {
    fn parse(s: &str) -> Option<Self> {
        for (tok, op) in [
            (">=", CmpOp::Ge),
            ("<=", CmpOp::Le),
            ("!=", CmpOp::Ne),
            ("==", CmpOp::Eq),
            (">", CmpOp::Gt),
            ("<", CmpOp::Lt),
        ] {
            if let Some((c, v)) = s.split_once(tok) {
                return Some(Self {
                    column: c.trim().to_string(),
                    op,
                    value: v.trim().to_string(),
                });
            }
        }
        None
    }

    /// Whether a raw value passes. Empty values never pass.
    pub fn accepts(&self, raw: &str) -> bool {
        if raw.is_empty() {
            return false;
        }
        let ord = match (raw.parse::<f64>(), self.value.parse::<f64>()) {
            (Ok(a), Ok(b)) => a.partial_cmp(&b),
            _ => Some(raw.cmp(self.value.as_str())),
        };
        let Some(ord) = ord else { return false };
        use std::cmp::Ordering::*;
        match self.op {
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
        }
    }
}

/// Where the train/val/test splits come from.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitRecipe {
    /// Separate train and test files; validation carved from train.
    Files {
        train: PathBuf,
        test: PathBuf,
        val_fraction: f64,
    },
    /// One file split by `(train, val, test)` fractions within each `(s, t)` cell.
    Stratified { path: PathBuf, fractions: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub name: String,
    /// Column names for headerless files.
    pub names: Option<Vec<String>>,
    pub has_header: bool,
    pub delimiter: u8,
    /// Lines skipped before parsing the test file.
    pub skip_test_lines: usize,
    /// Suffix stripped from every field (e.g. the trailing `.` of some labels).
    pub strip_suffix: Option<String>,
    pub missing: Vec<String>,
    pub columns: Vec<Column>,
    pub target: Label,
    pub sensitive: Label,
    /// Also encode the binarized sensitive label as a feature.
    pub include_sensitive: bool,
    pub transfer: Vec<Label>,
    pub filters: Vec<Filter>,
    pub split: SplitRecipe,
    pub split_seed: u64,
    /// Subsample test `(s, t)` cells to equal size.
    pub balance_test: bool,
    /// Expected encoded feature dimension, if declared.
    pub input_dim: Option<usize>,
}

fn parse_err(origin: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        message: message.into(),
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn parse_bool(e: &Entry, origin: &str) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(parse_err(origin, e.line, format!("`{}` expects a boolean, got `{other}`", e.key))),
    }
}

fn parse_num<T: std::str::FromStr>(e: &Entry, origin: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| parse_err(origin, e.line, format!("`{}` expects a number, got `{}`", e.key, e.value)))
}

impl Schema {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses schema text; relative data paths resolve against `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let entries = parse_key_values(text, origin)?;
        let mut name = String::from("dataset");
        let mut names = None;
        let mut has_header = true;
        let mut delimiter = b',';
        let mut skip_test_lines = 0;
        let mut strip_suffix = None;
        let mut missing = vec![String::new(), "?".to_string(), "NA".to_string()];
        let mut columns = Vec::new();
        let mut target: Option<(String, usize)> = None;
        let mut target_rule: Option<LabelRule> = None;
        let mut sensitive: Option<(String, usize)> = None;
        let mut sensitive_rule: Option<LabelRule> = None;
        let mut include_sensitive = false;
        let mut transfer_cols = Vec::new();
        let mut transfer_rule = LabelRule::Above(0.0);
        let mut filters = Vec::new();
        let mut path = None;
        let mut train = None;
        let mut test = None;
        let mut val_fraction = 0.1;
        let mut fractions = [0.7, 0.1, 0.2];
        let mut split_seed = 0;
        let mut balance_test = false;
        let mut input_dim = None;
        let end = entries.last().map_or(1, |e| e.line);

        for e in &entries {
            let v = e.value.as_str();
            match e.key.as_str() {
                "name" => name = v.to_string(),
                "names" => names = Some(list(v)),
                "header" => has_header = parse_bool(e, origin)?,
                "delimiter" => {
                    delimiter = match v {
                        "tab" | "\\t" => b'\t',
                        s if s.len() == 1 => s.as_bytes()[0],
                        _ => return Err(parse_err(origin, e.line, "delimiter must be one character or `tab`")),
                    }
                }
                "skip_test_lines" => skip_test_lines = parse_num(e, origin)?,
                "strip_suffix" => strip_suffix = Some(v.to_string()),
                "missing" => missing = v.split(',').map(|s| s.trim().to_string()).collect(),
                "continuous" | "categorical" => {
                    let kind = if e.key == "continuous" {
                        ColumnKind::Continuous
                    } else {
                        ColumnKind::Categorical
                    };
                    for c in list(v) {
                        columns.push(Column { name: c, kind });
                    }
                }
                "target" => target = Some((v.to_string(), e.line)),
                "target_positive" => target_rule = Some(LabelRule::OneOf(list(v))),
                "target_above" => target_rule = Some(LabelRule::Above(parse_num(e, origin)?)),
                "sensitive" => sensitive = Some((v.to_string(), e.line)),
                "sensitive_positive" => sensitive_rule = Some(LabelRule::OneOf(list(v))),
                "sensitive_above" => sensitive_rule = Some(LabelRule::Above(parse_num(e, origin)?)),
                "include_sensitive" => include_sensitive = parse_bool(e, origin)?,
                "transfer" => transfer_cols = list(v),
                "transfer_positive" => transfer_rule = LabelRule::OneOf(list(v)),
                "transfer_above" => transfer_rule = LabelRule::Above(parse_num(e, origin)?),
                "filter" => {
                    filters.push(
                        Filter::parse(v).ok_or_else(|| parse_err(origin, e.line, format!("bad filter `{v}`")))?,
                    );
                }
                "path" => path = Some(base.join(v)),
                "train_path" => train = Some(base.join(v)),
                "test_path" => test = Some(base.join(v)),
                "val_fraction" => val_fraction = parse_num(e, origin)?,
                "split_fractions" => {
                    let parts: Vec<f64> = list(v)
                        .iter()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| parse_err(origin, e.line, "split_fractions expects three numbers"))?;
                    if parts.len() != 3 || parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
                        return Err(parse_err(origin, e.line, "split_fractions expects three numbers in [0, 1]"));
                    }
                    if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return Err(parse_err(origin, e.line, "split_fractions must sum to 1"));
                    }
                    fractions = [parts[0], parts[1], parts[2]];
                }
                "split_seed" => split_seed = parse_num(e, origin)?,
                "balance_test" => balance_test = parse_bool(e, origin)?,
                "input_dim" => input_dim = Some(parse_num(e, origin)?),
                other => return Err(parse_err(origin, e.line, format!("unknown schema key `{other}`"))),
            }
        }

        let (target_col, tl) = target.ok_or_else(|| parse_err(origin, end, "missing `target`"))?;
        let (sens_col, sl) = sensitive.ok_or_else(|| parse_err(origin, end, "missing `sensitive`"))?;
        let target_rule = target_rule.ok_or_else(|| parse_err(origin, tl, "missing `target_positive` or `target_above`"))?;
        let sensitive_rule =
            sensitive_rule.ok_or_else(|| parse_err(origin, sl, "missing `sensitive_positive` or `sensitive_above`"))?;
        if columns.is_empty() {
            return Err(parse_err(origin, end, "no feature columns declared"));
        }
        for c in &columns {
            if c.name == target_col || c.name == sens_col {
                return Err(parse_err(
                    origin,
                    end,
                    format!("column `{}` is a label and cannot also be a feature", c.name),
                ));
            }
        }
        let split = match (path, train, test) {
            (Some(p), None, None) => SplitRecipe::Stratified { path: p, fractions },
            (None, Some(train), Some(test)) => {
                if !(0.0..1.0).contains(&val_fraction) {
                    return Err(parse_err(origin, end, "val_fraction must lie in [0, 1)"));
                }
                SplitRecipe::Files {
                    train,
                    test,
                    val_fraction,
                }
            }
            _ => return Err(parse_err(origin, end, "declare either `path` or both `train_path` and `test_path`")),
        };
        if !has_header && names.is_none() {
            return Err(parse_err(origin, end, "headerless files need `names`"));
        }
        Ok(Self {
            name,
            names,
            has_header,
            delimiter,
            skip_test_lines,
            strip_suffix,
            missing,
            columns,
            target: Label {
                column: target_col,
                rule: target_rule,
            },
            sensitive: Label {
                column: sens_col,
                rule: sensitive_rule,
            },
            include_sensitive,
            transfer: transfer_cols
                .into_iter()
                .map(|c| Label {
                    column: c,
                    rule: transfer_rule.clone(),
                })
                .collect(),
            filters,
            split,
            split_seed,
            balance_test,
            input_dim,
        })
    }

    /// Redirects every data path into `dir`, keeping file names.
    pub fn with_data_dir(mut self, dir: &Path) -> Self {
        let relocate = |p: &PathBuf| dir.join(p.file_name().unwrap_or(p.as_os_str()));
        self.split = match &self.split {
            SplitRecipe::Files {
                train,
                test,
                val_fraction,
            } => SplitRecipe::Files {
                train: relocate(train),
                test: relocate(test),
                val_fraction: *val_fraction,
            },
            SplitRecipe::Stratified { path, fractions } => SplitRecipe::Stratified {
                path: relocate(path),
                fractions: *fractions,
            },
        };
        self
    }

    /// Data files the schema reads.
    pub fn data_files(&self) -> Vec<&Path> {
        match &self.split {
            SplitRecipe::Files { train, test, .. } => vec![train, test],
            SplitRecipe::Stratified { path, .. } => vec![path],
        }
    }
}
