use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schema::{ColumnKind, Schema, SplitRecipe};
use super::{DatasetSplit, SplitTag, Splits};
use crate::diff::Matrix;
use crate::{Error, Result};

/// A row after filtering: raw feature strings plus binarized labels.
#[derive(Clone, Debug)]
struct Row {
    fields: Vec<String>,
    t: Option<u8>,
    s: Option<u8>,
    transfer: Vec<Option<u8>>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_rows(path: &Path, schema: &Schema, skip_lines: usize) -> Result<Vec<Row>> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text.lines().skip(skip_lines).flat_map(|l| [l, "\n"]).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let mut records = reader.records();

    let header: Vec<String> = if schema.has_header {
        match records.next() {
            Some(r) => r
                .map_err(|e| parse_error(path, skip_lines + 1, e.to_string()))?
                .iter()
                .map(str::to_string)
                .collect(),
            None => return Err(parse_error(path, skip_lines + 1, "file is empty")),
        }
    } else {
        schema.names.clone().unwrap_or_default()
    };
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error(path, skip_lines + 1, format!("column `{name}` not found")))
    };
    let feature_idx: Vec<usize> = schema.columns.iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
    let target_idx = find(&schema.target.column)?;
    let sens_idx = find(&schema.sensitive.column)?;
    let transfer_idx: Vec<usize> = schema.transfer.iter().map(|l| find(&l.column)).collect::<Result<_>>()?;
    let filter_idx: Vec<usize> = schema.filters.iter().map(|f| find(&f.column)).collect::<Result<_>>()?;
    let width = header.len();

    let mut rows = Vec::new();
    let (mut filtered, mut missing) = (0usize, 0usize);
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize) + skip_lines;
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize) + skip_lines;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() < width {
            return Err(parse_error(
                path,
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let field = |i: usize| -> &str {
            let raw = &rec[i];
            match &schema.strip_suffix {
                Some(sfx) => raw.strip_suffix(sfx.as_str()).unwrap_or(raw),
                None => raw,
            }
        };
        if !schema.filters.iter().zip(&filter_idx).all(|(f, &i)| f.accepts(field(i))) {
            filtered += 1;
            continue;
        }
        let is_missing = |v: &str| schema.missing.iter().any(|m| m == v);
        if feature_idx.iter().any(|&i| is_missing(field(i))) {
            missing += 1;
            continue;
        }
        let label = |i: usize, rule: &super::schema::LabelRule| {
            let v = field(i);
            if is_missing(v) {
                None
            } else {
                rule.apply(v)
            }
        };
        let t = label(target_idx, &schema.target.rule);
        let s = label(sens_idx, &schema.sensitive.rule);
        if t.is_none() && s.is_none() {
            missing += 1;
            continue;
        }
        for (c, &i) in schema.columns.iter().zip(&feature_idx) {
            if c.kind == ColumnKind::Continuous && field(i).parse::<f64>().is_err() {
                return Err(parse_error(
                    path,
                    line,
                    format!("column `{}` is not numeric: `{}`", c.name, field(i)),
                ));
            }
        }
        rows.push(Row {
            fields: feature_idx.iter().map(|&i| field(i).to_string()).collect(),
            t,
            s,
            transfer: schema.transfer.iter().zip(&transfer_idx).map(|(l, &i)| label(i, &l.rule)).collect(),
        });
    }
    log::info!(
        "{}: kept {} rows, filtered {filtered}, dropped {missing} with missing values",
        path.display(),
        rows.len()
    );
    Ok(rows)
}

type Cell = (Option<u8>, Option<u8>);

fn cells(rows: &[Row], idx: &[usize]) -> BTreeMap<Cell, Vec<usize>> {
    let mut map: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        map.entry((rows[i].s, rows[i].t)).or_default().push(i);
    }
    map
}

/// Splits `idx` within every `(s, t)` cell by the given fractions; the last
/// part takes the remainder.
fn stratified(rows: &[Row], idx: &[usize], fractions: &[f64], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut parts = vec![Vec::new(); fractions.len() + 1];
    for (_, mut members) in cells(rows, idx) {
        members.shuffle(rng);
        let n = members.len();
        let mut start = 0;
        for (p, &f) in fractions.iter().enumerate() {
            let take = (f * n as f64).floor() as usize;
            parts[p].extend_from_slice(&members[start..start + take]);
            start += take;
        }
        parts[fractions.len()].extend_from_slice(&members[start..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

fn balance(rows: &[Row], idx: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let groups = cells(rows, idx);
    let smallest = groups.values().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::new();
    for (_, mut members) in groups {
        members.shuffle(rng);
        out.extend_from_slice(&members[..smallest]);
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq)]
enum ColumnEncoder {
    Continuous { mean: f64, std: f64 },
    Categorical { levels: Vec<String> },
}

/// Per-column encoding fitted on the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    names: Vec<String>,
    columns: Vec<ColumnEncoder>,
    include_sensitive: bool,
}

impl Encoder {
    fn fit(schema: &Schema, rows: &[Row], idx: &[usize]) -> Self {
        let columns = schema
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| match col.kind {
                ColumnKind::Continuous => {
                    let vals: Vec<f64> = idx.iter().map(|&i| rows[i].fields[c].parse().unwrap_or(0.0)).collect();
                    let n = vals.len().max(1) as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    ColumnEncoder::Continuous { mean, std: var.sqrt() }
                }
                ColumnKind::Categorical => {
                    let mut levels: Vec<String> = idx.iter().map(|&i| rows[i].fields[c].clone()).collect();
                    levels.sort();
                    levels.dedup();
                    ColumnEncoder::Categorical { levels }
                }
            })
            .collect();
        Self {
            names: schema.columns.iter().map(|c| c.name.clone()).collect(),
            columns,
            include_sensitive: schema.include_sensitive,
        }
    }

    pub fn dim(&self) -> usize {
        let base: usize = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnEncoder::Continuous { .. } => 1,
                ColumnEncoder::Categorical { levels } => levels.len(),
            })
            .sum();
        base + if self.include_sensitive { 2 } else { 0 }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        for (name, c) in self.names.iter().zip(&self.columns) {
            match c {
                ColumnEncoder::Continuous { .. } => out.push(name.clone()),
                ColumnEncoder::Categorical { levels } => out.extend(levels.iter().map(|l| format!("{name}={l}"))),
            }
        }
        if self.include_sensitive {
            out.push("sensitive=0".into());
            out.push("sensitive=1".into());
        }
        out
    }

    fn transform(&self, rows: &[Row], idx: &[usize]) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(idx.len(), d);
        let mut unknown = vec![0usize; self.columns.len()];
        for (r, &i) in idx.iter().enumerate() {
            let out = m.row_mut(r);
            let mut k = 0;
            for (c, enc) in self.columns.iter().enumerate() {
                let raw = &rows[i].fields[c];
                match enc {
                    ColumnEncoder::Continuous { mean, std } => {
                        let v: f64 = raw.parse().unwrap_or(*mean);
                        out[k] = if *std > 1e-12 { (v - mean) / std } else { 0.0 };
                        k += 1;
                    }
                    ColumnEncoder::Categorical { levels } => {
                        match levels.binary_search(raw) {
                            Ok(pos) => out[k + pos] = 1.0,
                            Err(_) => unknown[c] += 1,
                        }
                        k += levels.len();
                    }
                }
            }
            if self.include_sensitive {
                if let Some(s) = rows[i].s {
                    out[k + s as usize] = 1.0;
                }
            }
        }
        for (c, &u) in unknown.iter().enumerate() {
            if u > 0 {
                log::warn!("{u} rows with unseen categories in `{}` encoded as zeros", self.names[c]);
            }
        }
        m
    }
}

fn make_split(rows: &[Row], idx: &[usize], enc: &Encoder, tag: SplitTag) -> DatasetSplit {
    DatasetSplit {
        features: enc.transform(rows, idx),
        t: idx.iter().map(|&i| rows[i].t).collect(),
        s: idx.iter().map(|&i| rows[i].s).collect(),
        transfer: (0..rows.first().map_or(0, |r| r.transfer.len()))
            .map(|k| idx.iter().map(|&i| rows[i].transfer[k]).collect())
            .collect(),
        tag,
    }
}

/// Reads, filters, splits and encodes a dataset as its schema describes.
pub fn load_tabular(schema: &Schema) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(schema.split_seed);
    let (rows, train_idx, val_idx, test_idx) = match &schema.split {
        SplitRecipe::Files {
            train,
            test,
            val_fraction,
        } => {
            let mut rows = read_rows(train, schema, 0)?;
            let n_train_file = rows.len();
            rows.extend(read_rows(test, schema, schema.skip_test_lines)?);
            let all: Vec<usize> = (0..n_train_file).collect();
            let parts = stratified(&rows, &all, &[*val_fraction], &mut rng);
            let (val, train) = (parts[0].clone(), parts[1].clone());
            let test: Vec<usize> = (n_train_file..rows.len()).collect();
            (rows, train, val, test)
        }
        SplitRecipe::Stratified { path, fractions } => {
            let rows = read_rows(path, schema, 0)?;
            let all: Vec<usize> = (0..rows.len()).collect();
            let parts = stratified(&rows, &all, &fractions[..2], &mut rng);
            (rows, parts[0].clone(), parts[1].clone(), parts[2].clone())
        }
    };
    let test_idx = if schema.balance_test {
        balance(&rows, &test_idx, &mut rng)
    } else {
        test_idx
    };
    if train_idx.is_empty() {
        return Err(Error::EmptyGroup("training split has no rows".into()));
    }
    let enc = Encoder::fit(schema, &rows, &train_idx);
    if let Some(d) = schema.input_dim {
        if d != enc.dim() {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: enc.dim(),
            });
        }
    }
    Ok(Splits {
        train: make_split(&rows, &train_idx, &enc, SplitTag::Train),
        val: make_split(&rows, &val_idx, &enc, SplitTag::Val),
        test: make_split(&rows, &test_idx, &enc, SplitTag::Test),
        feature_names: enc.feature_names(),
        transfer_names: schema.transfer.iter().map(|l| l.column.clone()).collect(),
    })
}

/// Reads a purely numeric delimited file. A first line that does not parse as
/// numbers is treated as a header.
pub fn read_numeric_csv(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if let Some(first) = rows.first() {
                    if first.len() != v.len() {
                        return Err(parse_error(
                            path,
                            i + 1,
                            format!("expected {} fields, found {}", first.len(), v.len()),
                        ));
                    }
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(parse_error(path, i + 1, "non-finite value"));
                }
                rows.push(v);
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_error(path, i + 1, e.to_string())),
        }
    }
    if rows.is_empty() {
        return Err(parse_error(path, 1, "no numeric rows"));
    }
    Ok(Matrix::from_rows(&rows)?)
}
