//! Fairness metrics, post-hoc audits of learned representations, transfer
//! evaluation and embedding export.

mod audit;
mod metrics;

pub use audit::{
    audit, audit_partition, fit_audit_kernel, fit_classifier, mmd_power_audit, predict, rejection_rate,
    sensitive_classifier_audit, transfer_eval, AuditConfig, AuditReport,
};
pub use metrics::{accuracy, demographic_parity, equalized_odds, fairness_report, majority_rate, FairnessReport};

use std::io::Write;
use std::path::Path;

use crate::data::{Attribute, DatasetSplit};
use crate::diff::Matrix;
use crate::fairlearn::FairModel;
use crate::{Error, Result};

/// Test-split report of the model's own classifier head over rows carrying
/// both labels.
pub fn evaluate_model(model: &FairModel, split: &DatasetSplit) -> Result<FairnessReport> {
    let rows = split.fully_labeled();
    let sub = split.select(&rows);
    let pred = model.predict(&sub.features)?;
    fairness_report(
        &pred,
        &sub.complete_labels(Attribute::Target)?,
        &sub.complete_labels(Attribute::Sensitive)?,
    )
}

/// Both audits on the model's representations of the `s`-labeled rows.
pub fn audit_model(model: &FairModel, split: &DatasetSplit, cfg: &AuditConfig, seed: u64) -> Result<AuditReport> {
    let rows: Vec<usize> = (0..split.len()).filter(|&i| split.s[i].is_some()).collect();
    let sub = split.select(&rows);
    let reps = model.represent(&sub.features)?;
    audit(&reps, &sub.complete_labels(Attribute::Sensitive)?, cfg, seed)
}

fn label(l: Option<u8>) -> String {
    l.map_or_else(String::new, |v| v.to_string())
}

/// CSV with header `row,t,s,z0,…`; missing labels are empty fields and
/// coordinates carry 17 significant digits.
pub fn export_embeddings(model: &FairModel, split: &DatasetSplit, path: &Path) -> Result<()> {
    let reps = model.represent(&split.features)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["row".to_string(), "t".into(), "s".into()];
    header.extend((0..reps.cols()).map(|j| format!("z{j}")));
    writeln!(out, "{}", header.join(","))?;
    for i in 0..reps.rows() {
        let mut line = format!("{i},{},{}", label(split.t[i]), label(split.s[i]));
        for v in reps.row(i) {
            line.push_str(&format!(",{v:.16e}"));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`export_embeddings`] back into row ids, labels
/// and coordinates.
pub fn read_embeddings(path: &Path) -> Result<(Vec<usize>, Vec<Option<u8>>, Vec<Option<u8>>, Matrix)> {
    let mut reader = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let dim = reader.headers().map_err(|e| Error::Format(e.to_string()))?.len().saturating_sub(3);
    let (mut ids, mut t, mut s, mut data) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != dim + 3 {
            return Err(parse_err(line, format!("expected {} fields, got {}", dim + 3, rec.len())));
        }
        ids.push(rec[0].parse().map_err(|_| parse_err(line, format!("bad row id {:?}", &rec[0])))?);
        for (dst, field) in [(&mut t, &rec[1]), (&mut s, &rec[2])] {
            dst.push(match field {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => return Err(parse_err(line, format!("bad label {other:?}"))),
            });
        }
        for f in rec.iter().skip(3) {
            data.push(f.parse::<f64>().map_err(|_| parse_err(line, format!("bad number {f:?}")))?);
        }
    }
    let rows = ids.len();
    Ok((ids, t, s, Matrix::from_vec(rows, dim, data)?))
}

#[cfg(test)]
mod tests;
