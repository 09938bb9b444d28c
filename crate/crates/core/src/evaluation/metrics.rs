use crate::{Error, Result};

/// Accuracy and the two fairness scores of a binary predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub dp: f64,
    /// Mean of the available per-class components.
    pub eo: f64,
    /// Per target class; `None` when a `(t, s)` cell is empty.
    pub eo_per_class: [Option<f64>; 2],
    pub samples: usize,
}

fn check_binary(name: &str, v: &[u8]) -> Result<()> {
    if v.iter().any(|&x| x > 1) {
        return Err(Error::InvalidInput(format!("{name} must be 0 or 1")));
    }
    Ok(())
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// `P(T̂ = v | rows)` over the rows selected by `keep`.
fn rate(pred: &[u8], v: u8, keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, &p) in pred.iter().enumerate() {
        if keep(i) {
            total += 1;
            hits += (p == v) as usize;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// `1 − |P(T̂=1 | S=0) − P(T̂=1 | S=1)|`.
pub fn demographic_parity(pred: &[u8], s: &[u8]) -> Result<f64> {
    check_len(pred.len(), s.len())?;
    check_binary("predictions", pred)?;
    check_binary("s", s)?;
    let r0 = rate(pred, 1, |i| s[i] == 0).ok_or_else(|| Error::EmptyGroup("s = 0".into()))?;
    let r1 = rate(pred, 1, |i| s[i] == 1).ok_or_else(|| Error::EmptyGroup("s = 1".into()))?;
    Ok(1.0 - (r0 - r1).abs())
}

fn eo_components(pred: &[u8], t: &[u8], s: &[u8]) -> Result<[Option<f64>; 2]> {
    check_len(pred.len(), t.len())?;
    check_len(pred.len(), s.len())?;
    check_binary("predictions", pred)?;
    check_binary("t", t)?;
    check_binary("s", s)?;
    let mut out = [None; 2];
    for (c, slot) in out.iter_mut().enumerate() {
        let c = c as u8;
        let r0 = rate(pred, c, |i| t[i] == c && s[i] == 0);
        let r1 = rate(pred, c, |i| t[i] == c && s[i] == 1);
        if let (Some(a), Some(b)) = (r0, r1) {
            *slot = Some(1.0 - (a - b).abs());
        }
    }
    Ok(out)
}

/// Per class `t`: `1 − |P(T̂=t | T=t, S=0) − P(T̂=t | T=t, S=1)|`. Returns
/// the mean over classes and the components; any empty cell is an error.
pub fn equalized_odds(pred: &[u8], t: &[u8], s: &[u8]) -> Result<(f64, [f64; 2])> {
    let c = eo_components(pred, t, s)?;
    match c {
        [Some(a), Some(b)] => Ok(((a + b) / 2.0, [a, b])),
        _ => Err(Error::EmptyGroup("a (t, s) cell is empty".into())),
    }
}

pub fn accuracy(pred: &[u8], y: &[u8]) -> Result<f64> {
    check_len(pred.len(), y.len())?;
    if pred.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, found: 0 });
    }
    Ok(pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// Report with empty EO cells marked absent rather than failing.
pub fn fairness_report(pred: &[u8], t: &[u8], s: &[u8]) -> Result<FairnessReport> {
    let eo_per_class = eo_components(pred, t, s)?;
    let present: Vec<f64> = eo_per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyGroup("every (t, s) cell pairing is empty".into()));
    }
    Ok(FairnessReport {
        accuracy: accuracy(pred, t)?,
        dp: demographic_parity(pred, s)?,
        eo: present.iter().sum::<f64>() / present.len() as f64,
        eo_per_class,
        samples: pred.len(),
    })
}

/// Frequency of the most common label.
pub fn majority_rate(y: &[u8]) -> f64 {
    let ones = y.iter().filter(|&&v| v == 1).count() as f64;
    let n = y.len() as f64;
    ones.max(n - ones) / n
}
