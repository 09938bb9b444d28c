use crate::diff::special::chi2_sf;
use crate::{Error, Result};

/// 2×2 counts indexed `[t][s]`.
pub fn contingency(t: &[u8], s: &[u8]) -> Result<[[f64; 2]; 2]> {
    if t.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            found: s.len(),
        });
    }
    let mut c = [[0.0; 2]; 2];
    for (&a, &b) in t.iter().zip(s) {
        if a > 1 || b > 1 {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        c[a as usize][b as usize] += 1.0;
    }
    Ok(c)
}

/// Pearson χ² (no continuity correction, one degree of freedom) and its
/// p-value.
pub fn chi2_from_counts(c: [[f64; 2]; 2]) -> Result<(f64, f64)> {
    let rows = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
    let cols = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
    let total = rows[0] + rows[1];
    if rows.iter().chain(&cols).any(|&m| m <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "a zero marginal makes χ² undefined: rows {rows:?}, cols {cols:?}"
        )));
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / total;
            stat += (c[i][j] - e) * (c[i][j] - e) / e;
        }
    }
    Ok((stat, chi2_sf(stat, 1.0)))
}

pub fn chi2_independence(t: &[u8], s: &[u8]) -> Result<(f64, f64)> {
    chi2_from_counts(contingency(t, s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_independence() {
        let (x, p) = chi2_from_counts([[25.0, 25.0], [25.0, 25.0]]).unwrap();
        assert_eq!(x, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn hand_counts() {
        // Σ(O−E)²/E with every E = 20: 4 · 100/20.
        let (x, _) = chi2_from_counts([[30.0, 10.0], [10.0, 30.0]]).unwrap();
        assert!((x - 20.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_relabel_invariant() {
        let t = [0, 1, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1];
        let s = [1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1];
        let base = chi2_independence(&t, &s).unwrap();
        assert_eq!(chi2_independence(&s, &t).unwrap(), base);
        let flipped: Vec<u8> = t.iter().map(|v| 1 - v).collect();
        let (x, p) = chi2_independence(&flipped, &s).unwrap();
        assert!((x - base.0).abs() < 1e-12 && (p - base.1).abs() < 1e-12);
    }

    #[test]
    fn zero_marginal_is_an_error() {
        assert!(chi2_independence(&[0, 0, 0], &[0, 1, 1]).is_err());
        assert!(chi2_independence(&[0, 1], &[0]).is_err());
    }
}
