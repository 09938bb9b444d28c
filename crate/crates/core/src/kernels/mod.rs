//! Gaussian, linear and deep kernels, and the pairwise `H` matrix every MMD
//! estimator is built from.

mod featurizer;

pub use featurizer::{Featurizer, Linear, Mlp, MlpVars};

use crate::diff::{sq_dist, Matrix, Tape, Var};
use crate::{Error, Result};

/// Number of length-scales in the default kernel grid.
pub const GRID_SIZE: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    Linear,
    Gaussian { sigma: f64 },
    /// Gaussian kernel on featurizer outputs; `sigma = exp(log_sigma)`.
    Deep { featurizer: Featurizer, log_sigma: f64 },
    /// A family of Gaussian kernels sharing one input space.
    Grid { sigmas: Vec<f64> },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::Gaussian { sigma })
    }

    pub fn deep(featurizer: Featurizer, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::Deep {
            featurizer,
            log_sigma: sigma.ln(),
        })
    }

    pub fn grid(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::InvalidInput("kernel grid is empty".into()));
        }
        for &s in &sigmas {
            check_sigma(s)?;
        }
        Ok(Self::Grid { sigmas })
    }

    /// Input dimension required by the kernel, if it fixes one.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Self::Deep { featurizer, .. } => Some(featurizer.input_dim()),
            _ => None,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("length-scale must be positive, got {sigma}")))
    }
}

fn check_dims(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            found: y.cols(),
        });
    }
    Ok(())
}

/// Pairwise squared Euclidean distances between the rows of `x` and `y`.
pub fn sqdist_matrix(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    check_dims(x, y)?;
    let mut out = Matrix::zeros(x.rows(), y.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = sq_dist(xi, y.row(j));
        }
    }
    Ok(out)
}

fn gaussian_from_sqdist(d: &Matrix, sigma: f64) -> Matrix {
    let c = -0.5 / (sigma * sigma);
    d.map(|v| (c * v).exp())
}

/// Eager Gram matrix `K_ij = k(x_i, y_j)`.
///
/// A grid kernel has no single Gram matrix; use [`grid_grams`] instead.
pub fn gram(x: &Matrix, y: &Matrix, k: &KernelSpec) -> Result<Matrix> {
    check_dims(x, y)?;
    match k {
        KernelSpec::Linear => Ok(x.matmul_t(y)?),
        KernelSpec::Gaussian { sigma } => {
            check_sigma(*sigma)?;
            Ok(gaussian_from_sqdist(&sqdist_matrix(x, y)?, *sigma))
        }
        KernelSpec::Deep { featurizer, log_sigma } => {
            let sigma = log_sigma.exp();
            check_sigma(sigma)?;
            if x.cols() != featurizer.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: featurizer.input_dim(),
                    found: x.cols(),
                });
            }
            let fx = featurizer.apply(x)?;
            let fy = featurizer.apply(y)?;
            Ok(gaussian_from_sqdist(&sqdist_matrix(&fx, &fy)?, sigma))
        }
        KernelSpec::Grid { .. } => Err(Error::InvalidInput(
            "grid kernels produce one Gram matrix per length-scale".into(),
        )),
    }
}

/// One Gaussian Gram matrix per length-scale, sharing the distance computation.
pub fn grid_grams(x: &Matrix, y: &Matrix, sigmas: &[f64]) -> Result<Vec<Matrix>> {
    let d = sqdist_matrix(x, y)?;
    sigmas
        .iter()
        .map(|&s| {
            check_sigma(s)?;
            Ok(gaussian_from_sqdist(&d, s))
        })
        .collect()
}

/// `H = Kxx + Kyy − Kxy − Kxyᵀ`.
pub fn h_from_grams(kxx: &Matrix, kyy: &Matrix, kxy: &Matrix) -> Matrix {
    let n = kxx.rows();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h.set(i, j, kxx.get(i, j) + kyy.get(i, j) - kxy.get(i, j) - kxy.get(j, i));
        }
    }
    h
}

fn check_pair(sp: &Matrix, sq: &Matrix) -> Result<()> {
    if sp.rows() != sq.rows() {
        return Err(Error::UnequalGroups {
            p: sp.rows(),
            q: sq.rows(),
        });
    }
    if sp.rows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            found: sp.rows(),
        });
    }
    check_dims(sp, sq)
}

/// Eager `H` matrix for paired samples of equal size.
pub fn h_matrix(sp: &Matrix, sq: &Matrix, k: &KernelSpec) -> Result<Matrix> {
    check_pair(sp, sq)?;
    if let KernelSpec::Deep { featurizer, log_sigma } = k {
        let fp = featurizer.apply(sp)?;
        let fq = featurizer.apply(sq)?;
        let g = KernelSpec::gaussian(log_sigma.exp())?;
        return h_matrix(&fp, &fq, &g);
    }
    let kxx = gram(sp, sp, k)?;
    let kyy = gram(sq, sq, k)?;
    let kxy = gram(sp, sq, k)?;
    Ok(h_from_grams(&kxx, &kyy, &kxy))
}

/// Eager `H` matrices for every length-scale of a grid over featurizer outputs.
pub fn grid_h_matrices(sp: &Matrix, sq: &Matrix, featurizer: &Featurizer, grid: &[f64]) -> Result<Vec<Matrix>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("kernel grid is empty".into()));
    }
    check_pair(sp, sq)?;
    let fp = featurizer.apply(sp)?;
    let fq = featurizer.apply(sq)?;
    let kxx = grid_grams(&fp, &fp, grid)?;
    let kyy = grid_grams(&fq, &fq, grid)?;
    let kxy = grid_grams(&fp, &fq, grid)?;
    Ok((0..grid.len()).map(|g| h_from_grams(&kxx[g], &kyy[g], &kxy[g])).collect())
}

/// A differentiable `H` matrix recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct HMatrix {
    pub var: Var,
    pub n: usize,
}

fn gaussian_on_tape(tape: &mut Tape, d: Var, neg_half_inv_sq: Var) -> Result<Var> {
    let scaled = tape.mul_scalar(d, neg_half_inv_sq)?;
    Ok(tape.exp(scaled)?)
}

fn h_on_tape(tape: &mut Tape, kxx: Var, kyy: Var, kxy: Var) -> Result<Var> {
    let kyx = tape.transpose(kxy)?;
    let a = tape.add(kxx, kyy)?;
    let b = tape.add(kxy, kyx)?;
    Ok(tape.sub(a, b)?)
}

fn tape_pair_check(tape: &Tape, fp: Var, fq: Var) -> Result<usize> {
    let (np, dp) = tape.shape(fp);
    let (nq, dq) = tape.shape(fq);
    if np != nq {
        return Err(Error::UnequalGroups { p: np, q: nq });
    }
    if dp != dq {
        return Err(Error::DimensionMismatch { expected: dp, found: dq });
    }
    if np < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: np });
    }
    Ok(np)
}

/// Gaussian `H` on representations already on the tape, with a trainable
/// `log σ` leaf.
pub fn gaussian_h_on_tape(tape: &mut Tape, fp: Var, fq: Var, log_sigma: Var) -> Result<HMatrix> {
    let n = tape_pair_check(tape, fp, fq)?;
    // −1/(2σ²) = −½·exp(−2 log σ)
    let t = tape.scale(log_sigma, -2.0)?;
    let t = tape.exp(t)?;
    let coef = tape.scale(t, -0.5)?;
    let dxx = tape.pairwise_sqdist(fp, fp)?;
    let dyy = tape.pairwise_sqdist(fq, fq)?;
    let dxy = tape.pairwise_sqdist(fp, fq)?;
    let kxx = gaussian_on_tape(tape, dxx, coef)?;
    let kyy = gaussian_on_tape(tape, dyy, coef)?;
    let kxy = gaussian_on_tape(tape, dxy, coef)?;
    Ok(HMatrix {
        var: h_on_tape(tape, kxx, kyy, kxy)?,
        n,
    })
}

/// Grid `H` matrices on representations already on the tape. The three
/// distance matrices are shared by every length-scale.
pub fn grid_h_on_tape(tape: &mut Tape, fp: Var, fq: Var, grid: &[f64]) -> Result<Vec<HMatrix>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("kernel grid is empty".into()));
    }
    let n = tape_pair_check(tape, fp, fq)?;
    let dxx = tape.pairwise_sqdist(fp, fp)?;
    let dyy = tape.pairwise_sqdist(fq, fq)?;
    let dxy = tape.pairwise_sqdist(fp, fq)?;
    let mut out = Vec::with_capacity(grid.len());
    for &sigma in grid {
        check_sigma(sigma)?;
        let coef = tape.constant(Matrix::scalar(-0.5 / (sigma * sigma)))?;
        let kxx = gaussian_on_tape(tape, dxx, coef)?;
        let kyy = gaussian_on_tape(tape, dyy, coef)?;
        let kxy = gaussian_on_tape(tape, dxy, coef)?;
        out.push(HMatrix {
            var: h_on_tape(tape, kxx, kyy, kxy)?,
            n,
        });
    }
    Ok(out)
}

/// Linear-kernel `H` on the tape.
pub fn linear_h_on_tape(tape: &mut Tape, fp: Var, fq: Var) -> Result<HMatrix> {
    let n = tape_pair_check(tape, fp, fq)?;
    let tp = tape.transpose(fp)?;
    let tq = tape.transpose(fq)?;
    let kxx = tape.matmul(fp, tp)?;
    let kyy = tape.matmul(fq, tq)?;
    let kxy = tape.matmul(fp, tq)?;
    Ok(HMatrix {
        var: h_on_tape(tape, kxx, kyy, kxy)?,
        n,
    })
}

/// Deep-kernel `H`: featurizes both samples, then applies the Gaussian.
pub fn deep_h_on_tape(
    tape: &mut Tape,
    featurizer: &Featurizer,
    vars: &MlpVars,
    log_sigma: Var,
    sp: Var,
    sq: Var,
) -> Result<HMatrix> {
    let fp = featurizer.forward(tape, vars, sp)?;
    let fq = featurizer.forward(tape, vars, sq)?;
    gaussian_h_on_tape(tape, fp, fq, log_sigma)
}

/// `sqrt(median squared pairwise distance / 2)`, or 1.0 when that is not
/// strictly positive.
pub fn median_heuristic(x: &Matrix) -> f64 {
    let n = x.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(x.row(i), x.row(j)));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if !d.len().is_multiple_of(2) {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    let sigma = (median / 2.0).sqrt();
    if sigma.is_finite() && sigma > 0.0 {
        sigma
    } else {
        1.0
    }
}

/// `σ_med · 2^k` for `k = −2..=3`.
pub fn default_grid(sigma_med: f64) -> Vec<f64> {
    (0..GRID_SIZE).map(|k| sigma_med * 2f64.powi(k as i32 - 2)).collect()
}
