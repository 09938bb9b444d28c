//! MMD U-statistics, their variance, permutation and block tests, and the
//! asymptotic power formulas used as training objectives.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::special::{normal_cdf, normal_quantile};
use crate::diff::{Matrix, Tape, Var};
use crate::kernels::{gram, h_matrix, HMatrix, KernelSpec};
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_PERMUTATIONS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct PowerConfig {
    pub alpha: f64,
    /// Hypothetical test sample size.
    pub m: usize,
    /// Number of blocks `b`.
    pub blocks: usize,
    /// Block size `B`.
    pub block_size: usize,
    /// Variance regularizer; `None` means `n^{2/3}` for the batch size `n`.
    pub lambda: Option<f64>,
    pub n_permutations: usize,
}

impl PowerConfig {
    /// Defaults for a test of size `m`: `b = B = ⌊√m⌋`.
    pub fn for_test_size(m: usize) -> Self {
        let root = (m as f64).sqrt().floor() as usize;
        Self {
            alpha: DEFAULT_ALPHA,
            m,
            blocks: root,
            block_size: root,
            lambda: None,
            n_permutations: DEFAULT_PERMUTATIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.blocks == 0 || self.block_size < 2 {
            return Err(Error::InvalidInput(format!(
                "need b >= 1 and B >= 2, got b={} B={}",
                self.blocks, self.block_size
            )));
        }
        if self.blocks * self.block_size > self.m {
            return Err(Error::InvalidInput(format!(
                "b*B = {} exceeds m = {}",
                self.blocks * self.block_size,
                self.m
            )));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidInput(format!("lambda must be >= 0, got {l}")));
            }
        }
        Ok(())
    }

    /// `t_α = Φ⁻¹(1 − α)`.
    pub fn t_alpha(&self) -> Result<f64> {
        Ok(normal_quantile(1.0 - self.alpha)?)
    }

    /// The regularizer in effect for a batch of `n` samples per group.
    pub fn lambda_for(&self, n: usize) -> f64 {
        self.lambda.unwrap_or_else(|| default_lambda(n))
    }
}

/// `n^{2/3}`.
pub fn default_lambda(n: usize) -> f64 {
    (n as f64).powf(2.0 / 3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub estimated_power: f64,
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: n });
    }
    Ok(())
}

fn check_square(h: &Matrix) -> Result<usize> {
    if h.rows() != h.cols() {
        return Err(Error::DimensionMismatch {
            expected: h.rows(),
            found: h.cols(),
        });
    }
    check_n(h.rows())?;
    Ok(h.rows())
}

/// Unbiased `MMD²_U = Σ_{i≠j} H_ij / (n(n−1))` on the tape.
pub fn mmd_u_sq(tape: &mut Tape, h: &HMatrix) -> Result<Var> {
    check_n(h.n)?;
    let n = h.n as f64;
    let total = tape.sum(h.var)?;
    let diag = tape.trace(h.var)?;
    let off = tape.sub(total, diag)?;
    Ok(tape.scale(off, 1.0 / (n * (n - 1.0)))?)
}

/// `V̂_{m,λ} = 4/(m n³) Σ_i (Σ_j H_ij)² − 4/(m n⁴) (Σ_ij H_ij)² + λ/m` on the
/// tape. The inner sums include the diagonal.
pub fn variance_hat(tape: &mut Tape, h: &HMatrix, m: f64, lambda: f64) -> Result<Var> {
    check_n(h.n)?;
    check_variance_args(m, lambda)?;
    let n = h.n as f64;
    let rows = tape.row_sums(h.var)?;
    let rows_sq = tape.square(rows)?;
    let first = tape.sum(rows_sq)?;
    let first = tape.scale(first, 4.0 / (m * n.powi(3)))?;
    let total = tape.sum(h.var)?;
    let second = tape.square(total)?;
    let second = tape.scale(second, 4.0 / (m * n.powi(4)))?;
    let v = tape.sub(first, second)?;
    Ok(tape.add_const(v, lambda / m)?)
}

fn check_variance_args(m: f64, lambda: f64) -> Result<()> {
    if !(m >= 1.0) || !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "variance needs m >= 1 and lambda >= 0, got m={m} lambda={lambda}"
        )));
    }
    Ok(())
}

/// `ρ̂ = Φ(√b · MMD²_U / √V̂_{B,λ} − t_α)` on the tape, with
/// `V̂_{B,λ} = (n/B)·V̂_{n,λ}`.
pub fn block_power_hat(tape: &mut Tape, h: &HMatrix, cfg: &PowerConfig) -> Result<Var> {
    check_n(h.n)?;
    let t_alpha = cfg.t_alpha()?;
    let n = h.n as f64;
    let j = mmd_u_sq(tape, h)?;
    let vn = variance_hat(tape, h, n, cfg.lambda_for(h.n))?;
    let vb = tape.scale(vn, n / cfg.block_size as f64)?;
    let sd = tape.sqrt(vb)?;
    let ratio = tape.div(j, sd)?;
    let arg = tape.scale(ratio, (cfg.blocks as f64).sqrt())?;
    let arg = tape.add_const(arg, -t_alpha)?;
    Ok(tape.normal_cdf(arg)?)
}

/// `Φ((MMD²_U − c_α/m) / √V̂_{m,λ})` on the tape, with `c_α` held fixed.
pub fn permutation_power_hat(tape: &mut Tape, h: &HMatrix, c_alpha: f64, m: f64, lambda: f64) -> Result<Var> {
    let j = mmd_u_sq(tape, h)?;
    let v = variance_hat(tape, h, m, lambda)?;
    let sd = tape.sqrt(v)?;
    let shifted = tape.add_const(j, -c_alpha / m)?;
    Ok(tape.div(shifted, sd).and_then(|z| tape.normal_cdf(z))?)
}

/// Eager `MMD²_U` of an `H` matrix.
pub fn mmd_u_sq_value(h: &Matrix) -> Result<f64> {
    let n = check_square(h)? as f64;
    Ok((h.sum() - h.trace()) / (n * (n - 1.0)))
}

/// Eager `V̂_{m,λ}`.
pub fn variance_hat_value(h: &Matrix, m: f64, lambda: f64) -> Result<f64> {
    let n = check_square(h)? as f64;
    check_variance_args(m, lambda)?;
    let first: f64 = (0..h.rows())
        .map(|i| {
            let r: f64 = h.row(i).iter().sum();
            r * r
        })
        .sum();
    let total = h.sum();
    Ok(4.0 / (m * n.powi(3)) * first - 4.0 / (m * n.powi(4)) * total * total + lambda / m)
}

/// Eager block power estimate.
pub fn block_power_value(h: &Matrix, cfg: &PowerConfig) -> Result<f64> {
    let n = check_square(h)?;
    let j = mmd_u_sq_value(h)?;
    let vb = n as f64 / cfg.block_size as f64 * variance_hat_value(h, n as f64, cfg.lambda_for(n))?;
    if !(vb > 0.0) {
        return Err(Error::InvalidInput(format!("block variance must be positive, got {vb}")));
    }
    Ok(normal_cdf((cfg.blocks as f64).sqrt() * j / vb.sqrt() - cfg.t_alpha()?))
}

/// `Φ((MMD² − c_α/m) / √V_m)`.
pub fn asymptotic_u_power(mmd_sq: f64, c_alpha: f64, m: f64, v_m: f64) -> Result<f64> {
    if !(v_m > 0.0) {
        return Err(Error::InvalidInput(format!("V_m must be positive, got {v_m}")));
    }
    Ok(normal_cdf((mmd_sq - c_alpha / m) / v_m.sqrt()))
}

/// Seeded Fisher–Yates shuffle of `0..n` cut into `b` contiguous blocks of
/// size `B`; leftovers are dropped.
pub fn block_partition(n: usize, blocks: usize, block_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if blocks == 0 || block_size < 2 {
        return Err(Error::InvalidInput(format!(
            "need b >= 1 and B >= 2, got b={blocks} B={block_size}"
        )));
    }
    if blocks * block_size > n {
        return Err(Error::InsufficientSamples {
            needed: blocks * block_size,
            found: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx.chunks_exact(block_size).take(blocks).map(<[usize]>::to_vec).collect())
}

fn check_groups(sp: &Matrix, sq: &Matrix) -> Result<()> {
    if sp.rows() != sq.rows() {
        return Err(Error::UnequalGroups {
            p: sp.rows(),
            q: sq.rows(),
        });
    }
    if sp.cols() != sq.cols() {
        return Err(Error::DimensionMismatch {
            expected: sp.cols(),
            found: sq.cols(),
        });
    }
    Ok(())
}

/// Per-block `MMD²_U` values under a seeded partition.
pub fn block_statistics(
    sp: &Matrix,
    sq: &Matrix,
    k: &KernelSpec,
    blocks: usize,
    block_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_groups(sp, sq)?;
    block_partition(sp.rows(), blocks, block_size, seed)?
        .iter()
        .map(|idx| mmd_u_sq_value(&h_matrix(&sp.select_rows(idx), &sq.select_rows(idx), k)?))
        .collect()
}

/// Mean of the per-block U-statistics.
pub fn block_mmd(sp: &Matrix, sq: &Matrix, k: &KernelSpec, blocks: usize, block_size: usize, seed: u64) -> Result<f64> {
    let stats = block_statistics(sp, sq, k, blocks, block_size, seed)?;
    Ok(stats.iter().sum::<f64>() / stats.len() as f64)
}

/// Block test: rejects when the block average exceeds `t_α·√(s²/b)`, with
/// `s²` the sample variance of the block statistics.
pub fn block_test(sp: &Matrix, sq: &Matrix, k: &KernelSpec, cfg: &PowerConfig, seed: u64) -> Result<TestResult> {
    if cfg.blocks < 2 {
        return Err(Error::InvalidInput("block test needs at least two blocks".into()));
    }
    let t_alpha = cfg.t_alpha()?;
    let stats = block_statistics(sp, sq, k, cfg.blocks, cfg.block_size, seed)?;
    let b = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / b;
    let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (b - 1.0);
    let se = (var / b).sqrt();
    let threshold = t_alpha * se;
    let estimated_power = if se > 0.0 {
        normal_cdf(mean / se - t_alpha)
    } else {
        cfg.alpha
    };
    Ok(TestResult {
        statistic: mean,
        threshold,
        reject: mean > threshold,
        estimated_power,
    })
}

/// `n·MMD²_U` for the labeling that puts `order[..n]` in the first group and
/// `order[n..]` in the second, from the pooled Gram matrix.
fn pooled_statistic(k: &Matrix, order: &[usize], n: usize, diag: f64) -> f64 {
    let (x, y) = order.split_at(n);
    let mut quad = 0.0;
    for &a in x {
        let row = k.row(a);
        quad += x.iter().map(|&c| row[c]).sum::<f64>() - y.iter().map(|&c| row[c]).sum::<f64>();
    }
    for &a in y {
        let row = k.row(a);
        quad += y.iter().map(|&c| row[c]).sum::<f64>() - x.iter().map(|&c| row[c]).sum::<f64>();
    }
    let pairs: f64 = x.iter().zip(y).map(|(&a, &c)| k.get(a, c)).sum();
    (quad - diag + 2.0 * pairs) / (n as f64 - 1.0)
}

/// Observed `n·MMD²_U` and its values under `n_permutations` random
/// relabelings of the pooled sample, from a `2n × 2n` Gram matrix.
pub fn permutation_statistics(k: &Matrix, n: usize, n_permutations: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    check_n(n)?;
    if k.shape() != (2 * n, 2 * n) {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            found: k.rows(),
        });
    }
    let diag = k.trace();
    let mut order: Vec<usize> = (0..2 * n).collect();
    let observed = pooled_statistic(k, &order, n, diag);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut null = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        null.push(pooled_statistic(k, &order, n, diag));
    }
    Ok((observed, null))
}

/// Empirical `(1 − α)` quantile; `α = 0` gives the maximum.
pub fn upper_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "quantile needs values and alpha in [0, 1), got {} values, alpha={alpha}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let rank = ((1.0 - alpha) * n - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

fn pooled_gram(sp: &Matrix, sq: &Matrix, k: &KernelSpec) -> Result<Matrix> {
    check_groups(sp, sq)?;
    let pooled = Matrix::vstack(&[sp, sq])?;
    gram(&pooled, &pooled, k)
}

/// Permutation threshold `c_α` for `n·MMD²_U`.
pub fn permutation_threshold(
    sp: &Matrix,
    sq: &Matrix,
    k: &KernelSpec,
    alpha: f64,
    n_permutations: usize,
    seed: u64,
) -> Result<f64> {
    if n_permutations < 20 {
        return Err(Error::InvalidInput(format!(
            "need at least 20 permutations, got {n_permutations}"
        )));
    }
    let kp = pooled_gram(sp, sq, k)?;
    let (_, null) = permutation_statistics(&kp, sp.rows(), n_permutations, seed)?;
    upper_quantile(&null, alpha)
}

/// Permutation U-statistic test, with the block power estimate attached.
pub fn two_sample_test(sp: &Matrix, sq: &Matrix, k: &KernelSpec, cfg: &PowerConfig, seed: u64) -> Result<TestResult> {
    if cfg.n_permutations < 20 {
        return Err(Error::InvalidInput(format!(
            "need at least 20 permutations, got {}",
            cfg.n_permutations
        )));
    }
    let kp = pooled_gram(sp, sq, k)?;
    let n = sp.rows();
    let (statistic, null) = permutation_statistics(&kp, n, cfg.n_permutations, seed)?;
    let threshold = upper_quantile(&null, cfg.alpha)?;
    let h = pooled_h(&kp, n);
    let estimated_power = match block_power_value(&h, cfg) {
        Ok(p) => p,
        Err(_) => cfg.alpha,
    };
    Ok(TestResult {
        statistic,
        threshold,
        reject: statistic > threshold,
        estimated_power,
    })
}

fn pooled_h(kp: &Matrix, n: usize) -> Matrix {
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h.set(i, j, kp.get(i, j) + kp.get(n + i, n + j) - kp.get(i, n + j) - kp.get(n + i, j));
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::diff::grad_check;

    fn random_h(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let mut h = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        h
    }

    fn normal_sample(rng: &mut ChaCha8Rng, n: usize, mean: f64) -> Matrix {
        Matrix::column(&(0..n).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
    }

    #[test]
    fn mmd_zero_cases_and_enumeration() {
        assert_eq!(mmd_u_sq_value(&Matrix::zeros(4, 4)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_h(&mut rng, 3);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    s += h.get(i, j);
                }
            }
        }
        assert!((mmd_u_sq_value(&h).unwrap() - s / 6.0).abs() < 1e-15);
        assert!(mmd_u_sq_value(&Matrix::zeros(1, 1)).is_err());

        let x = normal_sample(&mut rng, 10, 0.0);
        let h = h_matrix(&x, &x, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        assert_eq!(mmd_u_sq_value(&h).unwrap(), 0.0);
    }

    #[test]
    fn variance_enumeration_and_zero_h() {
        assert_eq!(variance_hat_value(&Matrix::zeros(3, 3), 10.0, 2.0).unwrap(), 2.0 / 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_h(&mut rng, 4);
        let (m, lambda) = (7.0, 0.3);
        let mut first = 0.0;
        let mut total = 0.0;
        for i in 0..4 {
            let mut r = 0.0;
            for j in 0..4 {
                r += h.get(i, j);
                total += h.get(i, j);
            }
            first += r * r;
        }
        let expected = 4.0 / (m * 64.0) * first - 4.0 / (m * 256.0) * total * total + lambda / m;
        assert!((variance_hat_value(&h, m, lambda).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn variance_scaling_with_fixed_lambda() {
        // V̂_{ℓ,λ} = (m/ℓ)·V̂_{m,λ} for a fixed regularizer.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(2..9);
            let h = random_h(&mut rng, n);
            let m = rng.gen_range(1.0..5000.0f64).round();
            let l = rng.gen_range(1.0..5000.0f64).round();
            let lambda = rng.gen_range(0.0..10.0);
            let a = variance_hat_value(&h, l, lambda).unwrap();
            let b = m / l * variance_hat_value(&h, m, lambda).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn tape_and_eager_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_h(&mut rng, 6);
        let cfg = PowerConfig {
            lambda: Some(0.5),
            ..PowerConfig::for_test_size(100)
        };
        let mut tape = Tape::new();
        let hv = HMatrix {
            var: tape.constant(h.clone()).unwrap(),
            n: 6,
        };
        let j = mmd_u_sq(&mut tape, &hv).unwrap();
        let v = variance_hat(&mut tape, &hv, 50.0, 0.5).unwrap();
        let p = block_power_hat(&mut tape, &hv, &cfg).unwrap();
        assert!((tape.scalar(j).unwrap() - mmd_u_sq_value(&h).unwrap()).abs() < 1e-15);
        assert!((tape.scalar(v).unwrap() - variance_hat_value(&h, 50.0, 0.5).unwrap()).abs() < 1e-15);
        assert!((tape.scalar(p).unwrap() - block_power_value(&h, &cfg).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn block_power_boundaries() {
        for alpha in [0.01, 0.05, 0.1] {
            let cfg = PowerConfig {
                alpha,
                lambda: Some(1.0),
                ..PowerConfig::for_test_size(64)
            };
            let p = block_power_value(&Matrix::zeros(8, 8), &cfg).unwrap();
            assert!((p - alpha).abs() <= 1e-9);
        }

        // Choose b so that √b·J/√V_B = t_α exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = normal_sample(&mut rng, 8, 0.0);
        let y = normal_sample(&mut rng, 8, 1.0);
        let h = h_matrix(&x, &y, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        let j = mmd_u_sq_value(&h).unwrap();
        assert!(j > 0.0);
        let base = PowerConfig {
            lambda: Some(0.01),
            ..PowerConfig::for_test_size(64)
        };
        let vb = 8.0 / base.block_size as f64 * variance_hat_value(&h, 8.0, 0.01).unwrap();
        let t = base.t_alpha().unwrap();
        let ratio = j / vb.sqrt();
        let b_star = (t / ratio).powi(2);
        let arg = b_star.sqrt() * ratio - t;
        assert!((normal_cdf(arg) - 0.5).abs() < 1e-12);

        let p4 = block_power_value(&h, &PowerConfig { blocks: 4, ..base.clone() }).unwrap();
        let p16 = block_power_value(&h, &PowerConfig { blocks: 16, ..base.clone() }).unwrap();
        assert!(p16 > p4);
        assert!(p4 > 0.0 && p16 < 1.0);
    }

    #[test]
    fn block_power_symmetric_in_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = normal_sample(&mut rng, 10, 0.0);
        let y = normal_sample(&mut rng, 10, 0.7);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let cfg = PowerConfig::for_test_size(100);
        let a = block_power_value(&h_matrix(&x, &y, &k).unwrap(), &cfg).unwrap();
        let b = block_power_value(&h_matrix(&y, &x, &k).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn block_power_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = normal_sample(&mut rng, 8, 0.0);
        let y = normal_sample(&mut rng, 8, 0.5);
        let cfg = PowerConfig::for_test_size(64);
        let r = grad_check(
            |t, v| {
                let h = crate::kernels::gaussian_h_on_tape(t, v[0], v[1], v[2]).unwrap();
                Ok(block_power_hat(t, &h, &cfg).unwrap())
            },
            &[x, y, Matrix::scalar(0.1)],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn block_mmd_per_block_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = normal_sample(&mut rng, 14, 0.0);
        let y = normal_sample(&mut rng, 14, 0.5);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let parts = block_partition(14, 3, 4, 99).unwrap();
        let manual: f64 = parts
            .iter()
            .map(|idx| mmd_u_sq_value(&h_matrix(&x.select_rows(idx), &y.select_rows(idx), &k).unwrap()).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((block_mmd(&x, &y, &k, 3, 4, 99).unwrap() - manual).abs() < 1e-15);

        let all: Vec<usize> = (0..8).collect();
        let single = block_partition(8, 1, 8, 3).unwrap();
        let mut sorted = single[0].clone();
        sorted.sort_unstable();
        assert_eq!(sorted, all);
        let whole = mmd_u_sq_value(&h_matrix(&x.select_rows(&single[0]), &y.select_rows(&single[0]), &k).unwrap()).unwrap();
        assert!((block_mmd(&x.select_rows(&all), &y.select_rows(&all), &k, 1, 8, 3).unwrap() - whole).abs() < 1e-15);
        assert_eq!(block_mmd(&x, &x, &k, 3, 4, 1).unwrap(), 0.0);
        assert!(block_mmd(&x, &y, &k, 4, 4, 1).is_err());
    }

    #[test]
    fn pooled_statistic_matches_h_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = normal_sample(&mut rng, 9, 0.0);
        let y = normal_sample(&mut rng, 9, 0.4);
        let k = KernelSpec::gaussian(0.8).unwrap();
        let kp = pooled_gram(&x, &y, &k).unwrap();
        let (obs, _) = permutation_statistics(&kp, 9, 20, 0).unwrap();
        let direct = 9.0 * mmd_u_sq_value(&h_matrix(&x, &y, &k).unwrap()).unwrap();
        assert!((obs - direct).abs() < 1e-12);
        assert_eq!(pooled_h(&kp, 9), h_matrix(&x, &y, &k).unwrap());

        // A relabeling is the same statistic on the permuted groups.
        let order: Vec<usize> = vec![3, 10, 0, 17, 5, 12, 8, 1, 14, 2, 9, 4, 11, 6, 13, 7, 15, 16];
        let pooled = Matrix::vstack(&[&x, &y]).unwrap();
        let px = pooled.select_rows(&order[..9]);
        let py = pooled.select_rows(&order[9..]);
        let direct = 9.0 * mmd_u_sq_value(&h_matrix(&px, &py, &k).unwrap()).unwrap();
        assert!((pooled_statistic(&kp, &order, 9, kp.trace()) - direct).abs() < 1e-12);
    }

    #[test]
    fn permutation_threshold_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = normal_sample(&mut rng, 10, 0.0);
        let y = normal_sample(&mut rng, 10, 0.3);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let kp = pooled_gram(&x, &y, &k).unwrap();
        let (_, null) = permutation_statistics(&kp, 10, 50, 5).unwrap();
        let max = null.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(permutation_threshold(&x, &y, &k, 0.0, 50, 5).unwrap(), max);
        assert_eq!(
            permutation_threshold(&x, &y, &k, 0.05, 50, 5).unwrap(),
            permutation_threshold(&x, &y, &k, 0.05, 50, 5).unwrap()
        );
        let point = Matrix::zeros(6, 1);
        assert_eq!(permutation_threshold(&point, &point, &k, 0.05, 40, 1).unwrap(), 0.0);
        assert!(permutation_threshold(&x, &y, &k, 0.05, 10, 1).is_err());
        assert_eq!(upper_quantile(&[1.0, 2.0, 3.0, 4.0], 0.25).unwrap(), 3.0);
    }

    #[test]
    fn two_sample_test_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = KernelSpec::gaussian(1.0).unwrap();
        let cfg = PowerConfig::for_test_size(50);
        let x = normal_sample(&mut rng, 50, 0.0);
        let same = two_sample_test(&x, &x, &k, &cfg, 1).unwrap();
        assert!(!same.reject);
        assert_eq!(same.statistic, 0.0);

        let mut rejects = 0;
        for trial in 0..100 {
            let a = normal_sample(&mut rng, 50, 0.0);
            let b = normal_sample(&mut rng, 50, 5.0);
            let r = two_sample_test(&a, &b, &k, &cfg, trial).unwrap();
            assert_eq!(r.reject, r.statistic > r.threshold);
            assert!(r.estimated_power > 0.0 && r.estimated_power < 1.0);
            rejects += r.reject as usize;
        }
        assert!(rejects >= 99);
        assert!(two_sample_test(&x, &Matrix::zeros(49, 1), &k, &cfg, 0).is_err());
    }

    #[test]
    fn asymptotic_power_properties() {
        assert!((asymptotic_u_power(0.1, 5.0, 50.0, 0.01).unwrap() - 0.5).abs() < 1e-15);
        assert!(asymptotic_u_power(0.0, 1.0, 50.0, 0.01).unwrap() < 0.5);
        let small = asymptotic_u_power(0.05, 2.0, 50.0, 1.0 / 50.0).unwrap();
        let large = asymptotic_u_power(0.05, 2.0, 500.0, 1.0 / 500.0).unwrap();
        assert!(large > small);
        assert!(asymptotic_u_power(0.1, 1.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn power_config_defaults_and_validation() {
        let cfg = PowerConfig::for_test_size(1000);
        assert_eq!((cfg.blocks, cfg.block_size), (31, 31));
        assert!(cfg.validate().is_ok());
        assert!((cfg.lambda_for(64) - 16.0).abs() < 1e-12);
        assert!(PowerConfig { blocks: 40, ..cfg.clone() }.validate().is_err());
        assert!(PowerConfig { alpha: 1.0, ..cfg.clone() }.validate().is_err());
        assert!(PowerConfig { lambda: Some(-1.0), ..cfg }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn power_strictly_inside_unit_interval(seed in 0u64..5000, shift in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = normal_sample(&mut rng, 12, 0.0);
            let y = normal_sample(&mut rng, 12, shift);
            let h = h_matrix(&x, &y, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
            let p = block_power_value(&h, &PowerConfig::for_test_size(144)).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
