use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{accuracy, fairness_report, FairnessReport};
use crate::diff::{Matrix, OptimizerKind, OptimizerState, Tape};
use crate::estimators::{block_power_hat, two_sample_test, PowerConfig, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};
use crate::kernels::{gaussian_h_on_tape, median_heuristic, KernelSpec, Mlp};
use crate::{Error, Result};

const CLASSIFIER_STREAM: u64 = 0xa0d1_0001;
const KERNEL_STREAM: u64 = 0xa0d1_0002;
const TRIAL_STREAM: u64 = 0xa0d1_0003;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditConfig {
    /// Share of the representations used to fit audit models.
    pub train_fraction: f64,
    pub classifier_epochs: usize,
    pub classifier_learning_rate: f64,
    /// Z-score representations before fitting classifiers.
    pub standardize: bool,
    pub kernel_epochs: usize,
    /// Adam step size of the audit kernel.
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Hidden width of the audit kernel's one-layer network.
    pub kernel_width: usize,
    pub trials: usize,
    /// Samples per sensitive group in each audit test.
    pub per_group: usize,
    pub alpha: f64,
    pub n_permutations: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            classifier_epochs: 200,
            classifier_learning_rate: 1e-2,
            standardize: false,
            kernel_epochs: 50,
            learning_rate: 1e-3,
            batch_size: 64,
            kernel_width: 16,
            trials: 100,
            per_group: 32,
            alpha: DEFAULT_ALPHA,
            n_permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub classifier_accuracy: f64,
    /// Majority-class rate of `s` on the evaluation portion.
    pub majority_baseline: f64,
    pub mmd_power: f64,
    pub rejections: usize,
    pub trials: usize,
}

/// Seeded shuffle of `0..n` cut into a fitting portion of
/// `round(train_fraction · n)` rows and an evaluation portion.
pub fn audit_partition(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (train_fraction * n as f64).round() as usize;
    let eval = idx.split_off(k);
    Ok((idx, eval))
}

fn check_labels(x: &Matrix, y: &[u8]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::EmptyGroup("labels take a single value".into()));
    }
    Ok(())
}

/// Fits `Linear → leaky ReLU → Linear(2)` by mini-batch cross-entropy with
/// Adam.
pub fn fit_classifier(x: &Matrix, y: &[u8], hidden: usize, cfg: &AuditConfig, seed: u64) -> Result<Mlp> {
    check_labels(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(x.cols(), &[hidden.max(1), 2], false, &mut rng);
    let mut opt = OptimizerState::new(OptimizerKind::Adam, cfg.classifier_learning_rate, &net.parameter_shapes());
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
    for _ in 0..cfg.classifier_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape)?;
            let xb = tape.constant(x.select_rows(chunk))?;
            let logits = net.forward(&mut tape, &vars, xb)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = tape.cross_entropy(logits, &yb)?;
            let g = tape.backward(loss)?;
            let grads: Vec<Matrix> = vars
                .vars()
                .into_iter()
                .zip(net.parameter_shapes())
                .map(|(v, s)| g.get_or_zeros(v, s))
                .collect();
            opt.step(&mut net.parameters_mut(), &grads)?;
        }
    }
    Ok(net)
}

/// Z-scores the columns of `x` with the mean and population deviation of
/// the `fit` rows; near-constant columns become zero.
pub fn standardize(x: &Matrix, fit: &[usize]) -> Matrix {
    let n = fit.len().max(1) as f64;
    let mut out = x.clone();
    for j in 0..x.cols() {
        let mean = fit.iter().map(|&i| x.get(i, j)).sum::<f64>() / n;
        let var = fit.iter().map(|&i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for i in 0..x.rows() {
            out.set(i, j, if sd > 1e-12 { (x.get(i, j) - mean) / sd } else { 0.0 });
        }
    }
    out
}

pub fn predict(net: &Mlp, x: &Matrix) -> Result<Vec<u8>> {
    let z = net.apply(x)?;
    Ok((0..z.rows()).map(|i| (z.get(i, 1) > z.get(i, 0)) as u8).collect())
}

/// Accuracy of a fresh classifier recovering `s` from the representations,
/// and the accuracy of always predicting the fit portion's majority label,
/// both on the evaluation portion.
pub fn sensitive_classifier_audit(reps: &Matrix, s: &[u8], cfg: &AuditConfig, seed: u64) -> Result<(f64, f64)> {
    check_labels(reps, s)?;
    let (fit, eval) = audit_partition(reps.rows(), cfg.train_fraction, seed)?;
    let reps = if cfg.standardize { standardize(reps, &fit) } else { reps.clone() };
    let s_fit: Vec<u8> = fit.iter().map(|&i| s[i]).collect();
    let s_eval: Vec<u8> = eval.iter().map(|&i| s[i]).collect();
    let net = fit_classifier(&reps.select_rows(&fit), &s_fit, reps.cols(), cfg, seed ^ CLASSIFIER_STREAM)?;
    let pred = predict(&net, &reps.select_rows(&eval))?;
    let ones = s_fit.iter().filter(|&&v| v == 1).count();
    let majority = u8::from(2 * ones > s_fit.len());
    let baseline = s_eval.iter().filter(|&&v| v == majority).count() as f64 / s_eval.len() as f64;
    Ok((accuracy(&pred, &s_eval)?, baseline))
}

fn split_groups(idx: &[usize], s: &[u8]) -> (Vec<usize>, Vec<usize>) {
    idx.iter().partition(|&&i| s[i] == 0)
}

/// Trains the audit kernel (a one-layer network under a Gaussian with a
/// learnt length-scale) to maximize block-test power between the two
/// sensitive groups of `x`.
pub fn fit_audit_kernel(x: &Matrix, s: &[u8], cfg: &AuditConfig, seed: u64) -> Result<KernelSpec> {
    check_labels(x, s)?;
    let all: Vec<usize> = (0..x.rows()).collect();
    let (g0, g1) = split_groups(&all, s);
    let n = cfg.per_group.min(g0.len()).min(g1.len());
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, found: n });
    }
    let power = PowerConfig {
        alpha: cfg.alpha,
        ..PowerConfig::for_test_size(cfg.per_group.max(4))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(x.cols(), &[cfg.kernel_width], true, &mut rng);
    let mut log_sigma = Matrix::scalar(median_heuristic(&net.apply(x)?).ln());
    let mut shapes = net.parameter_shapes();
    shapes.push((1, 1));
    let mut opt = OptimizerState::new(OptimizerKind::Adam, cfg.learning_rate, &shapes);
    let steps = x.rows().div_ceil(2 * n).max(1);
    for _ in 0..cfg.kernel_epochs {
        for _ in 0..steps {
            let p: Vec<usize> = sample(&mut rng, g0.len(), n).into_iter().map(|i| g0[i]).collect();
            let q: Vec<usize> = sample(&mut rng, g1.len(), n).into_iter().map(|i| g1[i]).collect();
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape)?;
            let ls = tape.param(log_sigma.clone())?;
            let xp = tape.constant(x.select_rows(&p))?;
            let xq = tape.constant(x.select_rows(&q))?;
            let fp = net.forward(&mut tape, &vars, xp)?;
            let fq = net.forward(&mut tape, &vars, xq)?;
            let h = gaussian_h_on_tape(&mut tape, fp, fq, ls)?;
            let rho = block_power_hat(&mut tape, &h, &power)?;
            let loss = tape.neg(rho)?;
            if !tape.scalar(loss)?.is_finite() {
                continue;
            }
            let g = tape.backward(loss)?;
            let mut all_vars = vars.vars();
            all_vars.push(ls);
            let grads: Vec<Matrix> = all_vars.iter().zip(&shapes).map(|(&v, &s)| g.get_or_zeros(v, s)).collect();
            let mut params = net.parameters_mut();
            params.push(&mut log_sigma);
            opt.step(&mut params, &grads)?;
        }
    }
    KernelSpec::deep(net, log_sigma.item()?.exp())
}

/// Fraction of `trials` permutation tests, each on `per_group` fresh samples
/// per sensitive group of `x`, that reject under `kernel`.
pub fn rejection_rate(x: &Matrix, s: &[u8], kernel: &KernelSpec, cfg: &AuditConfig, seed: u64) -> Result<usize> {
    let all: Vec<usize> = (0..x.rows()).collect();
    let (g0, g1) = split_groups(&all, s);
    let n = cfg.per_group;
    if g0.len() < n || g1.len() < n || n < 2 {
        return Err(Error::InsufficientSamples {
            needed: n.max(2),
            found: g0.len().min(g1.len()),
        });
    }
    let test_cfg = PowerConfig {
        alpha: cfg.alpha,
        n_permutations: cfg.n_permutations,
        ..PowerConfig::for_test_size(n.max(4))
    };
    let outcomes: Vec<bool> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let trial_seed = seed.wrapping_add(k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
            let p: Vec<usize> = sample(&mut rng, g0.len(), n).into_iter().map(|i| g0[i]).collect();
            let q: Vec<usize> = sample(&mut rng, g1.len(), n).into_iter().map(|i| g1[i]).collect();
            Ok(two_sample_test(&x.select_rows(&p), &x.select_rows(&q), kernel, &test_cfg, trial_seed)?.reject)
        })
        .collect::<Result<_>>()?;
    Ok(outcomes.into_iter().filter(|&r| r).count())
}

/// Learns an audit kernel on the fitting portion and reports its empirical
/// rejection rate on the evaluation portion.
pub fn mmd_power_audit(reps: &Matrix, s: &[u8], cfg: &AuditConfig, seed: u64) -> Result<(f64, usize)> {
    check_labels(reps, s)?;
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("need at least one audit trial".into()));
    }
    let (fit, eval) = audit_partition(reps.rows(), cfg.train_fraction, seed)?;
    let s_eval: Vec<u8> = eval.iter().map(|&i| s[i]).collect();
    let (e0, e1) = split_groups(&(0..eval.len()).collect::<Vec<_>>(), &s_eval);
    let needed = 2 * cfg.per_group;
    if e0.len() < needed || e1.len() < needed {
        return Err(Error::InsufficientSamples {
            needed,
            found: e0.len().min(e1.len()),
        });
    }
    let s_fit: Vec<u8> = fit.iter().map(|&i| s[i]).collect();
    let kernel = fit_audit_kernel(&reps.select_rows(&fit), &s_fit, cfg, seed ^ KERNEL_STREAM)?;
    let rejections = rejection_rate(&reps.select_rows(&eval), &s_eval, &kernel, cfg, seed ^ TRIAL_STREAM)?;
    Ok((rejections as f64 / cfg.trials as f64, rejections))
}

/// Both audits on the same representations.
pub fn audit(reps: &Matrix, s: &[u8], cfg: &AuditConfig, seed: u64) -> Result<AuditReport> {
    let (classifier_accuracy, majority_baseline) = sensitive_classifier_audit(reps, s, cfg, seed)?;
    let (mmd_power, rejections) = mmd_power_audit(reps, s, cfg, seed)?;
    Ok(AuditReport {
        classifier_accuracy,
        majority_baseline,
        mmd_power,
        rejections,
        trials: cfg.trials,
    })
}

/// Trains an unconstrained classifier for `labels` on frozen
/// representations and reports accuracy and fairness with respect to `s` on
/// the evaluation portion.
pub fn transfer_eval(reps: &Matrix, labels: &[u8], s: &[u8], cfg: &AuditConfig, seed: u64) -> Result<FairnessReport> {
    check_labels(reps, labels)?;
    check_labels(reps, s)?;
    let (fit, eval) = audit_partition(reps.rows(), cfg.train_fraction, seed)?;
    let reps = if cfg.standardize { standardize(reps, &fit) } else { reps.clone() };
    let y_fit: Vec<u8> = fit.iter().map(|&i| labels[i]).collect();
    let net = fit_classifier(&reps.select_rows(&fit), &y_fit, reps.cols(), cfg, seed ^ CLASSIFIER_STREAM)?;
    let pred = predict(&net, &reps.select_rows(&eval))?;
    let y_eval: Vec<u8> = eval.iter().map(|&i| labels[i]).collect();
    let s_eval: Vec<u8> = eval.iter().map(|&i| s[i]).collect();
    fairness_report(&pred, &y_eval, &s_eval)
}
