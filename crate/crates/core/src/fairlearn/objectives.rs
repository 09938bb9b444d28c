use super::{Batch, FairModel, FairnessWeights, Mode, PairBatch};
use crate::diff::{Matrix, Tape, Var};
use crate::estimators::{block_power_hat, permutation_power_hat, permutation_statistics, upper_quantile, PowerConfig};
use crate::kernels::{gaussian_h_on_tape, gram, grid_h_on_tape, KernelSpec, MlpVars};
use crate::{Error, Result};

/// A [`FairModel`]'s parameters as tape leaves.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub featurizer: MlpVars,
    pub classifier: MlpVars,
    pub log_sigma: Var,
}

impl BoundModel {
    /// Rebuilds the binding from leaves in [`FairModel::parameters`] order.
    pub fn from_flat(model: &FairModel, vars: &[Var]) -> Result<Self> {
        let nf = model.featurizer.parameters().len();
        let nc = model.classifier.parameters().len();
        if vars.len() != nf + nc + 1 {
            return Err(Error::DimensionMismatch {
                expected: nf + nc + 1,
                found: vars.len(),
            });
        }
        Ok(Self {
            featurizer: MlpVars::from_vars(vars[..nf].to_vec()),
            classifier: MlpVars::from_vars(vars[nf..nf + nc].to_vec()),
            log_sigma: vars[nf + nc],
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.featurizer.vars();
        v.extend(self.classifier.vars());
        v.push(self.log_sigma);
        v
    }
}

/// How a pair's test power is estimated inside the objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerEstimator {
    /// Closed-form block-test power.
    Block,
    /// Asymptotic U-statistic power at a permutation threshold held fixed
    /// during differentiation. With `split`, the first half of each pair
    /// calibrates the threshold and the second half carries the gradient.
    Permutation { split: bool, seed: u64 },
}

/// Objective value with its components, all on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Terms {
    /// Sensitive power term before weighting (a sum over `t` in EO mode).
    pub sensitive: Var,
    pub target: Var,
    pub classification: Option<Var>,
    pub total: Var,
}

struct Featurized {
    p: Var,
    q: Var,
}

fn featurize(tape: &mut Tape, model: &FairModel, bound: &BoundModel, pair: &PairBatch) -> Result<Featurized> {
    if pair.p.rows() != pair.q.rows() {
        return Err(Error::UnequalGroups {
            p: pair.p.rows(),
            q: pair.q.rows(),
        });
    }
    if pair.p.rows() == 0 {
        return Err(Error::EmptyGroup("batch pair is empty".into()));
    }
    let xp = tape.constant(pair.p.clone())?;
    let xq = tape.constant(pair.q.clone())?;
    Ok(Featurized {
        p: model.featurizer.forward(tape, &bound.featurizer, xp)?,
        q: model.featurizer.forward(tape, &bound.featurizer, xq)?,
    })
}

fn permutation_threshold_of(z: &Matrix, n: usize, sigma: f64, cfg: &PowerConfig, seed: u64) -> Result<f64> {
    let k = gram(z, z, &KernelSpec::gaussian(sigma)?)?;
    let (_, null) = permutation_statistics(&k, n, cfg.n_permutations, seed)?;
    upper_quantile(&null, cfg.alpha)
}

/// One power value per grid length-scale.
fn grid_powers(
    tape: &mut Tape,
    f: &Featurized,
    grid: &[f64],
    cfg: &PowerConfig,
    estimator: PowerEstimator,
) -> Result<Vec<Var>> {
    match estimator {
        PowerEstimator::Block => grid_h_on_tape(tape, f.p, f.q, grid)?
            .iter()
            .map(|h| block_power_hat(tape, h, cfg))
            .collect(),
        PowerEstimator::Permutation { split, seed } => {
            let n = tape.shape(f.p).0;
            let (cal, pow): (Vec<usize>, Vec<usize>) = if split {
                ((0..n / 2).collect(), (n / 2..n).collect())
            } else {
                ((0..n).collect(), (0..n).collect())
            };
            let zp = tape.value(f.p).select_rows(&cal);
            let zq = tape.value(f.q).select_rows(&cal);
            let pooled = Matrix::vstack(&[&zp, &zq])?;
            let (fp, fq) = if split {
                (tape.select_rows(f.p, &pow)?, tape.select_rows(f.q, &pow)?)
            } else {
                (f.p, f.q)
            };
            let hs = grid_h_on_tape(tape, fp, fq, grid)?;
            let m = cfg.m as f64;
            let lambda = cfg.lambda_for(pow.len());
            let mut out = Vec::with_capacity(grid.len());
            for (g, (h, &sigma)) in hs.iter().zip(grid).enumerate() {
                let c = permutation_threshold_of(&pooled, cal.len(), sigma, cfg, seed.wrapping_add(g as u64))?;
                out.push(permutation_power_hat(tape, h, c, m, lambda)?);
            }
            Ok(out)
        }
    }
}

fn grid_max(
    tape: &mut Tape,
    f: &Featurized,
    grid: &[f64],
    cfg: &PowerConfig,
    estimator: PowerEstimator,
) -> Result<Var> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("kernel grid is empty".into()));
    }
    let powers = grid_powers(tape, f, grid, cfg, estimator)?;
    Ok(tape.max_of(&powers)?)
}

fn classification(tape: &mut Tape, model: &FairModel, bound: &BoundModel, parts: &[(Var, usize)]) -> Result<Var> {
    let vars: Vec<Var> = parts.iter().map(|&(v, _)| v).collect();
    let labels: Vec<usize> = parts
        .iter()
        .flat_map(|&(v, label)| std::iter::repeat_n(label, tape.shape(v).0))
        .collect();
    let z = tape.concat_rows(&vars)?;
    let logits = model.classifier.forward(tape, &bound.classifier, z)?;
    Ok(tape.cross_entropy(logits, &labels)?)
}

fn combine(
    tape: &mut Tape,
    weights: &FairnessWeights,
    sensitive: Var,
    target: Var,
    cls: Option<Var>,
) -> Result<Var> {
    let s = tape.scale(sensitive, weights.lambda_s)?;
    let t = tape.scale(target, weights.lambda_t)?;
    let mut total = tape.sub(s, t)?;
    if let Some(c) = cls {
        let c = tape.scale(c, weights.lambda_cls)?;
        total = tape.add(total, c)?;
    }
    Ok(total)
}

fn require_mode(weights: &FairnessWeights, mode: Mode, batch: &Batch) -> Result<()> {
    weights.validate()?;
    if weights.mode != mode {
        return Err(Error::InvalidInput(format!(
            "objective needs {} mode, got {}",
            mode.name(),
            weights.mode.name()
        )));
    }
    let expected = match mode {
        Mode::Dp => 1,
        Mode::Eo => 2,
    };
    if batch.sensitive.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: batch.sensitive.len(),
        });
    }
    Ok(())
}

/// `ρ̂ˢ − ρ̂ᵗ` under the single deep kernel `exp(log σ)` on `φ`.
pub fn fair_kernel_objective(
    tape: &mut Tape,
    model: &FairModel,
    bound: &BoundModel,
    batch: &Batch,
    cfg: &PowerConfig,
    weights: &FairnessWeights,
) -> Result<Terms> {
    require_mode(weights, Mode::Dp, batch)?;
    let fs = featurize(tape, model, bound, &batch.sensitive[0])?;
    let ft = featurize(tape, model, bound, &batch.target)?;
    let hs = gaussian_h_on_tape(tape, fs.p, fs.q, bound.log_sigma)?;
    let ht = gaussian_h_on_tape(tape, ft.p, ft.q, bound.log_sigma)?;
    let sensitive = block_power_hat(tape, &hs, cfg)?;
    let target = block_power_hat(tape, &ht, cfg)?;
    Ok(Terms {
        sensitive,
        target,
        classification: None,
        total: tape.sub(sensitive, target)?,
    })
}

/// `λ_s·max ρ̂ˢ − λ_t·max ρ̂ᵗ + λ_cls·L_cls` with maxima over the grids and
/// the classifier loss on the target pair only.
pub fn minimax_objective(
    tape: &mut Tape,
    model: &FairModel,
    bound: &BoundModel,
    batch: &Batch,
    cfg: &PowerConfig,
    weights: &FairnessWeights,
) -> Result<Terms> {
    dp_objective(tape, model, bound, batch, cfg, weights, PowerEstimator::Block)
}

fn dp_objective(
    tape: &mut Tape,
    model: &FairModel,
    bound: &BoundModel,
    batch: &Batch,
    cfg: &PowerConfig,
    weights: &FairnessWeights,
    estimator: PowerEstimator,
) -> Result<Terms> {
    require_mode(weights, Mode::Dp, batch)?;
    let fs = featurize(tape, model, bound, &batch.sensitive[0])?;
    let ft = featurize(tape, model, bound, &batch.target)?;
    let sensitive = grid_max(tape, &fs, &model.sensitive_grid, cfg, estimator)?;
    let target = grid_max(tape, &ft, &model.target_grid, cfg, estimator)?;
    let cls = classification(tape, model, bound, &[(ft.p, 0), (ft.q, 1)])?;
    Ok(Terms {
        sensitive,
        target,
        classification: Some(cls),
        total: combine(tape, weights, sensitive, target, Some(cls))?,
    })
}

/// `λ_s·Σ_t max ρ̂^{s|t} − λ_t·max ρ̂ᵗ + λ_cls·L_cls` with the classifier
/// loss on every sample in the batch.
pub fn eo_objective(
    tape: &mut Tape,
    model: &FairModel,
    bound: &BoundModel,
    batch: &Batch,
    cfg: &PowerConfig,
    weights: &FairnessWeights,
) -> Result<Terms> {
    eo_objective_with(tape, model, bound, batch, cfg, weights, PowerEstimator::Block)
}

fn eo_objective_with(
    tape: &mut Tape,
    model: &FairModel,
    bound: &BoundModel,
    batch: &Batch,
    cfg: &PowerConfig,
    weights: &FairnessWeights,
    estimator: PowerEstimator,
) -> Result<Terms> {
    require_mode(weights, Mode::Eo, batch)?;
    let ft = featurize(tape, model, bound, &batch.target)?;
    let mut parts = vec![(ft.p, 0), (ft.q, 1)];
    let mut conditional = Vec::with_capacity(2);
    for (t, pair) in batch.sensitive.iter().enumerate() {
        let f = featurize(tape, model, bound, pair)?;
        conditional.push(grid_max(tape, &f, &model.sensitive_grid, cfg, estimator)?);
        parts.push((f.p, t));
        parts.push((f.q, t));
    }
    let sensitive = tape.add(conditional[0], conditional[1])?;
    let target = grid_max(tape, &ft, &model.target_grid, cfg, estimator)?;
    let cls = classification(tape, model, bound, &parts)?;
    Ok(Terms {
        sensitive,
        target,
        classification: Some(cls),
        total: combine(tape, weights, sensitive, target, Some(cls))?,
    })
}

/// The training objective for `weights.mode`.
pub fn objective(
    tape: &mut Tape,
    model: &FairModel,
    bound: &BoundModel,
    batch: &Batch,
    cfg: &PowerConfig,
    weights: &FairnessWeights,
    estimator: PowerEstimator,
) -> Result<Terms> {
    match weights.mode {
        Mode::Dp => dp_objective(tape, model, bound, batch, cfg, weights, estimator),
        Mode::Eo => eo_objective_with(tape, model, bound, batch, cfg, weights, estimator),
    }
}
