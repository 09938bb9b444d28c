use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{objective, Batch, BatchSampler, FairModel, FairnessWeights, Mode, PowerEstimator};
use crate::data::{DatasetSplit, Splits};
use crate::diff::{Matrix, OptimizerKind, OptimizerState, Tape};
use crate::estimators::PowerConfig;
use crate::{Error, Result};

const SAMPLER_STREAM: u64 = 0x5eed_0001;
const VALIDATION_STREAM: u64 = 0x5eed_0002;
const LENGTH_SCALE_ROWS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub featurizer_widths: Vec<usize>,
    /// Hidden width of the classifier head.
    pub classifier_width: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Samples drawn from each side of every group pair per step.
    pub batch_per_group: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// `None` means one pass over the training rows at `2 · batch_per_group`
    /// rows per step.
    pub steps_per_epoch: Option<usize>,
    /// Fixed validation batches scored after every epoch.
    pub val_batches: usize,
    /// `None` sizes the test to the smallest training group.
    pub power: Option<PowerConfig>,
    pub estimator: PowerEstimator,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::adult()
    }
}

impl TrainConfig {
    pub fn adult() -> Self {
        Self {
            featurizer_widths: vec![256, 128, 64, 32, 16],
            classifier_width: 16,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            batch_per_group: 32,
            max_epochs: 100,
            patience: 20,
            steps_per_epoch: None,
            val_batches: 10,
            power: None,
            estimator: PowerEstimator::Block,
        }
    }

    pub fn health() -> Self {
        Self::adult()
    }

    pub fn compas() -> Self {
        Self {
            featurizer_widths: vec![8, 8, 8],
            classifier_width: 8,
            optimizer: OptimizerKind::Adadelta,
            learning_rate: 2.0,
            ..Self::adult()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_per_group < 2 {
            return Err(Error::InvalidInput("batch_per_group must be at least 2".into()));
        }
        if self.val_batches == 0 {
            return Err(Error::InvalidInput("val_batches must be positive".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::InvalidInput("steps_per_epoch must be positive".into()));
        }
        if let Some(p) = &self.power {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub classification: f64,
    pub sensitive_power: f64,
    pub target_power: f64,
    pub train_objective: f64,
    pub val_objective: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters the returned model carries.
    pub best_epoch: Option<usize>,
    pub power: Option<PowerConfig>,
}

/// Size of the smallest group `mode` compares in `split`.
pub fn smallest_group(split: &DatasetSplit, mode: Mode) -> Result<usize> {
    Ok(BatchSampler::new(split, mode, 2)?.smallest_group())
}

#[derive(Default)]
struct Means {
    cls: f64,
    s: f64,
    t: f64,
    total: f64,
    count: f64,
}

impl Means {
    fn push(&mut self, cls: f64, s: f64, t: f64, total: f64) {
        self.cls += cls;
        self.s += s;
        self.t += t;
        self.total += total;
        self.count += 1.0;
    }

    fn mean(&self, v: f64) -> f64 {
        v / self.count
    }
}

struct Step {
    cls: f64,
    s: f64,
    t: f64,
    total: f64,
}

fn evaluate(
    model: &FairModel,
    batch: &Batch,
    cfg: &PowerConfig,
    weights: &FairnessWeights,
    estimator: PowerEstimator,
    grads: bool,
) -> Result<(Step, Option<Vec<Matrix>>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let terms = objective(&mut tape, model, &bound, batch, cfg, weights, estimator)?;
    let total = tape.scalar(terms.total)?;
    if !total.is_finite() {
        return Err(Error::InvalidInput("training objective is not finite".into()));
    }
    let step = Step {
        cls: terms.classification.map_or(Ok(0.0), |c| tape.scalar(c))?,
        s: tape.scalar(terms.sensitive)?,
        t: tape.scalar(terms.target)?,
        total,
    };
    if !grads {
        return Ok((step, None));
    }
    let g = tape.backward(terms.total)?;
    let shapes = model.parameter_shapes();
    let grads = bound
        .vars()
        .into_iter()
        .zip(shapes)
        .map(|(v, shape)| g.get_or_zeros(v, shape))
        .collect();
    Ok((step, Some(grads)))
}

fn with_seed(estimator: PowerEstimator, seed: u64) -> PowerEstimator {
    match estimator {
        PowerEstimator::Block => PowerEstimator::Block,
        PowerEstimator::Permutation { split, .. } => PowerEstimator::Permutation { split, seed },
    }
}

/// Trains a [`FairModel`] on `splits.train`, early-stopping on the mean
/// objective over fixed batches of `splits.val`, and returns the parameters
/// of the best validation epoch.
pub fn train(splits: &Splits, weights: &FairnessWeights, cfg: &TrainConfig, seed: u64) -> Result<(FairModel, History)> {
    weights.validate()?;
    cfg.validate()?;
    let train_sampler = BatchSampler::new(&splits.train, weights.mode, cfg.batch_per_group)?;
    let val_sampler = BatchSampler::new(&splits.val, weights.mode, cfg.batch_per_group)?;
    let power = match &cfg.power {
        Some(p) => p.clone(),
        None => PowerConfig::for_test_size(train_sampler.smallest_group()),
    };
    power.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = FairModel::new(
        splits.train.dim(),
        &cfg.featurizer_widths,
        cfg.classifier_width,
        &mut rng,
    )?;
    let n = splits.train.len();
    let rows: Vec<usize> = sample(&mut rng, n, n.min(LENGTH_SCALE_ROWS)).into_vec();
    model.init_length_scales(&splits.train.features.select_rows(&rows))?;

    let mut history = History {
        power: Some(power.clone()),
        ..History::default()
    };
    if cfg.max_epochs == 0 {
        return Ok((model, history));
    }

    let mut val_rng = ChaCha8Rng::seed_from_u64(seed ^ VALIDATION_STREAM);
    let val_set: Vec<Batch> = (0..cfg.val_batches).map(|_| val_sampler.sample(&mut val_rng)).collect();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLER_STREAM);
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| n.div_ceil(2 * cfg.batch_per_group).max(1));
    let mut optimizer = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &model.parameter_shapes());

    let mut best = (f64::INFINITY, model.clone());
    let mut stale = 0;
    let mut step_index: u64 = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut means = Means::default();
        for _ in 0..steps {
            let batch = train_sampler.sample(&mut batch_rng);
            let est = with_seed(cfg.estimator, seed.wrapping_add(step_index));
            step_index += 1;
            let (step, grads) = evaluate(&model, &batch, &power, weights, est, true)?;
            means.push(step.cls, step.s, step.t, step.total);
            let grads = grads.expect("gradients requested");
            optimizer.step(&mut model.parameters_mut(), &grads)?;
        }
        let mut val = 0.0;
        for (k, batch) in val_set.iter().enumerate() {
            let est = with_seed(cfg.estimator, seed ^ VALIDATION_STREAM ^ k as u64);
            val += evaluate(&model, batch, &power, weights, est, false)?.0.total;
        }
        let val = val / val_set.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            classification: means.mean(means.cls),
            sensitive_power: means.mean(means.s),
            target_power: means.mean(means.t),
            train_objective: means.mean(means.total),
            val_objective: val,
        });
        log::debug!("epoch {epoch}: train {:.6} val {val:.6}", means.mean(means.total));
        if val < best.0 {
            best = (val, model.clone());
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}
