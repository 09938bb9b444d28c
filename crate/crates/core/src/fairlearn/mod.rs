//! Fair representation learning: a featurizer trained so block MMD tests on
//! the sensitive attribute lose power while tests on the target keep it.

mod batch;
mod objectives;
mod persist;
mod sweep;
mod train;

pub use batch::{Batch, BatchSampler, PairBatch};
pub use objectives::{
    eo_objective, fair_kernel_objective, minimax_objective, objective, BoundModel, PowerEstimator, Terms,
};
pub use persist::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use sweep::{aggregate, sweep, sweep_run, Aggregate, Summary, SweepRun, DEFAULT_LAMBDAS};
pub use train::{smallest_group, train, EpochRecord, History, TrainConfig};

use rand::Rng;

use crate::diff::{Matrix, Tape};
use crate::kernels::{default_grid, median_heuristic, Featurizer, Mlp};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Demographic parity: sensitive groups compared marginally.
    Dp,
    /// Equalized odds: sensitive groups compared within each target class.
    Eo,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Some(Self::Dp),
            "eo" => Some(Self::Eo),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dp => "dp",
            Self::Eo => "eo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FairnessWeights {
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_cls: f64,
    pub mode: Mode,
}

impl FairnessWeights {
    pub fn new(lambda_s: f64, mode: Mode) -> Self {
        Self {
            lambda_s,
            lambda_t: 1.0,
            lambda_cls: 1.0,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_t", self.lambda_t),
            ("lambda_cls", self.lambda_cls),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Shared featurizer `φ`, classifier head `g`, the Gaussian grids used on
/// `φ`'s outputs, and a single trainable length-scale for the deep kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct FairModel {
    pub featurizer: Featurizer,
    pub classifier: Mlp,
    pub sensitive_grid: Vec<f64>,
    pub target_grid: Vec<f64>,
    /// `log σ` of the single deep kernel, stored 1×1 for the optimizer.
    pub log_sigma: Matrix,
}

impl FairModel {
    pub fn new<R: Rng>(input_dim: usize, featurizer_widths: &[usize], classifier_width: usize, rng: &mut R) -> Result<Self> {
        if featurizer_widths.is_empty() || featurizer_widths.contains(&0) || classifier_width == 0 || input_dim == 0 {
            return Err(Error::InvalidInput("layer widths must be positive".into()));
        }
        let featurizer = Mlp::new(input_dim, featurizer_widths, true, rng);
        let classifier = Mlp::new(featurizer.output_dim(), &[classifier_width, 2], false, rng);
        Ok(Self {
            featurizer,
            classifier,
            sensitive_grid: default_grid(1.0),
            target_grid: default_grid(1.0),
            log_sigma: Matrix::scalar(0.0),
        })
    }

    /// Centres both grids and the deep-kernel length-scale on the median
    /// heuristic of the current representation of `x`.
    pub fn init_length_scales(&mut self, x: &Matrix) -> Result<()> {
        let sigma = median_heuristic(&self.featurizer.apply(x)?);
        self.sensitive_grid = default_grid(sigma);
        self.target_grid = default_grid(sigma);
        self.log_sigma = Matrix::scalar(sigma.ln());
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.featurizer.input_dim()
    }

    pub fn representation_dim(&self) -> usize {
        self.featurizer.output_dim()
    }

    pub fn represent(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.featurizer.apply(x)?)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.classifier.apply(&self.featurizer.apply(x)?)?)
    }

    /// Arg-max class per row; ties go to class 0.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        let z = self.logits(x)?;
        Ok((0..z.rows()).map(|i| (z.get(i, 1) > z.get(i, 0)) as u8).collect())
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        Ok(BoundModel {
            featurizer: self.featurizer.bind(tape)?,
            classifier: self.classifier.bind(tape)?,
            log_sigma: tape.param(self.log_sigma.clone())?,
        })
    }

    /// Featurizer, classifier, then `log σ`.
    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.featurizer.parameters();
        p.extend(self.classifier.parameters());
        p.push(&self.log_sigma);
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.featurizer.parameters_mut();
        p.extend(self.classifier.parameters_mut());
        p.push(&mut self.log_sigma);
        p
    }

    pub fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        self.parameters().iter().map(|m| m.shape()).collect()
    }
}
