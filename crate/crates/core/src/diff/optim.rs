use super::{DiffError, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Adadelta,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Some(Self::Adam),
            "adadelta" => Some(Self::Adadelta),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::Adadelta => "adadelta",
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADADELTA_RHO: f64 = 0.9;
const ADADELTA_EPS: f64 = 1e-6;

/// Per-parameter accumulators for Adam or Adadelta.
///
/// For Adam, `first`/`second` hold the biased first and second moments. For
/// Adadelta they hold the running averages of squared gradients and squared
/// updates.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            kind,
            learning_rate,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<(), DiffError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(DiffError::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), acc) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != acc.shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam => self.adam(params, grads),
            OptimizerKind::Adadelta => self.adadelta(params, grads),
        }
        Ok(())
    }

    fn adam(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.learning_rate;
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }

    fn adadelta(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        let lr = self.learning_rate;
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let sq_grad = self.first[i].data_mut();
            let sq_delta = self.second[i].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                sq_grad[k] = ADADELTA_RHO * sq_grad[k] + (1.0 - ADADELTA_RHO) * g[k] * g[k];
                let delta = (sq_delta[k] + ADADELTA_EPS).sqrt() / (sq_grad[k] + ADADELTA_EPS).sqrt() * g[k];
                sq_delta[k] = ADADELTA_RHO * sq_delta[k] + (1.0 - ADADELTA_RHO) * delta * delta;
                *w -= lr * delta;
            }
        }
    }
}

/// One Adam update on a standalone parameter list.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut OptimizerState) -> Result<(), DiffError> {
    debug_assert_eq!(state.kind, OptimizerKind::Adam);
    state.step(params, grads)
}

/// One Adadelta update on a standalone parameter list.
pub fn adadelta_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut OptimizerState) -> Result<(), DiffError> {
    debug_assert_eq!(state.kind, OptimizerKind::Adadelta);
    state.step(params, grads)
}
