use super::{DiffError, Matrix, Tape, Var};

/// Outcome of comparing tape gradients against central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest elementwise relative error over all parameters.
    pub max_rel_error: f64,
    pub analytic: Vec<Matrix>,
    pub numeric: Vec<Matrix>,
}

/// Magnitude below which gradients are compared on an absolute scale.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, GRADIENT_FLOOR)`. Central differences carry
/// roundoff near `1e-10` for unit-scale losses, so structurally zero gradients
/// only compare meaningfully against a floor well above that.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(GRADIENT_FLOOR)
}

/// Checks the gradient of `loss_fn` at `params` with central differences.
///
/// `loss_fn` receives a fresh tape and one trainable leaf per parameter and
/// must return the 1×1 loss node.
pub fn grad_check<F>(loss_fn: F, params: &[Matrix], eps: f64) -> Result<GradCheck, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    if !(eps > 0.0) {
        return Err(DiffError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let eval = |ps: &[Matrix]| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let vars = ps
            .iter()
            .map(|p| tape.param(p.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = loss_fn(&mut tape, &vars)?;
        let v = tape.scalar(loss)?;
        if !v.is_finite() {
            return Err(DiffError::NonFinite { op: "grad_check loss" });
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = loss_fn(&mut tape, &vars)?;
    if !tape.scalar(loss)?.is_finite() {
        return Err(DiffError::NonFinite { op: "grad_check loss" });
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();

    let mut numeric = Vec::with_capacity(params.len());
    let mut work: Vec<Matrix> = params.to_vec();
    let mut max_rel_error: f64 = 0.0;
    for pi in 0..params.len() {
        let mut num = Matrix::zeros(params[pi].rows(), params[pi].cols());
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let d = (up - down) / (2.0 * eps);
            num.data_mut()[k] = d;
            max_rel_error = max_rel_error.max(relative_error(analytic[pi].data()[k], d));
        }
        numeric.push(num);
    }
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}
