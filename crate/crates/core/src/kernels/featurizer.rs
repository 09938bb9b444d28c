use rand::Rng;

use crate::diff::{DiffError, Matrix, Tape, Var, LEAKY_SLOPE};

/// Fully connected layer with weights stored input-major (`in × out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// He-uniform weights for leaky ReLU, zero bias.
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * inputs as f64)).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            weight: Matrix::from_vec(inputs, outputs, data).expect("sized by construction"),
            bias: Matrix::zeros(1, outputs),
        }
    }
}

/// Multi-layer perceptron with leaky ReLU between layers.
///
/// Used both as the representation network φ (with `activate_output`, so the
/// representation is the post-activation output of its last layer) and as
/// the classifier head g (linear logits).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Linear>,
    activate_output: bool,
}

/// The representation network φ.
pub type Featurizer = Mlp;

/// Tape handles for the parameters of an [`Mlp`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Regroups a flat `[w0, b0, w1, b1, ..]` list.
    pub fn from_vars(flat: Vec<Var>) -> Self {
        Self {
            layers: flat.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
        }
    }

    /// Parameters in the same order as [`Mlp::parameters`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl Mlp {
    pub fn new<R: Rng>(input_dim: usize, widths: &[usize], activate_output: bool, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for &w in widths {
            layers.push(Linear::new(prev, w, rng));
            prev = w;
        }
        Self {
            input_dim,
            layers,
            activate_output,
        }
    }

    /// Rebuilds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Linear>, activate_output: bool) -> Result<Self, DiffError> {
        let input_dim = layers.first().map_or(0, |l| l.weight.rows());
        let mut prev = input_dim;
        for l in &layers {
            if l.weight.rows() != prev || l.bias.shape() != (1, l.weight.cols()) {
                return Err(DiffError::ShapeMismatch {
                    op: "mlp_layers",
                    lhs: l.weight.shape(),
                    rhs: l.bias.shape(),
                });
            }
            prev = l.weight.cols();
        }
        Ok(Self {
            input_dim,
            layers,
            activate_output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.weight.cols())
    }

    /// Output widths of every layer.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weight.cols()).collect()
    }

    pub fn activate_output(&self) -> bool {
        self.activate_output
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_shapes(&self) -> Vec<(usize, usize)> {
        self.parameters().iter().map(|p| p.shape()).collect()
    }

    /// Registers the parameters as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Result<MlpVars, DiffError> {
        self.bind_with(tape, true)
    }

    /// Registers the parameters as constants.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<MlpVars, DiffError> {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> Result<MlpVars, DiffError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (w, b) = if trainable {
                (tape.param(l.weight.clone())?, tape.param(l.bias.clone())?)
            } else {
                (tape.constant(l.weight.clone())?, tape.constant(l.bias.clone())?)
            };
            layers.push((w, b));
        }
        Ok(MlpVars { layers })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var, DiffError> {
        let (_, d) = tape.shape(x);
        if d != self.input_dim {
            return Err(DiffError::ShapeMismatch {
                op: "mlp_forward",
                lhs: tape.shape(x),
                rhs: (self.input_dim, self.output_dim()),
            });
        }
        let mut h = x;
        let last = vars.layers.len().saturating_sub(1);
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i < last || self.activate_output {
                h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }

    /// Forward pass outside of any tape.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix, DiffError> {
        if x.cols() != self.input_dim {
            return Err(DiffError::ShapeMismatch {
                op: "mlp_apply",
                lhs: x.shape(),
                rhs: (self.input_dim, self.output_dim()),
            });
        }
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.weight)?;
            let bias = l.bias.data();
            for r in 0..h.rows() {
                for (v, b) in h.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            if i < last || self.activate_output {
                h = h.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
            }
        }
        if !h.is_finite() {
            return Err(DiffError::NonFinite { op: "mlp_apply" });
        }
        Ok(h)
    }

    /// Copies values out of trained tape parameters.
    pub fn set_parameters(&mut self, values: &[Matrix]) -> Result<(), DiffError> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(DiffError::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                params.len(),
                values.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "set_parameters",
                    lhs: p.shape(),
                    rhs: v.shape(),
                });
            }
            **p = v.clone();
        }
        Ok(())
    }
}
