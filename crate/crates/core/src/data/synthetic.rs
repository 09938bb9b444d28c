//! Two-dimensional data where the target and sensitive attribute live on
//! orthogonal axes, so a representation can be both accurate and fair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DatasetSplit, SplitTag, Splits};
use crate::diff::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthogonalSpec {
    /// Half the distance between class means along each axis.
    pub shift: f64,
    pub noise: f64,
}

impl Default for OrthogonalSpec {
    fn default() -> Self {
        Self { shift: 1.5, noise: 0.5 }
    }
}

/// `x₀ = ±shift` by `t`, `x₁ = ±shift` by `s`, plus isotropic Gaussian noise;
/// `t` and `s` are independent fair coins.
pub fn orthogonal(n: usize, spec: OrthogonalSpec, tag: SplitTag, rng: &mut ChaCha8Rng) -> DatasetSplit {
    let mut x = Matrix::zeros(n, 2);
    let mut t = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let ti: u8 = rng.gen_range(0..2);
        let si: u8 = rng.gen_range(0..2);
        let sign = |b: u8| if b == 1 { 1.0 } else { -1.0 };
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        x.set(i, 0, sign(ti) * spec.shift + spec.noise * e0);
        x.set(i, 1, sign(si) * spec.shift + spec.noise * e1);
        t.push(Some(ti));
        s.push(Some(si));
    }
    DatasetSplit::new(x, t, s, tag).expect("labels are binary by construction")
}

pub fn orthogonal_splits(sizes: [usize; 3], spec: OrthogonalSpec, seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Splits {
        train: orthogonal(sizes[0], spec, SplitTag::Train, &mut rng),
        val: orthogonal(sizes[1], spec, SplitTag::Val, &mut rng),
        test: orthogonal(sizes[2], spec, SplitTag::Test, &mut rng),
        feature_names: vec!["x0".into(), "x1".into()],
        transfer_names: Vec::new(),
    }
}
