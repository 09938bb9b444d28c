use rand::seq::index::sample;
use rand::Rng;

use super::Mode;
use crate::data::{conditional_group_indices, group_indices, Attribute, DatasetSplit, GroupPair};
use crate::diff::Matrix;
use crate::{Error, Result};

/// Equal-size samples from the two sides of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub p: Matrix,
    pub q: Matrix,
}

impl PairBatch {
    pub fn n(&self) -> usize {
        self.p.rows()
    }
}

/// One training step's samples.
///
/// `target` compares `t = 0` with `t = 1`. In DP mode `sensitive` holds the
/// single marginal pair `s = 0` vs `s = 1`; in EO mode it holds one pair per
/// target class.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub target: PairBatch,
    pub sensitive: Vec<PairBatch>,
}

/// Draws [`Batch`]es from the group index sets of one split.
#[derive(Clone, Debug)]
pub struct BatchSampler<'a> {
    split: &'a DatasetSplit,
    mode: Mode,
    per_group: usize,
    target: GroupPair,
    sensitive: Vec<GroupPair>,
}

fn draw<R: Rng>(pool: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() >= k {
        sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    }
}

impl<'a> BatchSampler<'a> {
    /// Fails when any group the mode needs is empty.
    pub fn new(split: &'a DatasetSplit, mode: Mode, per_group: usize) -> Result<Self> {
        if per_group < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 samples per group, got {per_group}"
            )));
        }
        let target = group_indices(split, Attribute::Target)?;
        let sensitive = match mode {
            Mode::Dp => vec![group_indices(split, Attribute::Sensitive)?],
            Mode::Eo => conditional_group_indices(split)?.to_vec(),
        };
        Ok(Self {
            split,
            mode,
            per_group,
            target,
            sensitive,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn per_group(&self) -> usize {
        self.per_group
    }

    /// Size of the smallest group the sampler draws from.
    pub fn smallest_group(&self) -> usize {
        std::iter::once(&self.target)
            .chain(&self.sensitive)
            .flat_map(|g| [g.p.len(), g.q.len()])
            .min()
            .unwrap_or(0)
    }

    fn pair<R: Rng>(&self, g: &GroupPair, rng: &mut R) -> PairBatch {
        let x = &self.split.features;
        PairBatch {
            p: x.select_rows(&draw(&g.p, self.per_group, rng)),
            q: x.select_rows(&draw(&g.q, self.per_group, rng)),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Batch {
        let target = self.pair(&self.target, rng);
        let sensitive = self.sensitive.iter().map(|g| self.pair(g, rng)).collect();
        Batch { target, sensitive }
    }
}
