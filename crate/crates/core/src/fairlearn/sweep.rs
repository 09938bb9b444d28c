use rayon::prelude::*;

use super::{train, FairModel, FairnessWeights, History, TrainConfig};
use crate::data::Splits;
use crate::evaluation::{audit_model, evaluate_model, AuditConfig, AuditReport, FairnessReport};
use crate::{Error, Result};

pub const DEFAULT_LAMBDAS: [f64; 7] = [0.0, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0];

/// One trained and evaluated `(λ_s, seed)` cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub lambda_s: f64,
    pub seed: u64,
    pub report: FairnessReport,
    pub audit: Option<AuditReport>,
    pub history: History,
}

/// Trains one model at `weights` and scores it on `splits.test`.
pub fn sweep_run(
    splits: &Splits,
    weights: &FairnessWeights,
    cfg: &TrainConfig,
    audit: Option<&AuditConfig>,
    seed: u64,
) -> Result<(FairModel, SweepRun)> {
    let (model, history) = train(splits, weights, cfg, seed)?;
    let report = evaluate_model(&model, &splits.test)?;
    let audit = match audit {
        Some(a) => Some(audit_model(&model, &splits.test, a, seed)?),
        None => None,
    };
    let run = SweepRun {
        lambda_s: weights.lambda_s,
        seed,
        report,
        audit,
        history,
    };
    Ok((model, run))
}

/// Runs every `(λ_s, seed)` pair on a pool of `workers` threads and returns
/// them λ-major in input order. `on_run` sees each finished run, possibly
/// from several threads at once.
#[allow(clippy::too_many_arguments)]
pub fn sweep<F>(
    splits: &Splits,
    lambdas: &[f64],
    seeds: &[u64],
    weights: &FairnessWeights,
    cfg: &TrainConfig,
    audit: Option<&AuditConfig>,
    workers: usize,
    on_run: F,
) -> Result<Vec<SweepRun>>
where
    F: Fn(&FairModel, &SweepRun) -> Result<()> + Sync,
{
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one lambda_s and one seed".into()));
    }
    let jobs: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(lambda_s, seed)| {
                let w = FairnessWeights { lambda_s, ..*weights };
                let (model, run) = sweep_run(splits, &w, cfg, audit, seed)?;
                on_run(&model, &run)?;
                Ok(run)
            })
            .collect()
    })
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub lambda_s: f64,
    pub runs: usize,
    pub accuracy: Summary,
    pub dp: Summary,
    pub eo: Summary,
    pub audit_accuracy: Option<Summary>,
    pub mmd_power: Option<Summary>,
}

/// Per-λ_s summaries in order of first appearance.
pub fn aggregate(runs: &[SweepRun]) -> Vec<Aggregate> {
    let mut lambdas: Vec<f64> = Vec::new();
    for r in runs {
        if !lambdas.iter().any(|&l| l.to_bits() == r.lambda_s.to_bits()) {
            lambdas.push(r.lambda_s);
        }
    }
    lambdas
        .into_iter()
        .map(|l| {
            let group: Vec<&SweepRun> = runs.iter().filter(|r| r.lambda_s.to_bits() == l.to_bits()).collect();
            let col = |f: &dyn Fn(&SweepRun) -> f64| Summary::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let audits: Option<Vec<&AuditReport>> = group.iter().map(|r| r.audit.as_ref()).collect();
            Aggregate {
                lambda_s: l,
                runs: group.len(),
                accuracy: col(&|r| r.report.accuracy),
                dp: col(&|r| r.report.dp),
                eo: col(&|r| r.report.eo),
                audit_accuracy: audits
                    .as_ref()
                    .map(|a| Summary::of(&a.iter().map(|x| x.classifier_accuracy).collect::<Vec<_>>())),
                mmd_power: audits.map(|a| Summary::of(&a.iter().map(|x| x.mmd_power).collect::<Vec<_>>())),
            }
        })
        .collect()
}
