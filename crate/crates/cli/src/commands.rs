use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mmdbfair::data::synthetic::{orthogonal_splits, OrthogonalSpec};
use mmdbfair::data::{
    chi2_independence, load_tabular, read_cache, read_numeric_csv, write_cache, Attribute, DatasetSplit, SplitTag,
};
use mmdbfair::estimators::two_sample_test;
use mmdbfair::evaluation::{audit_model, evaluate_model, export_embeddings, AuditConfig};
use mmdbfair::fairlearn::{
    aggregate, load_model, save_model, smallest_group, sweep, train, FairModel, History, Summary, SweepRun,
};
use mmdbfair::kernels::median_heuristic;
use mmdbfair::{AuditReport, Error, FairnessReport, KernelSpec, Matrix, PowerConfig, Result, Schema, Splits, TestResult};

use crate::config::{DatasetSource, RunConfig};

pub const MODEL_FILE: &str = "model.mbfm";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const AUDIT_FILE: &str = "audit.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const AGGREGATE_FILE: &str = "sweep_aggregate.csv";
pub const CHI2_FILE: &str = "chi2.csv";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cache_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
    [SplitTag::Train, SplitTag::Val, SplitTag::Test].map(|t| dir.join(format!("{name}.{}.mbfd", t.name())))
}

fn load_schema_splits(path: &Path, cfg: &RunConfig) -> Result<Splits> {
    let mut schema = Schema::from_file(path)?;
    if let Some(dir) = &cfg.data_dir {
        schema = schema.with_data_dir(dir);
    }
    let Some(cache) = &cfg.cache_dir else {
        return load_tabular(&schema);
    };
    let paths = cache_paths(cache, &schema.name);
    if paths.iter().all(|p| p.exists()) {
        info!("reading cached splits from {}", cache.display());
        let [train, val, test] = [
            (&paths[0], SplitTag::Train),
            (&paths[1], SplitTag::Val),
            (&paths[2], SplitTag::Test),
        ]
        .map(|(p, t)| read_cache(p, t));
        let train = train?;
        let feature_names = (0..train.dim()).map(|j| format!("f{j}")).collect();
        return Ok(Splits {
            train,
            val: val?,
            test: test?,
            feature_names,
            transfer_names: Vec::new(),
        });
    }
    let splits = load_tabular(&schema)?;
    std::fs::create_dir_all(cache)?;
    for (split, p) in splits.iter().zip(&paths) {
        write_cache(p, split)?;
    }
    Ok(splits)
}

/// Loads the configured dataset.
pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    match &cfg.dataset {
        Some(DatasetSource::Schema(path)) => load_schema_splits(path, cfg),
        Some(DatasetSource::Synthetic { sizes, seed }) => Ok(orthogonal_splits(*sizes, OrthogonalSpec::default(), *seed)),
        None => Err(Error::InvalidInput("no dataset configured: set `schema` or `synthetic`".into())),
    }
}

/// Test-power settings with unset fields derived from the training split.
pub fn power_config(cfg: &RunConfig, splits: &Splits) -> Result<PowerConfig> {
    let m = match cfg.power.test_size {
        Some(m) => m,
        None => smallest_group(&splits.train, cfg.weights.mode)?,
    };
    let mut p = PowerConfig::for_test_size(m);
    p.alpha = cfg.power.alpha;
    p.n_permutations = cfg.power.permutations;
    p.lambda = cfg.power.lambda;
    if let Some(b) = cfg.power.blocks {
        p.blocks = b;
    }
    if let Some(b) = cfg.power.block_size {
        p.block_size = b;
    }
    p.validate()?;
    Ok(p)
}

pub fn audit_config(cfg: &RunConfig) -> AuditConfig {
    AuditConfig {
        alpha: cfg.power.alpha,
        n_permutations: cfg.power.permutations,
        ..cfg.audit.clone()
    }
}

fn prepare(cfg: &RunConfig) -> Result<(Splits, mmdbfair::TrainConfig)> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.power = Some(power_config(cfg, &splits)?);
    Ok((splits, train_cfg))
}

pub const HISTORY_HEADER: &[&str] = &["epoch", "l_cls", "rho_s", "rho_t", "train_objective", "val_objective"];
pub const REPORT_HEADER: &[&str] = &["lambda_s", "seed", "accuracy", "dp", "eo", "eo_t0", "eo_t1", "samples"];
pub const AUDIT_HEADER: &[&str] = &[
    "seed",
    "sensitive_audit_acc",
    "majority_baseline",
    "mmd_audit_power",
    "rejections",
    "trials",
];
pub const SWEEP_HEADER: &[&str] = &["lambda_s", "seed", "accuracy", "dp", "eo", "sensitive_audit_acc", "mmd_audit_power"];
pub const AGGREGATE_HEADER: &[&str] = &[
    "lambda_s",
    "runs",
    "accuracy_mean",
    "accuracy_std",
    "dp_mean",
    "dp_std",
    "eo_mean",
    "eo_std",
    "sensitive_audit_acc_mean",
    "sensitive_audit_acc_std",
    "mmd_audit_power_mean",
    "mmd_audit_power_std",
];
pub const CHI2_HEADER: &[&str] = &["split", "n", "statistic", "p_value"];

pub fn write_history(path: &Path, history: &History) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                num(e.classification),
                num(e.sensitive_power),
                num(e.target_power),
                num(e.train_objective),
                num(e.val_objective),
            ]
        })
        .collect();
    write_csv(path, HISTORY_HEADER, &rows)
}

pub fn write_report(path: &Path, lambda_s: f64, seed: u64, r: &FairnessReport) -> Result<()> {
    let row = vec![
        num(lambda_s),
        seed.to_string(),
        num(r.accuracy),
        num(r.dp),
        num(r.eo),
        opt_num(r.eo_per_class[0]),
        opt_num(r.eo_per_class[1]),
        r.samples.to_string(),
    ];
    write_csv(path, REPORT_HEADER, &[row])
}

pub fn write_audit(path: &Path, seed: u64, a: &AuditReport) -> Result<()> {
    let row = vec![
        seed.to_string(),
        num(a.classifier_accuracy),
        num(a.majority_baseline),
        num(a.mmd_power),
        a.rejections.to_string(),
        a.trials.to_string(),
    ];
    write_csv(path, AUDIT_HEADER, &[row])
}

pub struct TrainOutput {
    pub model: FairModel,
    pub history: History,
    pub report: FairnessReport,
}

/// Trains one model and writes the model file, history and test report into
/// the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let (splits, train_cfg) = prepare(cfg)?;
    let seed = cfg.seed();
    info!(
        "training {} model, lambda_s = {}, seed = {seed}",
        cfg.weights.mode.name(),
        cfg.weights.lambda_s
    );
    let (model, history) = train(&splits, &cfg.weights, &train_cfg, seed)?;
    let report = evaluate_model(&model, &splits.test)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    save_model(&cfg.out_dir.join(MODEL_FILE), &model)?;
    write_history(&cfg.out_dir.join(HISTORY_FILE), &history)?;
    write_report(&cfg.out_dir.join(REPORT_FILE), cfg.weights.lambda_s, seed, &report)?;
    info!(
        "accuracy {:.4}, dp {:.4}, eo {:.4}",
        report.accuracy, report.dp, report.eo
    );
    Ok(TrainOutput { model, history, report })
}

/// Directory of one sweep cell.
pub fn run_dir(out_dir: &Path, lambda_s: f64, seed: u64) -> PathBuf {
    out_dir.join("runs").join(format!("lambda_{lambda_s}_seed_{seed}"))
}

/// Trains every `(λ_s, seed)` cell, writing each into its own run directory,
/// then the detail and aggregate CSVs.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRun>> {
    let (splits, train_cfg) = prepare(cfg)?;
    let audit_cfg = audit_config(cfg);
    let audit = cfg.run_audit.then_some(&audit_cfg);
    info!(
        "sweeping {} lambda values x {} seeds on {} workers",
        cfg.lambdas.len(),
        cfg.seeds.len(),
        cfg.workers
    );
    let runs = sweep(
        &splits,
        &cfg.lambdas,
        &cfg.seeds,
        &cfg.weights,
        &train_cfg,
        audit,
        cfg.workers,
        |model, run| {
            let dir = run_dir(&cfg.out_dir, run.lambda_s, run.seed);
            std::fs::create_dir_all(&dir)?;
            save_model(&dir.join(MODEL_FILE), model)?;
            write_history(&dir.join(HISTORY_FILE), &run.history)?;
            write_report(&dir.join(REPORT_FILE), run.lambda_s, run.seed, &run.report)?;
            if let Some(a) = &run.audit {
                write_audit(&dir.join(AUDIT_FILE), run.seed, a)?;
            }
            info!(
                "lambda_s = {}, seed = {}: accuracy {:.4}",
                run.lambda_s, run.seed, run.report.accuracy
            );
            Ok(())
        },
    )?;
    let detail: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                num(r.lambda_s),
                r.seed.to_string(),
                num(r.report.accuracy),
                num(r.report.dp),
                num(r.report.eo),
                opt_num(r.audit.as_ref().map(|a| a.classifier_accuracy)),
                opt_num(r.audit.as_ref().map(|a| a.mmd_power)),
            ]
        })
        .collect();
    write_csv(&cfg.out_dir.join(SWEEP_FILE), SWEEP_HEADER, &detail)?;
    let pair = |s: Option<Summary>| match s {
        Some(s) => [num(s.mean), num(s.std)],
        None => [String::new(), String::new()],
    };
    let agg: Vec<Vec<String>> = aggregate(&runs)
        .into_iter()
        .map(|a| {
            let mut row = vec![num(a.lambda_s), a.runs.to_string()];
            for s in [Some(a.accuracy), Some(a.dp), Some(a.eo), a.audit_accuracy, a.mmd_power] {
                row.extend(pair(s));
            }
            row
        })
        .collect();
    write_csv(&cfg.out_dir.join(AGGREGATE_FILE), AGGREGATE_HEADER, &agg)?;
    Ok(runs)
}

fn check_model_dim(model: &FairModel, splits: &Splits) -> Result<()> {
    if model.input_dim() != splits.test.dim() {
        return Err(Error::InvalidInput(format!(
            "model expects {} input features but the dataset encodes {}",
            model.input_dim(),
            splits.test.dim()
        )));
    }
    Ok(())
}

/// Runs both sensitive audits on a saved model's test representations.
pub fn cmd_audit(cfg: &RunConfig, model_path: &Path) -> Result<AuditReport> {
    cfg.validate()?;
    let model = load_model(model_path)?;
    let splits = load_splits(cfg)?;
    check_model_dim(&model, &splits)?;
    let seed = cfg.seed();
    let report = audit_model(&model, &splits.test, &audit_config(cfg), seed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_audit(&cfg.out_dir.join(AUDIT_FILE), seed, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chi2Row {
    pub split: SplitTag,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

pub fn chi2_rows(splits: &Splits) -> Result<Vec<Chi2Row>> {
    splits
        .iter()
        .map(|split| {
            let sub = split.select(&split.fully_labeled());
            let t = sub.complete_labels(Attribute::Target)?;
            let s = sub.complete_labels(Attribute::Sensitive)?;
            let (statistic, p_value) = chi2_independence(&t, &s)?;
            Ok(Chi2Row {
                split: split.tag,
                n: t.len(),
                statistic,
                p_value,
            })
        })
        .collect()
}

/// χ² independence of target and sensitive labels per split.
pub fn cmd_chi2(cfg: &RunConfig) -> Result<Vec<Chi2Row>> {
    let splits = load_splits(cfg)?;
    let rows = chi2_rows(&splits)?;
    let text: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.split.name().to_string(), r.n.to_string(), num(r.statistic), num(r.p_value)])
        .collect();
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(CHI2_FILE), CHI2_HEADER, &text)?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestKernel {
    Gaussian { sigma: Option<f64> },
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestOptions {
    pub kernel: TestKernel,
    pub alpha: f64,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            kernel: TestKernel::Gaussian { sigma: None },
            alpha: mmdbfair::estimators::DEFAULT_ALPHA,
            permutations: mmdbfair::estimators::DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

/// Permutation two-sample test between the rows of two numeric CSV files.
/// Unequal sample sizes are truncated to the smaller one.
pub fn cmd_test(a: &Path, b: &Path, opts: &TestOptions) -> Result<TestResult> {
    let mut x = read_numeric_csv(a)?;
    let mut y = read_numeric_csv(b)?;
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            found: y.cols(),
        });
    }
    let n = x.rows().min(y.rows());
    if x.rows() != y.rows() {
        warn!("sample sizes differ ({} vs {}); using the first {n} rows of each", x.rows(), y.rows());
        let idx: Vec<usize> = (0..n).collect();
        x = x.select_rows(&idx);
        y = y.select_rows(&idx);
    }
    let kernel = match opts.kernel {
        TestKernel::Linear => KernelSpec::Linear,
        TestKernel::Gaussian { sigma: Some(s) } => KernelSpec::gaussian(s)?,
        TestKernel::Gaussian { sigma: None } => KernelSpec::gaussian(median_heuristic(&Matrix::vstack(&[&x, &y])?))?,
    };
    let mut cfg = PowerConfig::for_test_size(n);
    cfg.alpha = opts.alpha;
    cfg.n_permutations = opts.permutations;
    two_sample_test(&x, &y, &kernel, &cfg, opts.seed)
}

pub fn format_test_result(r: &TestResult) -> String {
    let mut s = String::new();
    writeln!(s, "statistic: {}", num(r.statistic)).expect("string write");
    writeln!(s, "threshold: {}", num(r.threshold)).expect("string write");
    writeln!(s, "decision: {}", if r.reject { "reject" } else { "fail-to-reject" }).expect("string write");
    writeln!(s, "estimated_power: {}", num(r.estimated_power)).expect("string write");
    s
}

/// Writes representations of one split under a saved model.
pub fn cmd_export_embeddings(cfg: &RunConfig, model_path: &Path, split: SplitTag, output: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let splits = load_splits(cfg)?;
    check_model_dim(&model, &splits)?;
    let part: &DatasetSplit = match split {
        SplitTag::Train => &splits.train,
        SplitTag::Val => &splits.val,
        SplitTag::Test => &splits.test,
    };
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    export_embeddings(&model, part, output)
}
