use std::path::{Path, PathBuf};

use mmdbfair::data::{parse_key_values, Entry};
use mmdbfair::evaluation::AuditConfig;
use mmdbfair::fairlearn::{FairnessWeights, Mode, PowerEstimator, TrainConfig};
use mmdbfair::{Error, OptimizerKind, Result};

/// Where a run's data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Schema(PathBuf),
    /// Two-dimensional data with orthogonal target and sensitive axes.
    Synthetic { sizes: [usize; 3], seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Adult,
    Compas,
    Health,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adult" => Some(Self::Adult),
            "compas" => Some(Self::Compas),
            "health" => Some(Self::Health),
            _ => None,
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Self::Adult => TrainConfig::adult(),
            Self::Compas => TrainConfig::compas(),
            Self::Health => TrainConfig::health(),
        }
    }
}

/// Test-power settings; unset fields derive from the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSettings {
    pub alpha: f64,
    pub test_size: Option<usize>,
    pub blocks: Option<usize>,
    pub block_size: Option<usize>,
    pub lambda: Option<f64>,
    pub permutations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<DatasetSource>,
    pub data_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub weights: FairnessWeights,
    pub lambdas: Vec<f64>,
    pub power: PowerSettings,
    pub train: TrainConfig,
    pub audit: AuditConfig,
    pub run_audit: bool,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            data_dir: None,
            cache_dir: None,
            weights: FairnessWeights::new(0.0, Mode::Dp),
            lambdas: mmdbfair::fairlearn::DEFAULT_LAMBDAS.to_vec(),
            power: PowerSettings {
                alpha: mmdbfair::estimators::DEFAULT_ALPHA,
                test_size: None,
                blocks: None,
                block_size: None,
                lambda: None,
                permutations: mmdbfair::estimators::DEFAULT_PERMUTATIONS,
            },
            train: TrainConfig::default(),
            audit: AuditConfig::default(),
            run_audit: true,
            seeds: (0..10).collect(),
            workers: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Keys accepted in config files and as `--key value` flags.
pub const KEYS: &[&str] = &[
    "preset",
    "schema",
    "synthetic",
    "synthetic_seed",
    "data_dir",
    "cache_dir",
    "mode",
    "lambda_s",
    "lambda_t",
    "lambda_cls",
    "lambdas",
    "alpha",
    "test_size",
    "blocks",
    "block_size",
    "power_lambda",
    "permutations",
    "estimator",
    "optimizer",
    "learning_rate",
    "featurizer",
    "classifier_width",
    "max_epochs",
    "patience",
    "batch_size",
    "steps_per_epoch",
    "val_batches",
    "seed",
    "seeds",
    "workers",
    "out_dir",
    "audit",
    "audit_trials",
    "audit_kernel_epochs",
    "audit_classifier_epochs",
];

struct Ctx<'a> {
    origin: &'a str,
    base: &'a Path,
}

impl Ctx<'_> {
    fn err(&self, e: &Entry, message: String) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line: e.line,
            message,
        }
    }

    fn num<T: std::str::FromStr>(&self, e: &Entry) -> Result<T> {
        e.value
            .parse()
            .map_err(|_| self.err(e, format!("`{}` expects a number, got `{}`", e.key, e.value)))
    }

    fn list<T: std::str::FromStr>(&self, e: &Entry) -> Result<Vec<T>> {
        let out = e
            .value
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse()
                    .map_err(|_| self.err(e, format!("`{}` expects a list of numbers, got `{}`", e.key, e.value)))
            })
            .collect::<Result<Vec<T>>>()?;
        if out.is_empty() {
            return Err(self.err(e, format!("`{}` needs at least one value", e.key)));
        }
        Ok(out)
    }

    fn flag(&self, e: &Entry) -> Result<bool> {
        match e.value.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.err(e, format!("`{}` expects true or false, got `{}`", e.key, e.value))),
        }
    }

    fn path(&self, e: &Entry) -> PathBuf {
        let p = PathBuf::from(&e.value);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string(), path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    /// Applies `key = value` text; relative paths resolve against `base`.
    pub fn apply_text(&mut self, text: &str, origin: &str, base: &Path) -> Result<()> {
        let entries = parse_key_values(text, origin)?;
        self.apply(&entries, &Ctx { origin, base })
    }

    /// Applies `(key, value)` overrides; relative paths resolve against the
    /// working directory.
    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let entries: Vec<Entry> = pairs
            .iter()
            .enumerate()
            .map(|(i, (k, v))| Entry {
                key: k.replace('-', "_"),
                value: v.trim().to_string(),
                line: i + 1,
            })
            .collect();
        self.apply(
            &entries,
            &Ctx {
                origin: "command line",
                base: Path::new("."),
            },
        )
    }

    fn apply(&mut self, entries: &[Entry], ctx: &Ctx) -> Result<()> {
        // Presets replace the architecture first so later keys refine it.
        for e in entries.iter().filter(|e| e.key == "preset") {
            let preset = Preset::parse(&e.value)
                .ok_or_else(|| ctx.err(e, format!("unknown preset `{}`", e.value)))?;
            self.train = TrainConfig {
                power: self.train.power.clone(),
                estimator: self.train.estimator,
                ..preset.train_config()
            };
        }
        for e in entries.iter().filter(|e| e.key != "preset") {
            self.apply_one(e, ctx)?;
        }
        Ok(())
    }

    fn apply_one(&mut self, e: &Entry, ctx: &Ctx) -> Result<()> {
        match e.key.as_str() {
            "schema" => self.dataset = Some(DatasetSource::Schema(ctx.path(e))),
            "synthetic" => {
                let sizes: Vec<usize> = ctx.list(e)?;
                let sizes: [usize; 3] = sizes
                    .try_into()
                    .map_err(|_| ctx.err(e, "`synthetic` expects train, val, test sizes".into()))?;
                let seed = match &self.dataset {
                    Some(DatasetSource::Synthetic { seed, .. }) => *seed,
                    _ => 0,
                };
                self.dataset = Some(DatasetSource::Synthetic { sizes, seed });
            }
            "synthetic_seed" => match &mut self.dataset {
                Some(DatasetSource::Synthetic { seed, .. }) => *seed = ctx.num(e)?,
                _ => return Err(ctx.err(e, "`synthetic_seed` needs `synthetic` first".into())),
            },
            "data_dir" => self.data_dir = Some(ctx.path(e)),
            "cache_dir" => self.cache_dir = Some(ctx.path(e)),
            "mode" => {
                self.weights.mode =
                    Mode::parse(&e.value).ok_or_else(|| ctx.err(e, format!("mode must be dp or eo, got `{}`", e.value)))?
            }
            "lambda_s" => self.weights.lambda_s = ctx.num(e)?,
            "lambda_t" => self.weights.lambda_t = ctx.num(e)?,
            "lambda_cls" => self.weights.lambda_cls = ctx.num(e)?,
            "lambdas" => self.lambdas = ctx.list(e)?,
            "alpha" => self.power.alpha = ctx.num(e)?,
            "test_size" => self.power.test_size = Some(ctx.num(e)?),
            "blocks" => self.power.blocks = Some(ctx.num(e)?),
            "block_size" => self.power.block_size = Some(ctx.num(e)?),
            "power_lambda" => self.power.lambda = Some(ctx.num(e)?),
            "permutations" => self.power.permutations = ctx.num(e)?,
            "estimator" => {
                self.train.estimator = match e.value.as_str() {
                    "block" => PowerEstimator::Block,
                    "permutation" => PowerEstimator::Permutation { split: false, seed: 0 },
                    "permutation_split" => PowerEstimator::Permutation { split: true, seed: 0 },
                    other => {
                        return Err(ctx.err(
                            e,
                            format!("estimator must be block, permutation or permutation_split, got `{other}`"),
                        ))
                    }
                }
            }
            "optimizer" => {
                self.train.optimizer = OptimizerKind::parse(&e.value)
                    .ok_or_else(|| ctx.err(e, format!("optimizer must be adam or adadelta, got `{}`", e.value)))?
            }
            "learning_rate" => self.train.learning_rate = ctx.num(e)?,
            "featurizer" => self.train.featurizer_widths = ctx.list(e)?,
            "classifier_width" => self.train.classifier_width = ctx.num(e)?,
            "max_epochs" => self.train.max_epochs = ctx.num(e)?,
            "patience" => self.train.patience = ctx.num(e)?,
            "batch_size" => {
                let b: usize = ctx.num(e)?;
                if b < 4 || !b.is_multiple_of(2) {
                    return Err(ctx.err(e, format!("batch_size must be an even number >= 4, got {b}")));
                }
                self.train.batch_per_group = b / 2;
            }
            "steps_per_epoch" => self.train.steps_per_epoch = Some(ctx.num(e)?),
            "val_batches" => self.train.val_batches = ctx.num(e)?,
            "seed" => self.seeds = vec![ctx.num(e)?],
            "seeds" => self.seeds = ctx.list(e)?,
            "workers" => self.workers = ctx.num(e)?,
            "out_dir" => self.out_dir = ctx.path(e),
            "audit" => self.run_audit = ctx.flag(e)?,
            "audit_trials" => self.audit.trials = ctx.num(e)?,
            "audit_kernel_epochs" => self.audit.kernel_epochs = ctx.num(e)?,
            "audit_classifier_epochs" => self.audit.classifier_epochs = ctx.num(e)?,
            other => return Err(ctx.err(e, format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("at least one seed is required".into()));
        }
        if self.lambdas.is_empty() {
            return Err(Error::InvalidInput("at least one lambda_s is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidInput("workers must be positive".into()));
        }
        Ok(())
    }
}
