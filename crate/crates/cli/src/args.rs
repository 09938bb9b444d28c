use std::path::PathBuf;

use clap::{Arg, ArgMatches, Args, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::KEYS;

#[derive(Debug, Parser)]
#[command(name = "mmdbfair", version, about = "Fair representation learning with block MMD test power")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write the model file, history and test report.
    Train(RunArgs),
    /// Train over a grid of lambda_s values and seeds.
    Sweep(RunArgs),
    /// Run the sensitive-attribute audits on a saved model.
    Audit {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Chi-squared independence of target and sensitive labels per split.
    Chi2(RunArgs),
    /// Permutation MMD two-sample test between two numeric CSV files.
    Test(TestArgs),
    /// Write the learned representations of one split as CSV.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Output file; defaults to `<out_dir>/embeddings_<split>.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Key-value config file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// One `--key value` flag per config key, in [`KEYS`] order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides(pub Vec<(String, String)>);

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        Ok(Self(
            KEYS.iter()
                .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
                .collect(),
        ))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        KEYS.iter().fold(cmd, |cmd, &k| {
            let flag = k.replace('_', "-");
            let mut arg = Arg::new(k)
                .long(flag.clone())
                .value_name("VALUE")
                .help(format!("Override config key `{k}`"));
            if flag != k {
                arg = arg.alias(k);
            }
            cmd.arg(arg)
        })
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Linear,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel: KernelArg,
    /// Gaussian length-scale; defaults to the median heuristic.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 200)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
