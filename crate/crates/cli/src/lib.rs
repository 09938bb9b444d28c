//! Command-line driver: configuration files, training runs, sweeps, audits,
//! diagnostics and the two-sample test.

pub mod args;
pub mod commands;
pub mod config;

use std::path::Path;

use mmdbfair::data::SplitTag;
use mmdbfair::Result;

use args::{Cli, Command, KernelArg, RunArgs, SplitArg};
use commands::{TestKernel, TestOptions};
use config::RunConfig;

/// Process exit status of a finished command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// `test` rejected the null hypothesis.
    Reject,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Self::Success => 0,
            Self::Reject => 1,
        }
    }
}

pub fn resolve_config(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&run.overrides.0)?;
    Ok(cfg)
}

fn split_tag(s: SplitArg) -> SplitTag {
    match s {
        SplitArg::Train => SplitTag::Train,
        SplitArg::Val => SplitTag::Val,
        SplitArg::Test => SplitTag::Test,
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Train(run) => {
            commands::cmd_train(&resolve_config(run)?)?;
        }
        Command::Sweep(run) => {
            commands::cmd_sweep(&resolve_config(run)?)?;
        }
        Command::Audit { model, run } => {
            let r = commands::cmd_audit(&resolve_config(run)?, model)?;
            println!(
                "sensitive_audit_acc: {:.16e}\nmajority_baseline: {:.16e}\nmmd_audit_power: {:.16e}",
                r.classifier_accuracy, r.majority_baseline, r.mmd_power
            );
        }
        Command::Chi2(run) => {
            for r in commands::cmd_chi2(&resolve_config(run)?)? {
                println!("{}: n = {}, chi2 = {:.16e}, p = {:.16e}", r.split.name(), r.n, r.statistic, r.p_value);
            }
        }
        Command::Test(t) => {
            let opts = TestOptions {
                kernel: match t.kernel {
                    KernelArg::Gaussian => TestKernel::Gaussian { sigma: t.sigma },
                    KernelArg::Linear => TestKernel::Linear,
                },
                alpha: t.alpha,
                permutations: t.permutations,
                seed: t.seed,
            };
            let r = commands::cmd_test(&t.a, &t.b, &opts)?;
            print!("{}", commands::format_test_result(&r));
            if r.reject {
                return Ok(Outcome::Reject);
            }
        }
        Command::ExportEmbeddings {
            model,
            split,
            output,
            run,
        } => {
            let cfg = resolve_config(run)?;
            let tag = split_tag(*split);
            let default = cfg.out_dir.join(format!("embeddings_{}.csv", tag.name()));
            let path: &Path = output.as_deref().unwrap_or(&default);
            commands::cmd_export_embeddings(&cfg, model, tag, path)?;
        }
    }
    Ok(Outcome::Success)
}
