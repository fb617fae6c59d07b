//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use headprobe_core::grid::{ProbeKind, Protocol};

use crate::commands::{cmd_directions, cmd_inspect, cmd_sweep, cmd_synth, cmd_token_report};
use crate::config::{Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::synth::SynthSpec;

#[derive(Debug, Parser)]
#[command(name = "headprobe", version, about = "Per-attention-head probing of activation dumps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dump, essay table and metadata with planted signal.
    Synth {
        /// Synthetic spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a probe per head for every trait and prompt-wise split.
    Sweep(RunArgs),
    /// Trait and prompt direction similarity at the best-average heads.
    Directions(RunArgs),
    /// Per-token probe scores of one essay at its prompt's top-k heads.
    TokenReport {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        essay: String,
        #[arg(long = "trait")]
        trait_name: String,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Print a dump header.
    Inspect { dump: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProbeArg {
    Ridge,
    Mlp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProtocolArg {
    TestSet,
    HeldOut,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop a prompt from every training set (repeatable).
    #[arg(long = "exclude-train-prompt", value_name = "N")]
    pub exclude_train_prompt: Vec<i64>,
    #[arg(long, value_enum)]
    pub probe: Option<ProbeArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of an earlier sweep whose grids should be reused.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    /// Worker threads; does not affect results.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl RunArgs {
    fn load(&self, top_k: Option<usize>) -> Result<(RunConfig, usize)> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            exclude_train_prompts: self.exclude_train_prompt.clone(),
            probe: self.probe.map(|p| match p {
                ProbeArg::Ridge => ProbeKind::Ridge,
                ProbeArg::Mlp => ProbeKind::Mlp,
            }),
            lambda: self.lambda,
            protocol: self.protocol.map(|p| match p {
                ProtocolArg::TestSet => Protocol::TestSetSelected,
                ProtocolArg::HeldOut => Protocol::HeldOut,
            }),
            out: self.out.clone(),
            grids_dir: self.grids.clone(),
            top_k,
        });
        let workers = match self.workers {
            Some(0) => return Err(Error::Config("--workers must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        Ok((cfg, workers))
    }
}

/// Runs one parsed command and returns what it prints on success.
pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth { spec, out, seed } => {
            let mut spec = SynthSpec::load(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let o = cmd_synth(&spec, &out)?;
            Ok(format!(
                "wrote {}\nwrote {}\nwrote {}\nrun config: {}\n",
                o.dump.display(),
                o.essays.display(),
                o.metadata.display(),
                o.run_config.display()
            ))
        }
        Command::Sweep(args) => {
            let (cfg, workers) = args.load(None)?;
            let out = cfg.output_dir.clone();
            let r = cmd_sweep(cfg, workers)?;
            let mut s = String::new();
            for a in &r.manifest.splits {
                s.push_str(&format!(
                    "{} prompt {}: L{}H{} qwk {}\n",
                    a.trait_name, a.test_prompt, a.selected_head.layer, a.selected_head.head, a.selected_head.qwk
                ));
            }
            s.push_str(&format!("outputs in {}\n", out.display()));
            Ok(s)
        }
        Command::Directions(args) => {
            let (cfg, workers) = args.load(None)?;
            let r = cmd_directions(cfg, workers)?;
            let mut s = String::new();
            for (p, j) in &r.by_prompt {
                s.push_str(&format!("prompt {p} traits: mean off-diagonal {:?}\n", j.mean_offdiag));
            }
            for (t, j) in &r.by_trait {
                s.push_str(&format!("trait {t} prompts: mean off-diagonal {:?}\n", j.mean_offdiag));
            }
            Ok(s)
        }
        Command::TokenReport {
            run,
            essay,
            trait_name,
            top_k,
        } => {
            let (cfg, workers) = run.load(top_k)?;
            let reports = cmd_token_report(cfg, &essay, &trait_name, workers)?;
            Ok(reports
                .iter()
                .map(|r| {
                    let colored = r.tokens.iter().filter(|t| t.colored).count();
                    format!(
                        "rank {} L{}H{}: {colored}/{} tokens colored\n",
                        r.rank,
                        r.head.layer,
                        r.head.head,
                        r.tokens.len()
                    )
                })
                .collect())
        }
        Command::Inspect { dump } => cmd_inspect(&dump),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(s) => {
            print!("{s}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
