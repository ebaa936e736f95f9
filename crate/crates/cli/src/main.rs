use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use macs_core::agents::{ActorCriticAgent, Policy};
use macs_core::envs::ingest_ratings;
use macs_core::harness::{
    build_env, evaluate_ctr, evaluate_offline_metrics, parse_config, run_experiment, sweep_hidden_sizes, BuiltEnv,
    ExperimentConfig, MacsMode, DEFAULT_HIDDEN_SIZES,
};
use macs_core::{Error, Result};

/// Actor-critic recommenders with counterfactual replay augmentation.
#[derive(Parser, Debug)]
#[command(name = "macs", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only, instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. The MACS_OUT environment variable takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train with the augmentation mode set in the configuration.
    Train(Common),
    /// Expert mode: train the counterfactual policy from a checkpointed expert, then the augmented learner.
    TrainMacs {
        #[command(flatten)]
        common: Common,
        /// Agent checkpoint that plays the expert.
        #[arg(long)]
        expert: PathBuf,
    },
    /// Joint training of learner and counterfactual policy.
    JointTrain(Common),
    /// Evaluate a checkpointed agent on the configured environment.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Validate a ratings file and summarize it.
    Ingest {
        /// Tab-, comma- or `::`-separated `user item rating timestamp` lines.
        ratings: PathBuf,
    },
    /// Repeat the experiment over hidden widths.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated hidden widths.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HIDDEN_SIZES)]
        sizes: Vec<usize>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&c.config)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = std::env::var_os("MACS_OUT") {
        cfg.out = PathBuf::from(out);
    } else if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn open_checkpoint(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::CorruptCheckpoint(format!("cannot read {}: {e}", path.display())))
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg)?;
    for run in &report.runs {
        match run.final_ctr() {
            Some(ctr) => println!("seed {}: final ctr {ctr:.4}", run.seed),
            None => println!("seed {}: no evaluation point reached", run.seed),
        }
    }
    println!("wrote {} files to {}", report.files.len(), cfg.out.display());
    Ok(())
}

fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let policy: Policy = ActorCriticAgent::load_policy(open_checkpoint(checkpoint)?)?;
    let env = build_env(&cfg.env)?;
    let sched = &cfg.schedule;
    let mut csv = String::from("seed,ctr,precision,recall,accuracy\n");
    for &seed in &cfg.seeds {
        let act = |s: &[f64]| policy.act(s);
        let line = match &env {
            BuiltEnv::SynthRec(e) => {
                let ctr = evaluate_ctr(act, e, sched.eval_episodes, sched.max_steps, seed)?;
                println!("seed {seed}: ctr {ctr:.4}");
                format!("{seed},{ctr},,,")
            }
            BuiltEnv::Offline(e) => {
                let ctr = evaluate_ctr(act, e, sched.eval_episodes, sched.max_steps, seed)?;
                let m = evaluate_offline_metrics(act, e, sched.eval_episodes, sched.max_steps, seed)?;
                println!(
                    "seed {seed}: ctr {ctr:.4} precision {:.4} recall {:.4} accuracy {:.4}",
                    m.precision, m.recall, m.accuracy
                );
                format!("{seed},{ctr},{},{},{}", m.precision, m.recall, m.accuracy)
            }
        };
        csv.push_str(&line);
        csv.push('\n');
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("eval.csv"), csv)?;
    Ok(())
}

fn ingest(path: &Path) -> Result<()> {
    let table = ingest_ratings(BufReader::new(File::open(path)?))?;
    println!("records {}", table.len());
    println!("users {}", table.n_users());
    println!("items {}", table.n_items());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => train(&load_config(&c)?),
        Command::TrainMacs { common, expert } => {
            let mut cfg = load_config(&common)?;
            cfg.macs.mode = MacsMode::Expert;
            cfg.macs.expert_checkpoint = Some(expert.clone());
            // Surface a missing or unreadable expert before any training.
            ActorCriticAgent::load_policy(open_checkpoint(&expert)?)?;
            train(&cfg)
        }
        Command::JointTrain(c) => {
            let mut cfg = load_config(&c)?;
            cfg.macs.mode = MacsMode::Joint;
            train(&cfg)
        }
        Command::Eval { common, checkpoint } => eval(&load_config(&common)?, &checkpoint),
        Command::Ingest { ratings } => ingest(&ratings),
        Command::Sweep { common, sizes } => {
            let cfg = load_config(&common)?;
            let report = sweep_hidden_sizes(&cfg, &sizes, &cfg.seeds)?;
            print!("{}", report.csv);
            if let Some(best) = report.best() {
                println!("best hidden size {best}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
