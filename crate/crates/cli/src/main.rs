//! `orchestrate`: train, evaluate and inspect expert routing policies.
//!
//! Exit codes: 0 on success, 2 on validation errors (bad arguments, config or
//! input files), 3 when a run aborts at runtime.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use orchestrator::agent::load_checkpoint;
use orchestrator::env::Prompt;
use orchestrator::harness::eval::{baseline_single_expert, evaluate, EvalReport, Greedy};
use orchestrator::harness::log::{group_episodes, write_jsonl};
use orchestrator::harness::{
    eval_corpus, read_episode_log, train_corpus, train_to_dir, wilcoxon_signed_rank, Config,
};
use orchestrator::sim::{read_prompts, write_prompts};
use orchestrator::{Error, Result};

#[derive(Parser)]
#[command(name = "orchestrate", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the evaluation commands.
#[derive(clap::Args)]
struct EvalArgs {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prompt corpus (JSONL); the config's held-out corpus when omitted.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Episodes per prompt.
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Seed for the evaluation rollouts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the step log (JSONL) here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the machine-readable summary (JSON) here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a routing policy and write checkpoint, logs and summary into a directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the greedy policy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also evaluate every single-expert baseline and compare.
        #[arg(long)]
        baselines: bool,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Evaluate a fixed single-expert policy.
    Baseline {
        #[arg(long)]
        expert: usize,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Paired statistics over two episode logs.
    Stats {
        #[command(subcommand)]
        test: StatsTest,
    },
    /// Print one episode of a step log.
    Replay {
        /// Step log (JSONL).
        #[arg(long)]
        episode: PathBuf,
        /// Zero-based position of the episode in the log.
        #[arg(long)]
        index: usize,
    },
    /// Write a synthetic prompt corpus.
    Prompts {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Split::Eval)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum StatsTest {
    /// Wilcoxon signed-rank test on per-episode returns, paired in log order.
    Wilcoxon {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Eval,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => input(p, Config::load)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Reads an input file; a missing, unreadable or malformed input is a
/// validation error.
fn input<T>(path: &Path, read: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    read(path).map_err(|e| match e {
        Error::Io(_) | Error::BadMagic | Error::CorruptChecksum | Error::VersionMismatch { .. } => {
            Error::Domain(format!("{}: {e}", path.display()))
        }
        other => other,
    })
}

fn load_prompts(cfg: &Config, path: Option<&Path>) -> Result<Vec<Prompt>> {
    match path {
        Some(p) => {
            let prompts = input(p, read_prompts)?;
            if prompts.is_empty() {
                return Err(Error::Domain(format!("{}: no prompts", p.display())));
            }
            Ok(prompts)
        }
        None => eval_corpus(cfg),
    }
}

fn write_summary(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
        fs::write(p, text + "\n")?;
    }
    Ok(())
}

fn check_episodes(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("--episodes must be at least 1".into()));
    }
    Ok(())
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let run = train_to_dir(&cfg, &out)?;
            let s = &run.summary;
            let fmt = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.5}"));
            let mut r = String::new();
            writeln!(r, "seed          {}", s.seed).unwrap();
            writeln!(r, "steps         {}", s.steps).unwrap();
            writeln!(r, "episodes      {}", s.episodes).unwrap();
            writeln!(r, "updates       {}", s.updates).unwrap();
            writeln!(r, "target syncs  {}", s.target_syncs).unwrap();
            writeln!(r, "mean reward   {:.5}", s.mean_reward).unwrap();
            writeln!(r, "loss (first decile)  {}", fmt(s.first_decile_loss)).unwrap();
            writeln!(r, "loss (last decile)   {}", fmt(s.last_decile_loss)).unwrap();
            writeln!(r, "final epsilon {:.3}", s.final_epsilon).unwrap();
            writeln!(r, "wrote {}", out.display()).unwrap();
            Ok(r)
        }
        Command::Eval {
            checkpoint,
            baselines,
            args,
        } => {
            check_episodes(args.episodes)?;
            let cfg = load_config(args.config.as_deref(), None)?;
            let env = cfg.environment()?;
            let ck = input(&checkpoint, load_checkpoint)?;
            let want = [orchestrator::embedder::EMBEDDING_DIM, env.action_count()];
            if [ck.net.input_dim(), ck.net.output_dim()] != want {
                return Err(Error::Domain(format!(
                    "checkpoint network is {}->{}, environment needs {}->{}",
                    ck.net.input_dim(),
                    ck.net.output_dim(),
                    want[0],
                    want[1]
                )));
            }
            let prompts = load_prompts(&cfg, args.prompts.as_deref())?;
            let (policy, log) = evaluate(
                &env,
                &Greedy { net: &ck.net },
                &prompts,
                args.episodes,
                args.seed,
            )?;
            if let Some(p) = &args.log {
                write_jsonl(p, &log)?;
            }
            let mut singles = Vec::new();
            if baselines {
                for i in 0..env.action_count() {
                    singles.push(
                        baseline_single_expert(&env, &cfg, i, &prompts, args.episodes, args.seed)?
                            .0,
                    );
                }
            }
            let report = EvalReport::new(policy, singles)?;
            write_summary(args.summary.as_deref(), &report)?;
            Ok(report.table())
        }
        Command::Baseline { expert, args } => {
            check_episodes(args.episodes)?;
            let cfg = load_config(args.config.as_deref(), None)?;
            let env = cfg.environment()?;
            if expert >= env.action_count() {
                return Err(Error::Domain(format!(
                    "expert {expert} out of range (registry has {})",
                    env.action_count()
                )));
            }
            let prompts = load_prompts(&cfg, args.prompts.as_deref())?;
            let (eval, log) =
                baseline_single_expert(&env, &cfg, expert, &prompts, args.episodes, args.seed)?;
            if let Some(p) = &args.log {
                write_jsonl(p, &log)?;
            }
            let report = EvalReport::new(eval, Vec::new())?;
            write_summary(args.summary.as_deref(), &report.policy)?;
            Ok(report.table())
        }
        Command::Stats {
            test: StatsTest::Wilcoxon { a, b, summary },
        } => {
            let returns = |p: &Path| -> Result<Vec<f64>> {
                Ok(group_episodes(input(p, read_episode_log)?)
                    .iter()
                    .map(|e| e.return_)
                    .collect())
            };
            let (xa, xb) = (returns(&a)?, returns(&b)?);
            if xa.len() != xb.len() {
                return Err(Error::Domain(format!(
                    "logs hold {} and {} episodes; pairing needs equal counts",
                    xa.len(),
                    xb.len()
                )));
            }
            let pairs: Vec<(f64, f64)> = xa.into_iter().zip(xb).collect();
            let w = wilcoxon_signed_rank(&pairs)?;
            write_summary(summary.as_deref(), &w)?;
            let mut r = String::new();
            writeln!(r, "pairs      {}", pairs.len()).unwrap();
            writeln!(r, "non-zero   {}", w.n).unwrap();
            writeln!(r, "W+         {}", w.w_plus).unwrap();
            writeln!(r, "W-         {}", w.w_minus).unwrap();
            writeln!(r, "W          {}", w.w).unwrap();
            writeln!(r, "p          {:.6e}", w.p).unwrap();
            writeln!(r, "method     {:?}", w.method).unwrap();
            Ok(r)
        }
        Command::Replay { episode, index } => {
            let episodes = group_episodes(input(&episode, read_episode_log)?);
            let ep = episodes.get(index).ok_or_else(|| {
                Error::Domain(format!(
                    "episode index {index} out of range ({} episodes)",
                    episodes.len()
                ))
            })?;
            let mut r = String::new();
            writeln!(
                r,
                "episode {} (prompt {}, seed {}): return {:.4}, length {}, oracle {:.3}",
                ep.episode, ep.prompt_id, ep.seed, ep.return_, ep.length, ep.oracle_fraction
            )
            .unwrap();
            writeln!(
                r,
                "{:>2} {:>6} {:<18} {:>7} {:>8} {:>6} {:>8} {:>9} {:>6}",
                "t",
                "expert",
                "category",
                "command",
                "attempts",
                "raw",
                "reward",
                "completed",
                "done"
            )
            .unwrap();
            for s in &ep.steps {
                writeln!(
                    r,
                    "{:>2} {:>6} {:<18} {:>7} {:>8} {:>6.3} {:>8.4} {:>9} {:>6}",
                    s.t,
                    s.expert,
                    serde_json::to_value(s.category)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default(),
                    s.command_id,
                    s.attempts,
                    s.raw,
                    s.reward,
                    s.completed,
                    s.done
                )
                .unwrap();
            }
            Ok(r)
        }
        Command::Prompts {
            config,
            seed,
            split,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let prompts = match split {
                Split::Train => train_corpus(&cfg)?,
                Split::Eval => eval_corpus(&cfg)?,
            };
            write_prompts(&out, &prompts)?;
            Ok(format!(
                "wrote {} prompts to {}\n",
                prompts.len(),
                out.display()
            ))
        }
    }
}
