//! Training driver: episodes sampled with replacement from the training
//! corpus until the global step budget is spent.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::log::{write_jsonl, MetricRecord, StepRecord};
use crate::agent::{checkpoint, maybe_sync, select_action, DqnAgent, Transition};
use crate::env::Prompt;
use crate::rng;
use crate::sim::oracle_fraction;
use crate::Result;

// Stream labels. Each consumer of randomness owns one stream.
const INIT: u64 = 1;
const TRAIN_CORPUS: u64 = 2;
const EVAL_CORPUS: u64 = 3;
const SAMPLE: u64 = 4;
const ACT: u64 = 5;
const ENV: u64 = 6;
const REPLAY: u64 = 7;

/// Id offset separating held-out prompts from training prompts.
pub const EVAL_ID_OFFSET: u64 = 1_000_000;

pub fn train_corpus(cfg: &Config) -> Result<Vec<Prompt>> {
    cfg.generator()?.corpus(
        cfg.train_prompts,
        cfg.difficulty(),
        0,
        &mut rng::stream(cfg.seed, &[TRAIN_CORPUS]),
    )
}

/// Held-out prompts, drawn from a stream disjoint from the training corpus.
pub fn eval_corpus(cfg: &Config) -> Result<Vec<Prompt>> {
    cfg.generator()?.corpus(
        cfg.eval_prompts,
        cfg.difficulty(),
        EVAL_ID_OFFSET,
        &mut rng::stream(cfg.seed, &[EVAL_CORPUS]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub target_syncs: u64,
    pub mean_reward: f64,
    pub first_decile_loss: Option<f64>,
    pub last_decile_loss: Option<f64>,
    pub final_epsilon: f64,
}

pub struct TrainRun {
    pub agent: DqnAgent,
    pub steps: Vec<StepRecord>,
    pub metrics: Vec<MetricRecord>,
    pub summary: TrainSummary,
}

impl TrainRun {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.agent.online, &self.agent.adam, self.summary.steps)
    }

    /// Loss per training step, skipping steps before learning starts.
    pub fn losses(&self) -> Vec<f64> {
        self.metrics.iter().filter_map(|m| m.loss).collect()
    }
}

fn decile_means(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let k = xs.len() / 10;
    if k == 0 {
        return (None, None);
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (Some(mean(&xs[..k])), Some(mean(&xs[xs.len() - k..])))
}

/// Runs training; `on_checkpoint` receives intermediate checkpoints when
/// `checkpoint_every` is set.
pub fn train_with(
    cfg: &Config,
    mut on_checkpoint: impl FnMut(u64, Vec<u8>) -> Result<()>,
) -> Result<TrainRun> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let corpus = train_corpus(cfg)?;
    let mut agent = DqnAgent::new(
        cfg.dqn(),
        env.action_count(),
        &mut rng::stream(cfg.seed, &[INIT]),
    );
    let schedule = cfg.epsilon();
    let mut sample_rng = rng::stream(cfg.seed, &[SAMPLE]);
    let mut act_rng = rng::stream(cfg.seed, &[ACT]);
    let mut env_rng = rng::stream(cfg.seed, &[ENV]);
    let mut replay_rng = rng::stream(cfg.seed, &[REPLAY]);

    let mut steps = Vec::new();
    let mut metrics = Vec::new();
    let (mut step, mut episode, mut syncs) = (0u64, 0u64, 0u64);
    let mut epsilon = cfg.epsilon_initial;

    while step < cfg.total_steps {
        let prompt = &corpus[sample_rng.random_range(0..corpus.len())];
        let mut state = env.reset(prompt)?;
        while !state.done && step < cfg.total_steps {
            epsilon = schedule.at(step, cfg.total_steps)?;
            let mask = env.legal_actions(&state);
            let action = select_action(
                &agent.online,
                &state.embedding,
                &mask,
                epsilon,
                &mut act_rng,
            )?;
            let out = env.step(&state, action, &mut env_rng)?;
            agent.buffer.push(Transition {
                state: state.embedding.clone(),
                action,
                reward: out.reward,
                next: out.state.embedding.clone(),
                done: out.done,
                next_mask: out.info.next_mask.clone(),
            });
            let loss = agent.learn(&mut replay_rng)?;
            step += 1;
            let synced = maybe_sync(step, cfg.target_sync_interval);
            if synced {
                agent.sync_target();
                syncs += 1;
            }
            steps.push(StepRecord {
                episode,
                seed: cfg.seed,
                prompt_id: prompt.id,
                t: out.state.t,
                expert: action,
                category: out.info.category,
                command_id: out.info.command_id,
                attempts: out.info.attempts,
                raw: out.info.raw,
                subscores: out.info.subscores,
                reward: out.reward,
                completed: out.info.completed,
                mask,
                done: out.done,
                truncated: out.info.truncated,
                oracle_fraction: oracle_fraction(&out.state.canvas, prompt),
            });
            metrics.push(MetricRecord {
                step,
                episode,
                epsilon,
                reward: out.reward,
                loss,
                synced,
            });
            if cfg.checkpoint_every > 0
                && step % cfg.checkpoint_every == 0
                && step < cfg.total_steps
            {
                on_checkpoint(step, checkpoint::encode(&agent.online, &agent.adam, step))?;
            }
            state = out.state;
        }
        episode += 1;
    }

    let losses: Vec<f64> = metrics.iter().filter_map(|m| m.loss).collect();
    let (first_decile_loss, last_decile_loss) = decile_means(&losses);
    let summary = TrainSummary {
        seed: cfg.seed,
        steps: step,
        episodes: episode,
        updates: agent.adam.t,
        target_syncs: syncs,
        mean_reward: if steps.is_empty() {
            0.0
        } else {
            steps.iter().map(|s| s.reward).sum::<f64>() / steps.len() as f64
        },
        first_decile_loss,
        last_decile_loss,
        final_epsilon: epsilon,
    };
    Ok(TrainRun {
        agent,
        steps,
        metrics,
        summary,
    })
}

pub fn train(cfg: &Config) -> Result<TrainRun> {
    train_with(cfg, |_, _| Ok(()))
}

/// Trains and writes `checkpoint.bin`, `episodes.jsonl`, `metrics.jsonl`,
/// `summary.json` and the resolved `config.toml` into `out`.
pub fn train_to_dir(cfg: &Config, out: &Path) -> Result<TrainRun> {
    fs::create_dir_all(out)?;
    let run = train_with(cfg, |step, bytes| {
        fs::write(out.join(format!("checkpoint-{step:06}.bin")), bytes)?;
        Ok(())
    })?;
    fs::write(out.join("checkpoint.bin"), run.checkpoint_bytes())?;
    write_jsonl(&out.join("episodes.jsonl"), &run.steps)?;
    write_jsonl(&out.join("metrics.jsonl"), &run.metrics)?;
    let summary =
        serde_json::to_string_pretty(&run.summary).map_err(|e| crate::Error::Io(e.into()))?;
    fs::write(out.join("summary.json"), summary + "\n")?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(run)
}
