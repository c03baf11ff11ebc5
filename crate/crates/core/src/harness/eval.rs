//! Greedy evaluation, reference policies and paired comparisons.
//!
//! Each episode `(prompt i, repetition k)` draws its environment noise from
//! its own stream, so two policies evaluated with the same seed face the
//! same expert noise wherever they make the same calls.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::log::{group_episodes, StepRecord};
use super::stats::{mean_stderr, wilcoxon_signed_rank, win_rate, WilcoxonResult};
use crate::agent::{masked_argmax, QNetwork};
use crate::env::{EnvState, Environment, Prompt};
use crate::reflection::TaskCategory;
use crate::registry::Modality;
use crate::rng::{self, Stream};
use crate::sim::{best_expert, oracle_fraction};
use crate::{Error, Result};

const ENV_LABEL: u64 = 0xE7A1;
const POLICY_LABEL: u64 = 0x9011;

pub trait Policy {
    fn name(&self) -> String;
    fn act(&self, env: &Environment, state: &EnvState, rng: &mut Stream) -> Result<usize>;
}

/// Argmax of a Q-network over legal actions (epsilon 0).
pub struct Greedy<'a> {
    pub net: &'a QNetwork,
}

impl Policy for Greedy<'_> {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn act(&self, env: &Environment, state: &EnvState, _: &mut Stream) -> Result<usize> {
        masked_argmax(
            &self.net.forward(state.embedding.values()),
            &env.legal_actions(state),
        )
    }
}

/// Uniform over legal actions.
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, env: &Environment, state: &EnvState, rng: &mut Stream) -> Result<usize> {
        let legal: Vec<usize> = (0..env.action_count())
            .filter(|&i| env.legal_actions(state)[i])
            .collect();
        if legal.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(legal[rng.random_range(0..legal.len())])
    }
}

/// Best configured expert for the current command's category within the
/// legal modality.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn act(&self, env: &Environment, state: &EnvState, _: &mut Stream) -> Result<usize> {
        let category = current_category(state);
        let pick = if state.canvas.is_blank() {
            env.registry.best_for(Modality::T2I, category)
        } else {
            best_expert(&env.registry, category)
        };
        let a = pick.ok_or(Error::EmptyMask)?;
        if env.legal_actions(state)[a] {
            Ok(a)
        } else {
            masked_argmax(&vec![0.0; env.action_count()], &env.legal_actions(state))
        }
    }
}

/// Always the same expert. When it is illegal the configured same-backend
/// counterpart is used, else the default expert of the legal modality.
pub struct SingleExpert {
    pub index: usize,
    pub counterpart: Option<usize>,
    pub default_t2i: usize,
    pub default_i2i: usize,
}

impl SingleExpert {
    pub fn from_config(index: usize, cfg: &Config) -> Self {
        SingleExpert {
            index,
            counterpart: cfg.counterpart(index),
            default_t2i: cfg.baseline_default_t2i,
            default_i2i: cfg.baseline_default_i2i,
        }
    }
}

impl Policy for SingleExpert {
    fn name(&self) -> String {
        format!("expert-{}", self.index)
    }

    fn act(&self, env: &Environment, state: &EnvState, _: &mut Stream) -> Result<usize> {
        let mask = env.legal_actions(state);
        let fallback = if state.canvas.is_blank() {
            self.default_t2i
        } else {
            self.default_i2i
        };
        [Some(self.index), self.counterpart, Some(fallback)]
            .into_iter()
            .flatten()
            .find(|&a| mask.get(a).copied().unwrap_or(false))
            .ok_or(Error::EmptyMask)
    }
}

fn current_category(state: &EnvState) -> TaskCategory {
    state
        .c_curr
        .as_ref()
        .map_or(TaskCategory::AddObject, |c| c.category)
}

/// Runs one episode to termination.
pub fn rollout(
    env: &Environment,
    policy: &dyn Policy,
    prompt: &Prompt,
    episode: u64,
    seed: u64,
    env_rng: &mut Stream,
    policy_rng: &mut Stream,
) -> Result<Vec<StepRecord>> {
    let mut state = env.reset(prompt)?;
    let mut records = Vec::new();
    while !state.done {
        let action = policy.act(env, &state, policy_rng)?;
        let out = env.step(&state, action, env_rng)?;
        records.push(StepRecord {
            episode,
            seed,
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
            mask: out.info.mask,
            done: out.done,
            truncated: out.info.truncated,
            oracle_fraction: oracle_fraction(&out.state.canvas, prompt),
        });
        state = out.state;
    }
    Ok(records)
}

/// Aggregate results for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub policy: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub stderr_return: f64,
    pub mean_oracle_fraction: f64,
    pub mean_length: f64,
    /// Per category, how often each expert was chosen.
    pub choices: BTreeMap<TaskCategory, Vec<usize>>,
    /// Share of editing steps routed to the best editing expert for the category.
    pub routing_accuracy: Option<f64>,
    /// Per-episode returns in (prompt, repetition) order.
    pub returns: Vec<f64>,
}

/// Evaluates `policy` on every prompt `episodes` times. Returns the summary
/// and the step log.
pub fn evaluate(
    env: &Environment,
    policy: &dyn Policy,
    prompts: &[Prompt],
    episodes: usize,
    seed: u64,
) -> Result<(PolicyEval, Vec<StepRecord>)> {
    let mut log = Vec::new();
    let mut id = 0u64;
    for (i, prompt) in prompts.iter().enumerate() {
        for k in 0..episodes {
            let key = [i as u64, k as u64];
            let mut env_rng = rng::stream(seed, &[ENV_LABEL, key[0], key[1]]);
            let mut policy_rng = rng::stream(seed, &[POLICY_LABEL, key[0], key[1]]);
            log.extend(rollout(
                env,
                policy,
                prompt,
                id,
                seed,
                &mut env_rng,
                &mut policy_rng,
            )?);
            id += 1;
        }
    }
    Ok((summarize(env, &policy.name(), &log), log))
}

pub fn summarize(env: &Environment, name: &str, log: &[StepRecord]) -> PolicyEval {
    let episodes = group_episodes(log.to_vec());
    let returns: Vec<f64> = episodes.iter().map(|e| e.return_).collect();
    let (mean_return, stderr_return) = mean_stderr(&returns);
    let n = episodes.len().max(1) as f64;
    let mut choices: BTreeMap<TaskCategory, Vec<usize>> = BTreeMap::new();
    let (mut routed, mut edits) = (0usize, 0usize);
    for s in log {
        choices
            .entry(s.category)
            .or_insert_with(|| vec![0; env.action_count()])[s.expert] += 1;
        let is_edit = env
            .registry
            .get(s.expert)
            .is_ok_and(|e| e.modality == Modality::I2I);
        if is_edit {
            if let Some(best) = best_expert(&env.registry, s.category) {
                if s.mask.get(best).copied().unwrap_or(false) {
                    edits += 1;
                    routed += usize::from(best == s.expert);
                }
            }
        }
    }
    PolicyEval {
        policy: name.to_string(),
        episodes: episodes.len(),
        mean_return,
        stderr_return,
        mean_oracle_fraction: episodes.iter().map(|e| e.oracle_fraction).sum::<f64>() / n,
        mean_length: episodes.iter().map(|e| e.length as f64).sum::<f64>() / n,
        choices,
        routing_accuracy: (edits > 0).then(|| routed as f64 / edits as f64),
        returns,
    }
}

/// Evaluation of a single expert, with the configured fallbacks.
pub fn baseline_single_expert(
    env: &Environment,
    cfg: &Config,
    index: usize,
    prompts: &[Prompt],
    episodes: usize,
    seed: u64,
) -> Result<(PolicyEval, Vec<StepRecord>)> {
    env.registry.get(index)?;
    evaluate(
        env,
        &SingleExpert::from_config(index, cfg),
        prompts,
        episodes,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    /// `None` when every paired difference is zero.
    pub wilcoxon: Option<WilcoxonResult>,
    /// Share of non-tied episodes won, with its standard error.
    pub win_rate: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: PolicyEval,
    pub baselines: Vec<PolicyEval>,
    pub comparisons: Vec<Comparison>,
}

/// Paired test and win rate; either is `None` when every difference is zero.
pub type Paired = (Option<WilcoxonResult>, Option<(f64, f64)>);

pub fn compare(a: &[f64], b: &[f64]) -> Result<Paired> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    let wilcoxon = match wilcoxon_signed_rank(&pairs) {
        Ok(w) => Some(w),
        Err(Error::AllZeroDifferences) => None,
        Err(e) => return Err(e),
    };
    let outcomes: Vec<bool> = pairs
        .iter()
        .filter(|(x, y)| x != y)
        .map(|(x, y)| x > y)
        .collect();
    let win = win_rate(&outcomes).ok();
    Ok((wilcoxon, win))
}

impl EvalReport {
    pub fn new(policy: PolicyEval, baselines: Vec<PolicyEval>) -> Result<Self> {
        let comparisons = baselines
            .iter()
            .map(|b| {
                let (wilcoxon, win_rate) = compare(&policy.returns, &b.returns)?;
                Ok(Comparison {
                    baseline: b.policy.clone(),
                    wilcoxon,
                    win_rate,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalReport {
            policy,
            baselines,
            comparisons,
        })
    }

    /// Baseline with the highest mean return.
    pub fn best_baseline(&self) -> Option<&PolicyEval> {
        self.baselines
            .iter()
            .fold(None, |best: Option<&PolicyEval>, b| match best {
                Some(x) if x.mean_return >= b.mean_return => Some(x),
                _ => Some(b),
            })
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<12} {:>8} {:>17} {:>8} {:>7} {:>8} {:>9} {:>11}",
            "policy", "episodes", "return", "oracle", "length", "routing", "p", "win rate"
        )
        .unwrap();
        let row = |s: &mut String, e: &PolicyEval, cmp: Option<&Comparison>| {
            let routing = e
                .routing_accuracy
                .map_or("-".into(), |r| format!("{:.3}", r));
            let p = cmp
                .and_then(|c| c.wilcoxon.as_ref())
                .map_or("-".into(), |w| format!("{:.2e}", w.p));
            let win = cmp
                .and_then(|c| c.win_rate)
                .map_or("-".into(), |(r, se)| format!("{r:.2} ± {se:.2}"));
            writeln!(
                s,
                "{:<12} {:>8} {:>8.4} ± {:<6.4} {:>8.3} {:>7.2} {:>8} {:>9} {:>11}",
                e.policy,
                e.episodes,
                e.mean_return,
                e.stderr_return,
                e.mean_oracle_fraction,
                e.mean_length,
                routing,
                p,
                win
            )
            .unwrap();
        };
        row(&mut s, &self.policy, None);
        for (b, c) in self.baselines.iter().zip(&self.comparisons) {
            row(&mut s, b, Some(c));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{Backend, ExpertSpec, Registry, SkillProfile};
    use crate::sim::Atom;

    fn prompt() -> Prompt {
        Prompt::new(
            5,
            vec![
                Atom::new(TaskCategory::AddObject, "boats", "6"),
                Atom::new(TaskCategory::ColorChange, "roof", "red"),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn empty_prompt_set() {
        let env = Environment::synthetic(Registry::default_synthetic());
        let (e, log) = evaluate(&env, &RandomPolicy, &[], 3, 0).unwrap();
        assert_eq!(e.episodes, 0);
        assert!(log.is_empty() && e.returns.is_empty());
        assert_eq!(e.routing_accuracy, None);
    }

    #[test]
    fn hand_computed_episode() {
        // A perfect generator and a perfect editor: one step, raw 10.
        let mut reg = Registry::new();
        for (index, modality) in [(0, Modality::T2I), (1, Modality::I2I)] {
            reg.register(ExpertSpec {
                index,
                name: format!("e{index}"),
                modality,
                backend: Backend::Synthetic(SkillProfile::uniform(10.0, 0.0, 0.0)),
            })
            .unwrap();
        }
        let env = Environment::synthetic(reg);
        let policy = SingleExpert {
            index: 0,
            counterpart: None,
            default_t2i: 0,
            default_i2i: 1,
        };
        let (e, log) = evaluate(&env, &policy, &[prompt()], 2, 9).unwrap();
        assert_eq!(e.episodes, 2);
        assert_eq!(log.len(), 2);
        assert!((e.mean_return - 0.95).abs() < 1e-12);
        assert_eq!(e.stderr_return, 0.0);
        assert_eq!(e.mean_oracle_fraction, 1.0);
        assert_eq!(e.mean_length, 1.0);
        assert_eq!(e.choices[&TaskCategory::AddObject][0], 2);
    }

    #[test]
    fn single_expert_fallbacks() {
        let cfg = Config::default();
        let env = cfg.environment().unwrap();
        let s = env.reset(&prompt()).unwrap();
        let mut r = rng::stream(0, &[]);
        assert_eq!(
            SingleExpert::from_config(9, &cfg)
                .act(&env, &s, &mut r)
                .unwrap(),
            5
        );
        assert_eq!(
            SingleExpert::from_config(7, &cfg)
                .act(&env, &s, &mut r)
                .unwrap(),
            4
        );
        assert_eq!(
            SingleExpert::from_config(2, &cfg)
                .act(&env, &s, &mut r)
                .unwrap(),
            2
        );
    }

    #[test]
    fn failing_expert_reaches_nothing() {
        let mut reg = Registry::new();
        for (index, modality) in [(0, Modality::T2I), (1, Modality::I2I)] {
            reg.register(ExpertSpec {
                index,
                name: format!("e{index}"),
                modality,
                backend: Backend::Synthetic(SkillProfile::uniform(6.0, 0.5, 1.0)),
            })
            .unwrap();
        }
        let env = Environment::synthetic(reg);
        let policy = SingleExpert {
            index: 1,
            counterpart: None,
            default_t2i: 0,
            default_i2i: 1,
        };
        let (e, _) = evaluate(&env, &policy, &[prompt(), prompt()], 3, 1).unwrap();
        assert_eq!(e.mean_oracle_fraction, 0.0);
    }
}
