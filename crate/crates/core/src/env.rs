//! The orchestration MDP: reset, masked step, shaped reward and termination.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::{serialize_ledger, Embedder, HashingEmbedder, StateEmbedding};
use crate::reflection::{
    apply_attempt_policy, extract_command, AtomicCommand, CommandSet, Critic, Subscores,
    SyntheticCritic, TaskCategory,
};
use crate::registry::{CanvasState, Registry};
use crate::sim::Atom;
use crate::{Error, Result};

pub const DEFAULT_T_MAX: u32 = 6;
pub const DEFAULT_STEP_PENALTY: f64 = 0.05;

/// A task: the atoms to satisfy, an optional style tag and optional input image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: u64,
    pub text: String,
    pub atoms: Vec<Atom>,
    pub style: Option<String>,
    pub initial_canvas: Option<CanvasState>,
}

impl Prompt {
    pub fn new(id: u64, atoms: Vec<Atom>, style: Option<String>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("prompt needs at least one atom".into()));
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i]
                .iter()
                .any(|b| b.category == a.category && b.key == a.key)
            {
                return Err(Error::Domain(format!(
                    "duplicate atom key `{}` in category {}",
                    a.key, a.category
                )));
            }
        }
        let text = atoms
            .iter()
            .map(Atom::phrase)
            .collect::<Vec<_>>()
            .join(", ");
        Ok(Prompt {
            id,
            text,
            atoms,
            style,
            initial_canvas: None,
        })
    }

    /// The whole prompt as the first command of an episode.
    pub fn as_command(&self) -> AtomicCommand {
        let mut cmd = AtomicCommand::from_atoms(0, self.atoms.clone());
        cmd.text = self.text.clone();
        cmd
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub prompt: Prompt,
    pub canvas: CanvasState,
    pub c_curr: Option<AtomicCommand>,
    pub c_rem: CommandSet,
    pub t: u32,
    pub embedding: StateEmbedding,
    pub done: bool,
}

/// What happened during one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub expert: usize,
    pub category: TaskCategory,
    pub command_id: u64,
    pub attempts: u32,
    pub raw: f64,
    pub subscores: Option<Subscores>,
    pub completed: bool,
    /// Mask the action was chosen under.
    pub mask: Vec<bool>,
    /// Mask of the successor state; all false when done.
    pub next_mask: Vec<bool>,
    /// Episode ended on the step budget with work outstanding.
    pub truncated: bool,
    /// Commands abandoned during this step.
    pub abandoned: Vec<u64>,
}

pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// `raw / 10 - 0.05 t` for `raw` in `[0, 10]` and `t` in `1..=6`.
pub fn shape_reward(raw: f64, t: u32) -> Result<f64> {
    shape_reward_with(raw, t, DEFAULT_STEP_PENALTY, DEFAULT_T_MAX)
}

pub fn shape_reward_with(raw: f64, t: u32, penalty: f64, t_max: u32) -> Result<f64> {
    if !(0.0..=10.0).contains(&raw) {
        return Err(Error::Domain(format!("raw score {raw} outside [0, 10]")));
    }
    if !(1..=t_max).contains(&t) {
        return Err(Error::Domain(format!("step {t} outside 1..={t_max}")));
    }
    Ok(raw / 10.0 - penalty * f64::from(t))
}

pub struct Environment {
    pub registry: Registry,
    pub critic: Box<dyn Critic>,
    pub embedder: Box<dyn Embedder>,
    pub t_max: u32,
    pub step_penalty: f64,
}

impl Environment {
    /// Synthetic critic, hashing embedder and default budget.
    pub fn synthetic(registry: Registry) -> Self {
        Environment {
            registry,
            critic: Box::new(SyntheticCritic),
            embedder: Box::new(HashingEmbedder),
            t_max: DEFAULT_T_MAX,
            step_penalty: DEFAULT_STEP_PENALTY,
        }
    }

    pub fn action_count(&self) -> usize {
        self.registry.action_count()
    }

    fn embed(&self, c_curr: Option<&AtomicCommand>, c_rem: &CommandSet) -> Result<StateEmbedding> {
        self.embedder.embed(&serialize_ledger(c_curr, c_rem))
    }

    pub fn reset(&self, prompt: &Prompt) -> Result<EnvState> {
        let c_curr = prompt.as_command();
        let c_rem = CommandSet::with_next_id(c_curr.id + 1);
        let embedding = self.embed(Some(&c_curr), &c_rem)?;
        Ok(EnvState {
            prompt: prompt.clone(),
            canvas: prompt.initial_canvas.clone().unwrap_or(CanvasState::Blank),
            c_curr: Some(c_curr),
            c_rem,
            t: 0,
            embedding,
            done: false,
        })
    }

    pub fn legal_actions(&self, state: &EnvState) -> Vec<bool> {
        if state.done {
            return vec![false; self.action_count()];
        }
        self.registry.mask(&state.canvas)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        action: usize,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::SteppedAfterDone);
        }
        let mask = self.legal_actions(state);
        if !mask.get(action).copied().unwrap_or(false) {
            return Err(Error::IneligibleAction { action });
        }
        let c_curr = state
            .c_curr
            .as_ref()
            .ok_or_else(|| Error::Domain("live state without a current command".into()))?;

        let (canvas, quality) = self
            .registry
            .invoke(action, c_curr, &state.canvas, rng)
            .map_err(|e| match e {
                Error::IneligibleExpert { index } => Error::IneligibleAction { action: index },
                other => other,
            })?;
        let verdict = self.critic.score(
            &state.canvas,
            &canvas,
            c_curr,
            &state.c_rem,
            &state.prompt,
            quality,
        )?;
        let before = verdict.residual.abandoned.len();
        let ledger = apply_attempt_policy(&verdict, c_curr, verdict.residual.clone());
        let abandoned = ledger.abandoned[before..].iter().map(|c| c.id).collect();
        let (next, c_rem) = extract_command(ledger);

        let t = state.t + 1;
        let reward = shape_reward_with(verdict.raw, t, self.step_penalty, self.t_max)?;
        let finished = next.is_none() && c_rem.is_empty();
        let done = finished || t >= self.t_max;
        let embedding = self.embed(next.as_ref(), &c_rem)?;

        let next_state = EnvState {
            prompt: state.prompt.clone(),
            canvas,
            c_curr: next,
            c_rem,
            t,
            embedding,
            done,
        };
        let info = StepInfo {
            expert: action,
            category: c_curr.category,
            command_id: c_curr.id,
            attempts: c_curr.attempts,
            raw: verdict.raw,
            subscores: verdict.subscores,
            completed: verdict.completed,
            mask,
            next_mask: self.legal_actions(&next_state),
            truncated: done && !finished,
            abandoned,
        };
        Ok(StepOutcome {
            state: next_state,
            reward,
            done,
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{Backend, ExpertSpec, Modality, SkillProfile};
    use crate::rng;

    fn prompt() -> Prompt {
        Prompt::new(
            1,
            vec![
                Atom::new(TaskCategory::AddObject, "boats", "6"),
                Atom::new(TaskCategory::AddText, "sign", "OPEN"),
            ],
            None,
        )
        .unwrap()
    }

    fn perfect_registry() -> Registry {
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
        reg
    }

    #[test]
    fn shape_reward_values_and_domain() {
        assert!((shape_reward(10.0, 1).unwrap() - 0.95).abs() < 1e-12);
        assert!((shape_reward(5.0, 2).unwrap() - 0.40).abs() < 1e-12);
        assert!((shape_reward(0.0, 6).unwrap() + 0.30).abs() < 1e-12);
        assert!(matches!(shape_reward(10.5, 1), Err(Error::Domain(_))));
        assert!(matches!(shape_reward(5.0, 0), Err(Error::Domain(_))));
        assert!(matches!(shape_reward(5.0, 7), Err(Error::Domain(_))));
    }

    #[test]
    fn reset_text_prompt_and_input_image() {
        let env = Environment::synthetic(Registry::default_synthetic());
        let s = env.reset(&prompt()).unwrap();
        assert_eq!(s.canvas, CanvasState::Blank);
        assert_eq!(s.t, 0);
        assert!(s.c_rem.is_empty() && !s.done);
        assert_eq!(s.c_curr.as_ref().unwrap().attempts, 0);
        let mask = env.legal_actions(&s);
        assert!(mask[..7].iter().all(|&m| m) && mask[7..].iter().all(|&m| !m));
        assert_eq!(s, env.reset(&prompt()).unwrap());

        let mut edit = prompt();
        edit.initial_canvas = Some(CanvasState::External("img://in".into()));
        let s = env.reset(&edit).unwrap();
        let mask = env.legal_actions(&s);
        assert!(mask[..7].iter().all(|&m| !m) && mask[7..].iter().all(|&m| m));
    }

    #[test]
    fn full_satisfaction_in_one_step() {
        let env = Environment::synthetic(perfect_registry());
        let s = env.reset(&prompt()).unwrap();
        let out = env.step(&s, 0, &mut rng::stream(0, &[])).unwrap();
        assert!(out.done && !out.info.truncated);
        assert!((out.reward - 0.95).abs() < 1e-12);
        assert_eq!(env.legal_actions(&out.state), vec![false, false]);
        assert!(matches!(
            env.step(&out.state, 1, &mut rng::stream(0, &[])),
            Err(Error::SteppedAfterDone)
        ));
    }

    #[test]
    fn wrong_modality_is_rejected() {
        let env = Environment::synthetic(Registry::default_synthetic());
        let s = env.reset(&prompt()).unwrap();
        assert!(matches!(
            env.step(&s, 9, &mut rng::stream(0, &[])),
            Err(Error::IneligibleAction { action: 9 })
        ));
    }

    #[test]
    fn budget_truncation_at_t_max() {
        let mut reg = Registry::new();
        for (index, modality) in [(0, Modality::T2I), (1, Modality::I2I)] {
            reg.register(ExpertSpec {
                index,
                name: format!("e{index}"),
                modality,
                backend: Backend::Synthetic(SkillProfile::uniform(0.0, 0.0, 1.0)),
            })
            .unwrap();
        }
        let env = Environment::synthetic(reg);
        let many: Vec<Atom> = TaskCategory::ALL
            .iter()
            .take(6)
            .map(|&c| Atom::new(c, "k", "v"))
            .collect();
        let p = Prompt::new(0, many, None).unwrap();
        let mut s = env.reset(&p).unwrap();
        let mut r = rng::stream(0, &[]);
        let mut last = None;
        while !s.done {
            let a = if s.canvas.is_blank() { 0 } else { 1 };
            let out = env.step(&s, a, &mut r).unwrap();
            last = Some((out.reward, out.info.clone()));
            s = out.state;
        }
        assert_eq!(s.t, 6);
        let (reward, info) = last.unwrap();
        assert!(info.truncated);
        // Six atoms over six categories: content 0, spatial 0, quality 0, no style.
        assert!((reward - (2.5 / 10.0 - 0.30)).abs() < 1e-12, "{reward}");
    }
}
