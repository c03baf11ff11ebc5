//! The reflective half of an episode: scoring a step, rewriting the residual
//! command ledger, enforcing the retry budget and choosing the next command.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::env::Prompt;
use crate::registry::CanvasState;
use crate::sim::Atom;
use crate::{Error, Result};

/// Maximum number of attempts a command may receive before it is abandoned.
pub const MAX_ATTEMPTS: u32 = 3;

/// Editing-operation taxonomy used for routing analysis and skill profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    AddObject,
    RemoveObject,
    ObjectResizing,
    BackgroundReplacement,
    StyleTransfer,
    AddText,
    LightingChange,
    ColorChange,
    SpatialRearrange,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 9] = [
        TaskCategory::AddObject,
        TaskCategory::RemoveObject,
        TaskCategory::ObjectResizing,
        TaskCategory::BackgroundReplacement,
        TaskCategory::StyleTransfer,
        TaskCategory::AddText,
        TaskCategory::LightingChange,
        TaskCategory::ColorChange,
        TaskCategory::SpatialRearrange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::AddObject => "add_object",
            TaskCategory::RemoveObject => "remove_object",
            TaskCategory::ObjectResizing => "object_resizing",
            TaskCategory::BackgroundReplacement => "background_replacement",
            TaskCategory::StyleTransfer => "style_transfer",
            TaskCategory::AddText => "add_text",
            TaskCategory::LightingChange => "lighting_change",
            TaskCategory::ColorChange => "color_change",
            TaskCategory::SpatialRearrange => "spatial_rearrange",
        }
    }

    pub fn index(self) -> usize {
        TaskCategory::ALL.iter().position(|&c| c == self).unwrap()
    }

    /// Categories scored by the spatial-configuration rubric dimension.
    pub fn is_spatial(self) -> bool {
        matches!(
            self,
            TaskCategory::SpatialRearrange | TaskCategory::ObjectResizing
        )
    }

    pub fn is_removal(self) -> bool {
        self == TaskCategory::RemoveObject
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task category `{s}`")))
    }
}

/// A single instruction taken from the residual ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicCommand {
    pub id: u64,
    pub text: String,
    pub category: TaskCategory,
    pub payload: Vec<Atom>,
    pub attempts: u32,
}

impl AtomicCommand {
    /// Builds a command whose text and category are derived from its atoms.
    pub fn from_atoms(id: u64, payload: Vec<Atom>) -> Self {
        let text = payload
            .iter()
            .map(Atom::phrase)
            .collect::<Vec<_>>()
            .join(" and ");
        let mut cmd = AtomicCommand {
            id,
            text,
            category: TaskCategory::AddObject,
            payload,
            attempts: 0,
        };
        cmd.category = classify_task(&cmd);
        cmd
    }

    /// A command known only by its text, as produced by a remote critic.
    pub fn from_text(id: u64, text: impl Into<String>) -> Self {
        let mut cmd = AtomicCommand {
            id,
            text: text.into(),
            category: TaskCategory::AddObject,
            payload: Vec::new(),
            attempts: 0,
        };
        cmd.category = classify_task(&cmd);
        cmd
    }

    /// Atoms of this command not yet present on `canvas`.
    pub fn unsatisfied<'a>(&'a self, canvas: &'a CanvasState) -> impl Iterator<Item = &'a Atom> {
        self.payload.iter().filter(move |a| !canvas.satisfies(a))
    }
}

/// The residual ledger: outstanding commands in insertion order, plus the
/// commands that ran out of attempts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandSet {
    pub commands: Vec<AtomicCommand>,
    pub abandoned: Vec<AtomicCommand>,
    pub next_id: u64,
}

impl CommandSet {
    pub fn with_next_id(next_id: u64) -> Self {
        CommandSet {
            next_id,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AtomicCommand> {
        self.commands.iter()
    }

    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Appends a command, keeping `next_id` ahead of every stored id.
    pub fn push(&mut self, cmd: AtomicCommand) {
        self.next_id = self.next_id.max(cmd.id + 1);
        self.commands.push(cmd);
    }

    fn abandoned_atoms(&self) -> BTreeSet<&Atom> {
        self.abandoned
            .iter()
            .flat_map(|c| c.payload.iter())
            .collect()
    }
}

/// Rubric dimensions, each in `[0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subscores {
    pub content: f64,
    pub spatial: f64,
    pub visual: f64,
    pub style: f64,
}

impl Subscores {
    pub fn clamped(self) -> Self {
        let c = |x: f64| x.clamp(0.0, 10.0);
        Subscores {
            content: c(self.content),
            spatial: c(self.spatial),
            visual: c(self.visual),
            style: c(self.style),
        }
    }

    /// Unweighted mean of the four dimensions.
    pub fn mean(&self) -> f64 {
        (self.content + self.spatial + self.visual + self.style) / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub raw: f64,
    pub subscores: Option<Subscores>,
    pub completed: bool,
    pub residual: CommandSet,
}

impl CriticVerdict {
    pub fn from_subscores(subscores: Subscores, completed: bool, residual: CommandSet) -> Self {
        let subscores = subscores.clamped();
        CriticVerdict {
            raw: subscores.mean(),
            subscores: Some(subscores),
            completed,
            residual,
        }
    }
}

/// Scores a step and proposes the residual ledger.
pub trait Critic: Send + Sync {
    fn score(
        &self,
        prev: &CanvasState,
        curr: &CanvasState,
        c_curr: &AtomicCommand,
        c_rem: &CommandSet,
        prompt: &Prompt,
        quality: f64,
    ) -> Result<CriticVerdict>;
}

/// Rubric evaluated directly against the symbolic canvas.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticCritic;

impl Critic for SyntheticCritic {
    fn score(
        &self,
        _prev: &CanvasState,
        curr: &CanvasState,
        c_curr: &AtomicCommand,
        c_rem: &CommandSet,
        prompt: &Prompt,
        quality: f64,
    ) -> Result<CriticVerdict> {
        Ok(critic_score(curr, c_curr, c_rem, prompt, quality))
    }
}

/// The synthetic rubric.
///
/// Content accuracy is the satisfied share of prompt atoms, spatial
/// configuration the satisfied share of spatial atoms (10 when the prompt has
/// none), visual quality is the expert's quality passthrough and style
/// consistency is all-or-nothing on the prompt's style tag.
pub fn critic_score(
    curr: &CanvasState,
    c_curr: &AtomicCommand,
    c_rem: &CommandSet,
    prompt: &Prompt,
    quality: f64,
) -> CriticVerdict {
    let total = prompt.atoms.len();
    let satisfied = prompt.atoms.iter().filter(|a| curr.satisfies(a)).count();
    let content = if total == 0 {
        10.0
    } else {
        10.0 * satisfied as f64 / total as f64
    };

    let spatial_atoms: Vec<&Atom> = prompt
        .atoms
        .iter()
        .filter(|a| a.category.is_spatial())
        .collect();
    let spatial = if spatial_atoms.is_empty() {
        10.0
    } else {
        let ok = spatial_atoms.iter().filter(|a| curr.satisfies(a)).count();
        10.0 * ok as f64 / spatial_atoms.len() as f64
    };

    let style = match &prompt.style {
        None => 10.0,
        Some(tag) if curr.style() == Some(tag.as_str()) => 10.0,
        Some(_) => 0.0,
    };

    let completed = c_curr.unsatisfied(curr).next().is_none();
    let residual = decompose(prompt, curr, c_curr, c_rem);
    CriticVerdict::from_subscores(
        Subscores {
            content,
            spatial,
            visual: quality,
            style,
        },
        completed,
        residual,
    )
}

fn group_by_category(atoms: Vec<Atom>) -> Vec<Vec<Atom>> {
    let mut groups: Vec<(TaskCategory, Vec<Atom>)> = Vec::new();
    for atom in atoms {
        match groups.iter_mut().find(|(c, _)| *c == atom.category) {
            Some((_, g)) => g.push(atom),
            None => groups.push((atom.category, vec![atom])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Rebuilds the residual ledger from the canvas.
///
/// Existing commands keep their id and attempt count with their payload pruned
/// to unsatisfied atoms. The unsatisfied part of `c_curr` is split per category
/// (the first group keeps `c_curr`'s id) and carries `c_curr`'s attempt count
/// unchanged; [`apply_attempt_policy`] adjusts it afterwards. Unsatisfied prompt
/// atoms not owned by any command or abandoned become fresh commands.
pub fn decompose(
    prompt: &Prompt,
    curr: &CanvasState,
    c_curr: &AtomicCommand,
    c_rem: &CommandSet,
) -> CommandSet {
    let mut out = CommandSet {
        commands: Vec::new(),
        abandoned: c_rem.abandoned.clone(),
        next_id: c_rem.next_id.max(c_curr.id + 1),
    };
    let abandoned = c_rem.abandoned_atoms();
    let mut owned: BTreeSet<&Atom> = BTreeSet::new();

    for cmd in c_rem.iter() {
        owned.extend(cmd.payload.iter());
        let remaining: Vec<Atom> = cmd.unsatisfied(curr).cloned().collect();
        if remaining.is_empty() && !cmd.payload.is_empty() {
            continue;
        }
        let mut kept = cmd.clone();
        if !cmd.payload.is_empty() && remaining.len() != cmd.payload.len() {
            let rebuilt = AtomicCommand::from_atoms(cmd.id, remaining);
            kept.text = rebuilt.text;
            kept.payload = rebuilt.payload;
        }
        out.push(kept);
    }

    owned.extend(c_curr.payload.iter());
    let remaining: Vec<Atom> = c_curr.unsatisfied(curr).cloned().collect();
    for (i, group) in group_by_category(remaining).into_iter().enumerate() {
        let id = if i == 0 { c_curr.id } else { out.fresh_id() };
        let mut cmd = AtomicCommand::from_atoms(id, group);
        cmd.attempts = c_curr.attempts;
        out.push(cmd);
    }

    let orphans: Vec<Atom> = prompt
        .atoms
        .iter()
        .filter(|a| !curr.satisfies(a) && !owned.contains(a) && !abandoned.contains(a))
        .cloned()
        .collect();
    for group in group_by_category(orphans) {
        let id = out.fresh_id();
        out.push(AtomicCommand::from_atoms(id, group));
    }
    out
}

fn derived_from(cmd: &AtomicCommand, c_curr: &AtomicCommand) -> bool {
    if cmd.payload.is_empty() {
        cmd.id == c_curr.id || (c_curr.payload.is_empty() && cmd.text == c_curr.text)
    } else {
        cmd.payload.iter().all(|a| c_curr.payload.contains(a))
    }
}

/// Enforces the retry budget on the command that was just executed.
///
/// Completed commands leave the ledger. An incomplete command re-enters with
/// its attempt counter incremented while that count stays below three;
/// otherwise it is moved to `abandoned` with three recorded attempts.
pub fn apply_attempt_policy(
    verdict: &CriticVerdict,
    c_curr: &AtomicCommand,
    residual: CommandSet,
) -> CommandSet {
    let (mut derived, rest): (Vec<_>, Vec<_>) = residual
        .commands
        .into_iter()
        .partition(|c| derived_from(c, c_curr));
    let mut out = CommandSet {
        commands: rest,
        abandoned: residual.abandoned,
        next_id: residual.next_id,
    };
    if verdict.completed {
        return out;
    }
    if derived.is_empty() {
        derived.push(c_curr.clone());
    }
    let attempts = c_curr.attempts + 1;
    for mut cmd in derived {
        cmd.attempts = attempts;
        if attempts < MAX_ATTEMPTS {
            out.push(cmd);
        } else {
            out.abandoned.push(cmd);
        }
    }
    out
}

/// Pops the command with the fewest attempts, earliest id first.
pub fn extract_command(mut c_rem: CommandSet) -> (Option<AtomicCommand>, CommandSet) {
    let pick = c_rem
        .commands
        .iter()
        .enumerate()
        .min_by_key(|(_, c)| (c.attempts, c.id))
        .map(|(i, _)| i);
    let cmd = pick.map(|i| c_rem.commands.remove(i));
    (cmd, c_rem)
}

const KEYWORDS: &[(TaskCategory, &[&str])] = &[
    (
        TaskCategory::RemoveObject,
        &["remove", "erase", "delete", "without"],
    ),
    (
        TaskCategory::ObjectResizing,
        &["resize", "larger", "smaller", "bigger", "shrink", "enlarge"],
    ),
    (
        TaskCategory::BackgroundReplacement,
        &["background", "backdrop"],
    ),
    (
        TaskCategory::StyleTransfer,
        &["style", "render", "watercolor", "painting"],
    ),
    (
        TaskCategory::AddText,
        &["write", "text", "caption", "label", "sign"],
    ),
    (
        TaskCategory::LightingChange,
        &["brighter", "darker", "lighting", "light", "sunset", "glow"],
    ),
    (
        TaskCategory::ColorChange,
        &["color", "colour", "recolor", "paint", "tint"],
    ),
    (
        TaskCategory::SpatialRearrange,
        &["move", "left", "right", "above", "below", "next"],
    ),
    (TaskCategory::AddObject, &["add", "insert", "place"]),
];

/// Deterministic category assignment.
///
/// Commands with atoms take the majority category of their payload (ties go to
/// the category seen first). Text-only commands are matched against keyword
/// lists; anything unrecognised is `add_object`.
pub fn classify_task(command: &AtomicCommand) -> TaskCategory {
    if !command.payload.is_empty() {
        let mut counts = [0usize; 9];
        let mut first_seen = [usize::MAX; 9];
        for (pos, atom) in command.payload.iter().enumerate() {
            let i = atom.category.index();
            counts[i] += 1;
            first_seen[i] = first_seen[i].min(pos);
        }
        return TaskCategory::ALL
            .into_iter()
            .max_by(|a, b| {
                let (ia, ib) = (a.index(), b.index());
                counts[ia]
                    .cmp(&counts[ib])
                    .then(first_seen[ib].cmp(&first_seen[ia]))
            })
            .unwrap();
    }
    let words: Vec<String> = command
        .text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect();
    KEYWORDS
        .iter()
        .find(|(_, kws)| kws.iter().any(|k| words.iter().any(|w| w == k)))
        .map(|(c, _)| *c)
        .unwrap_or(TaskCategory::AddObject)
}

/// Request sent to a remote critic: the arguments of one reward call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticRequest {
    pub prev_canvas: Option<String>,
    pub curr_canvas: Option<String>,
    pub current_command: String,
    pub remaining_commands: Vec<String>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticResponse {
    pub raw: f64,
    pub completed: bool,
    pub residual: Vec<String>,
}

pub trait CriticTransport: Send + Sync {
    fn call(&self, request: &CriticRequest, timeout: Duration) -> Result<CriticResponse, String>;
}

impl<F> CriticTransport for F
where
    F: Fn(&CriticRequest, Duration) -> Result<CriticResponse, String> + Send + Sync,
{
    fn call(&self, request: &CriticRequest, timeout: Duration) -> Result<CriticResponse, String> {
        self(request, timeout)
    }
}

/// Critic backed by an external judge.
///
/// Residual texts that match an existing ledger entry keep that entry's id and
/// attempts; new texts become fresh commands classified by keyword.
#[derive(Clone)]
pub struct RemoteCritic {
    pub transport: Arc<dyn CriticTransport>,
    pub timeout: Duration,
}

impl RemoteCritic {
    pub fn new(transport: Arc<dyn CriticTransport>) -> Self {
        RemoteCritic {
            transport,
            timeout: Duration::from_secs(120),
        }
    }
}

impl Critic for RemoteCritic {
    fn score(
        &self,
        prev: &CanvasState,
        curr: &CanvasState,
        c_curr: &AtomicCommand,
        c_rem: &CommandSet,
        prompt: &Prompt,
        _quality: f64,
    ) -> Result<CriticVerdict> {
        let request = CriticRequest {
            prev_canvas: prev.reference(),
            curr_canvas: curr.reference(),
            current_command: c_curr.text.clone(),
            remaining_commands: c_rem.iter().map(|c| c.text.clone()).collect(),
            prompt: prompt.text.clone(),
        };
        let resp = self
            .transport
            .call(&request, self.timeout)
            .map_err(Error::RemoteFailure)?;
        if !resp.raw.is_finite() || !(0.0..=10.0).contains(&resp.raw) {
            return Err(Error::RemoteFailure(format!(
                "raw score {} outside [0, 10]",
                resp.raw
            )));
        }
        let mut residual = CommandSet {
            commands: Vec::new(),
            abandoned: c_rem.abandoned.clone(),
            next_id: c_rem.next_id.max(c_curr.id + 1),
        };
        for text in resp.residual {
            // The executed command is re-queued by the attempt policy, not here.
            if text == c_curr.text {
                continue;
            }
            match c_rem.iter().find(|c| c.text == text) {
                Some(existing) => residual.push(existing.clone()),
                None => {
                    let id = residual.fresh_id();
                    residual.push(AtomicCommand::from_text(id, text));
                }
            }
        }
        Ok(CriticVerdict {
            raw: resp.raw,
            subscores: None,
            completed: resp.completed,
            residual,
        })
    }
}
