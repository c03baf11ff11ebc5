//! Synthetic prompt world.
//!
//! Prompts are sets of atoms: one verifiable constraint each. The canvas is a
//! set of satisfied atoms, so the rubric and the ground-truth oracles can be
//! evaluated exactly.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Prompt;
use crate::reflection::TaskCategory;
use crate::registry::{CanvasState, Modality, Registry};
use crate::{Error, Result};

/// One constraint of a prompt, e.g. `add_object / boats = 6`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub category: TaskCategory,
    pub key: String,
    pub value: String,
}

impl Atom {
    pub fn new(category: TaskCategory, key: impl Into<String>, value: impl Into<String>) -> Self {
        Atom {
            category,
            key: key.into(),
            value: value.into(),
        }
    }

    /// English rendering used for command and prompt text.
    pub fn phrase(&self) -> String {
        let (k, v) = (&self.key, &self.value);
        match self.category {
            TaskCategory::AddObject => format!("add {v} {k}"),
            TaskCategory::RemoveObject => format!("remove the {k}"),
            TaskCategory::ObjectResizing => format!("resize the {k} to {v}"),
            TaskCategory::BackgroundReplacement => format!("replace the {k} background with {v}"),
            TaskCategory::StyleTransfer => format!("render everything in {v} style"),
            TaskCategory::AddText => format!("write '{v}' on the {k}"),
            TaskCategory::LightingChange => format!("make the {k} {v}"),
            TaskCategory::ColorChange => format!("color the {k} {v}"),
            TaskCategory::SpatialRearrange => format!("move the {k} {v}"),
        }
    }
}

const OBJECTS: &[&str] = &[
    "boats",
    "dogs",
    "lanterns",
    "trees",
    "chairs",
    "kites",
    "cats",
    "bicycles",
    "umbrellas",
    "birds",
    "tents",
    "clocks",
];
const CLUTTER: &[&str] = &[
    "power lines",
    "trash cans",
    "crowd",
    "parked cars",
    "fence",
    "graffiti",
];
const SIZES: &[&str] = &[
    "twice the size",
    "half the size",
    "a larger scale",
    "a smaller scale",
];
const REGIONS: &[&str] = &["scene", "sky", "horizon", "floor"];
const SCENES: &[&str] = &[
    "a beach",
    "a snowy forest",
    "a city skyline",
    "a desert",
    "a harbor",
];
const STYLES: &[&str] = &[
    "watercolor",
    "cyberpunk",
    "ukiyo-e",
    "pixel art",
    "art deco",
];
const SURFACES: &[&str] = &["sign", "banner", "mug", "book cover", "storefront"];
const WORDS: &[&str] = &["OPEN", "HELLO", "SALE", "WELCOME", "CAFE", "2049"];
const LIGHTS: &[&str] = &["brighter", "darker", "warmer", "cooler"];
const COLORS: &[&str] = &["red", "teal", "golden", "violet", "white"];
const PLACES: &[&str] = &["to the left", "to the right", "to the top", "to the bottom"];

fn keys_for(category: TaskCategory) -> &'static [&'static str] {
    match category {
        TaskCategory::AddObject
        | TaskCategory::ObjectResizing
        | TaskCategory::ColorChange
        | TaskCategory::SpatialRearrange => OBJECTS,
        TaskCategory::RemoveObject => CLUTTER,
        TaskCategory::BackgroundReplacement | TaskCategory::LightingChange => REGIONS,
        TaskCategory::StyleTransfer => &["style"],
        TaskCategory::AddText => SURFACES,
    }
}

fn value_for<R: Rng + ?Sized>(category: TaskCategory, rng: &mut R) -> String {
    let pool: &[&str] = match category {
        TaskCategory::AddObject => return rng.random_range(1..=6u32).to_string(),
        TaskCategory::RemoveObject => return "absent".into(),
        TaskCategory::ObjectResizing => SIZES,
        TaskCategory::BackgroundReplacement => SCENES,
        TaskCategory::StyleTransfer => STYLES,
        TaskCategory::AddText => WORDS,
        TaskCategory::LightingChange => LIGHTS,
        TaskCategory::ColorChange => COLORS,
        TaskCategory::SpatialRearrange => PLACES,
    };
    pool.choose(rng).unwrap().to_string()
}

/// Prompt generator over a configurable taxonomy.
#[derive(Debug, Clone)]
pub struct PromptGenerator {
    taxonomy: Vec<TaskCategory>,
    style_probability: f64,
    /// Share of corpus prompts that come with an input image.
    pub edit_probability: f64,
}

impl Default for PromptGenerator {
    fn default() -> Self {
        PromptGenerator {
            taxonomy: TaskCategory::ALL.to_vec(),
            style_probability: 0.5,
            edit_probability: 0.0,
        }
    }
}

impl PromptGenerator {
    pub fn new(taxonomy: Vec<TaskCategory>) -> Result<Self> {
        if taxonomy.len() < 3 {
            return Err(Error::Config("taxonomy needs at least 3 categories".into()));
        }
        Ok(PromptGenerator {
            taxonomy,
            style_probability: 0.5,
            edit_probability: 0.0,
        })
    }

    /// A prompt with `difficulty` atoms, each in its own category while the
    /// taxonomy allows (so at least `min(difficulty, 3)` distinct categories).
    /// Half the prompts carry a style tag, realised as a single
    /// `style_transfer` atom.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        id: u64,
        difficulty: usize,
        rng: &mut R,
    ) -> Result<Prompt> {
        if !(1..=6).contains(&difficulty) {
            return Err(Error::Domain(format!(
                "difficulty {difficulty} outside 1..=6"
            )));
        }
        let styled = self.taxonomy.contains(&TaskCategory::StyleTransfer)
            && rng.random_bool(self.style_probability);
        let n_cats = difficulty.min(self.taxonomy.len());

        let mut pool: Vec<TaskCategory> = self
            .taxonomy
            .iter()
            .copied()
            .filter(|&c| c != TaskCategory::StyleTransfer)
            .collect();
        pool.shuffle(rng);
        let mut cats: Vec<TaskCategory> = Vec::with_capacity(n_cats);
        if styled {
            cats.push(TaskCategory::StyleTransfer);
        }
        cats.extend(pool.into_iter().take(n_cats - cats.len()));

        // Every chosen category gets one atom; the rest go to categories with
        // spare keys. The style category holds exactly one atom.
        let mut counts = vec![1usize; cats.len()];
        let mut extra = difficulty - cats.len();
        while extra > 0 {
            let open: Vec<usize> = (0..cats.len())
                .filter(|&i| counts[i] < keys_for(cats[i]).len())
                .collect();
            let i = *open.choose(rng).expect("key pools exceed six atoms");
            counts[i] += 1;
            extra -= 1;
        }

        let mut atoms = Vec::with_capacity(difficulty);
        for (cat, n) in cats.iter().zip(counts) {
            let keys: Vec<&str> = keys_for(*cat).choose_multiple(rng, n).copied().collect();
            for key in keys {
                atoms.push(Atom::new(*cat, key, value_for(*cat, rng)));
            }
        }
        atoms.shuffle(rng);
        let style = atoms
            .iter()
            .find(|a| a.category == TaskCategory::StyleTransfer)
            .map(|a| a.value.clone());
        Prompt::new(id, atoms, style)
    }

    /// `n` prompts with difficulties drawn uniformly from `difficulty`. A share
    /// `edit_probability` of them start from an opaque input image.
    pub fn corpus<R: Rng + ?Sized>(
        &self,
        n: usize,
        difficulty: std::ops::RangeInclusive<usize>,
        first_id: u64,
        rng: &mut R,
    ) -> Result<Vec<Prompt>> {
        (0..n)
            .map(|i| {
                let d = rng.random_range(difficulty.clone());
                let id = first_id + i as u64;
                let mut prompt = self.generate(id, d, rng)?;
                if self.edit_probability > 0.0 && rng.random_bool(self.edit_probability) {
                    prompt.initial_canvas = Some(CanvasState::External(format!("input://{id}")));
                }
                Ok(prompt)
            })
            .collect()
    }
}

/// Generates one prompt with the default taxonomy.
pub fn generate_prompt<R: Rng + ?Sized>(rng: &mut R, difficulty: usize) -> Result<Prompt> {
    PromptGenerator::default().generate(0, difficulty, rng)
}

/// Share of prompt atoms present on the canvas.
pub fn oracle_fraction(canvas: &CanvasState, prompt: &Prompt) -> f64 {
    if prompt.atoms.is_empty() {
        return 0.0;
    }
    let ok = prompt.atoms.iter().filter(|a| canvas.satisfies(a)).count();
    ok as f64 / prompt.atoms.len() as f64
}

/// Highest-mean editing expert for a category, lowest index on ties.
pub fn best_expert(registry: &Registry, category: TaskCategory) -> Option<usize> {
    registry.best_for(Modality::I2I, category)
}

#[derive(Serialize, Deserialize)]
struct PromptLine {
    id: u64,
    atoms: Vec<Atom>,
    #[serde(default)]
    style: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_image: Option<String>,
}

/// Writes one JSON object per line: `{"id", "atoms", "style", "input_image"?}`.
pub fn write_prompts(path: &Path, prompts: &[Prompt]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for p in prompts {
        let line = PromptLine {
            id: p.id,
            atoms: p.atoms.clone(),
            style: p.style.clone(),
            input_image: match &p.initial_canvas {
                Some(CanvasState::External(r)) => Some(r.clone()),
                _ => None,
            },
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_prompts(path: &Path) -> Result<Vec<Prompt>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut prompts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let raw: PromptLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let mut prompt =
            Prompt::new(raw.id, raw.atoms, raw.style).map_err(|e| parse_err(e.to_string()))?;
        prompt.initial_canvas = raw.input_image.map(CanvasState::External);
        prompts.push(prompt);
    }
    Ok(prompts)
}
