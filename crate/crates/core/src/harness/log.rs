//! JSONL step logs and per-episode aggregation.
//!
//! Every line of an episode log is one [`StepRecord`]. Episodes are the runs
//! of consecutive records sharing an `episode` id.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::reflection::{Subscores, TaskCategory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u64,
    pub seed: u64,
    pub prompt_id: u64,
    /// Step number after the increment, starting at 1.
    pub t: u32,
    pub expert: usize,
    pub category: TaskCategory,
    pub command_id: u64,
    pub attempts: u32,
    pub raw: f64,
    pub subscores: Option<Subscores>,
    pub reward: f64,
    pub completed: bool,
    pub mask: Vec<bool>,
    pub done: bool,
    pub truncated: bool,
    /// Fraction of prompt atoms on the canvas after this step.
    pub oracle_fraction: f64,
}

/// One row of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub episode: u64,
    pub epsilon: f64,
    pub reward: f64,
    pub loss: Option<f64>,
    pub synced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub seed: u64,
    pub prompt_id: u64,
    pub steps: Vec<StepRecord>,
    #[serde(rename = "return")]
    pub return_: f64,
    pub length: usize,
    pub oracle_fraction: f64,
}

impl EpisodeRecord {
    pub fn from_steps(steps: Vec<StepRecord>) -> Result<Self> {
        let first = steps.first().ok_or(Error::EmptyList)?;
        Ok(EpisodeRecord {
            episode: first.episode,
            seed: first.seed,
            prompt_id: first.prompt_id,
            return_: steps.iter().map(|s| s.reward).sum(),
            length: steps.len(),
            oracle_fraction: steps.last().map_or(0.0, |s| s.oracle_fraction),
            steps,
        })
    }
}

/// Groups consecutive records by episode id.
pub fn group_episodes(records: Vec<StepRecord>) -> Vec<EpisodeRecord> {
    let mut out: Vec<Vec<StepRecord>> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(run) if run[0].episode == r.episode => run.push(r),
            _ => out.push(vec![r]),
        }
    }
    out.into_iter()
        .map(|steps| EpisodeRecord::from_steps(steps).expect("runs are non-empty"))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    append_jsonl(&mut out, items)?;
    out.flush()?;
    Ok(())
}

pub fn append_jsonl<W: Write, T: Serialize>(out: &mut W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}

pub fn write_episode_log(path: &Path, records: &[StepRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_episode_log(path: &Path) -> Result<Vec<StepRecord>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(episode: u64, t: u32, reward: f64) -> StepRecord {
        StepRecord {
            episode,
            seed: 3,
            prompt_id: 10 + episode,
            t,
            expert: if t == 1 { 4 } else { 8 },
            category: TaskCategory::AddObject,
            command_id: 0,
            attempts: 0,
            raw: 7.25,
            subscores: Some(Subscores {
                content: 8.0,
                spatial: 7.0,
                visual: 6.5,
                style: 7.5,
            }),
            reward,
            completed: false,
            mask: vec![true, false],
            done: false,
            truncated: false,
            oracle_fraction: 0.1 * f64::from(t),
        }
    }

    #[test]
    fn round_trip_and_grouping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.jsonl");
        let recs = vec![record(0, 1, 0.5), record(0, 2, 0.3), record(1, 1, 0.9)];
        write_episode_log(&path, &recs).unwrap();
        assert_eq!(read_episode_log(&path).unwrap(), recs);
        let eps = group_episodes(recs);
        assert_eq!(eps.len(), 2);
        assert_eq!(eps[0].length, 2);
        assert!((eps[0].return_ - 0.8).abs() < 1e-12);
        assert!((eps[0].oracle_fraction - 0.2).abs() < 1e-12);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&record(0, 1, 0.5)).unwrap();
        fs::write(&path, format!("{good}\n{good}\n{{\"episode\": oops}}\n")).unwrap();
        match read_episode_log(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_trace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        assert!(read_episode_log(&path).unwrap().is_empty());
    }
}
