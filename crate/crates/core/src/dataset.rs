//! Guidance-question dataset: progress states, four-viewpoint snapshots,
//! three prompt groups per snapshot, seeded train/val/test split.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assistant::{self, NEXT_STEP_QUESTION};
use crate::gateway::{build_prompt, GatewayError, PromptGroup};
use crate::scenario::Scenario;
use crate::scene::{SceneError, SceneState};
use crate::snapshot::{project_to_viewpoint, SceneSnapshot, ViewpointName};
use crate::task::{TaskError, TaskEvent, TaskProgress, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub record_id: String,
    pub scenario: String,
    pub task: String,
    pub step_index: usize,
    pub viewpoint: ViewpointName,
    pub group: PromptGroup,
    pub input_text: String,
    pub target_text: String,
    pub snapshot: SceneSnapshot,
    /// Unset until `split` assigns one.
    pub split: Option<Split>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Prompt(#[from] GatewayError),
    #[error("placing `{0}` did not complete its action")]
    PlacementFailed(String),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

impl DatasetError {
    pub fn code(&self) -> &'static str {
        match self {
            DatasetError::Task(e) => e.code(),
            DatasetError::Scene(e) => e.code(),
            DatasetError::Prompt(e) => e.code(),
            DatasetError::PlacementFailed(_) => "PLACEMENT_FAILED",
            DatasetError::BadFractions(_) => "BAD_FRACTIONS",
            DatasetError::Io(_) => "IO_ERROR",
            DatasetError::BadRecord { .. } => "BAD_RECORD",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProgressState {
    pub step_index: usize,
    pub scene: SceneState,
    pub progress: TaskProgress,
}

/// The initial state plus one state after each action, placing action
/// objects on their targets in listed order. One tick passes per placement.
pub fn enumerate_states(scenario: &Scenario, task: &TaskSpec) -> Result<Vec<ProgressState>, DatasetError> {
    let mut scene = scenario.scene.clone();
    let mut progress = task.start_task(&scene)?;
    let mut states = vec![ProgressState {
        step_index: 0,
        scene: scene.clone(),
        progress: progress.clone(),
    }];
    for (k, action) in task.actions.iter().enumerate() {
        let target = scene
            .object(&action.target_id)
            .ok_or_else(|| SceneError::NoSuchObject(action.target_id.clone()))?
            .position;
        scene.advance_to(scene.tick + 1);
        scene.teleport(&action.object_id, target)?;
        let contacts = scene.contacts_of(&action.object_id)?;
        let (next, events) = task.on_contacts(&progress, &contacts, scene.tick);
        let completed = events
            .iter()
            .any(|e| matches!(e, TaskEvent::ActionCompleted { action_id } if *action_id == action.id));
        if !completed {
            return Err(DatasetError::PlacementFailed(action.object_id.clone()));
        }
        progress = next;
        states.push(ProgressState {
            step_index: k + 1,
            scene: scene.clone(),
            progress: progress.clone(),
        });
    }
    Ok(states)
}

fn completed_phrases(task: &TaskSpec, progress: &TaskProgress) -> Vec<String> {
    progress
        .completed
        .iter()
        .filter_map(|id| task.action(id).map(|a| a.phrase.clone()))
        .collect()
}

/// Builds the unsplit records in (step, viewpoint, group) order.
pub fn generate(scenario: &Scenario, task: &TaskSpec) -> Result<Vec<PromptRecord>, DatasetError> {
    let states = enumerate_states(scenario, task)?;
    let relevant = task.action_objects();
    let mut jobs = Vec::new();
    for state in &states {
        for (v, vp) in scenario.viewpoints.iter().enumerate() {
            for group in PromptGroup::ALL {
                jobs.push((state, v, vp, group));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(state, v, vp, group)| {
            let scene = &state.scene;
            let snapshot = project_to_viewpoint(scene, vp);
            let (user_text, history, target_text) = match group {
                PromptGroup::Locate => {
                    let locate_index = state.step_index * scenario.viewpoints.len() + v;
                    let id = relevant[locate_index % relevant.len()];
                    let name = scene.object(id).map_or(id, |o| o.name.as_str());
                    let reply = assistant::locate(scene, name);
                    (format!("Where is the {name}?"), None, reply.text)
                }
                PromptGroup::NextAction | PromptGroup::WithHistory => {
                    let reply = assistant::suggest_next(task, &state.progress, scene);
                    let history = (group == PromptGroup::WithHistory)
                        .then(|| completed_phrases(task, &state.progress));
                    (NEXT_STEP_QUESTION.to_string(), history, reply.text)
                }
            };
            let input_text = build_prompt(group, &task.goal_text, &snapshot, history.as_deref(), &user_text)?;
            Ok(PromptRecord {
                record_id: format!("{}-s{}-{}-{}", task.id, state.step_index, vp.name, group),
                scenario: scenario.name().to_string(),
                task: task.id.clone(),
                step_index: state.step_index,
                viewpoint: vp.name,
                group,
                input_text,
                target_text,
                snapshot,
                split: None,
            })
        })
        .collect()
}

/// Record counts per split: floor(n*train), floor(n*val), remainder to test.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], DatasetError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(fractions));
    }
    // the epsilon keeps 0.8*n from landing just under an integer
    let count = |f: f64| ((n as f64 * f + 1e-9).floor() as usize).min(n);
    let train = count(fractions[0]);
    let val = count(fractions[1]).min(n - train);
    Ok([train, val, n - train - val])
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

/// Seeded shuffle of record positions, then contiguous assignment. The
/// records keep their order; only the tags change.
pub fn split(records: &mut [PromptRecord], seed: u64, fractions: [f64; 3]) -> Result<(), DatasetError> {
    let [train, val, _] = split_counts(records.len(), fractions)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = Some(if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(())
}

pub fn write_records(records: &[PromptRecord], path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<PromptRecord>, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::BadRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
