//! The task manager: pick-and-place action bookkeeping driven by release
//! contacts and grab attempts, with a hidden tick-based completion timer.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{parse_toml, DocumentError};
use crate::scene::{Contact, SceneState};
use crate::text::{find_phrase, normalize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub id: String,
    pub object_id: String,
    pub target_id: String,
    /// Canonical wording, e.g. "place the apple in the wooden bowl".
    pub phrase: String,
}

/// Whether a task's scenario was represented in training data. Only used to
/// group evaluation results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Familiarity {
    #[default]
    Familiar,
    Unfamiliar,
}

impl Familiarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Familiarity::Familiar => "familiar",
            Familiarity::Unfamiliar => "unfamiliar",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub environment: String,
    pub goal_text: String,
    #[serde(default)]
    pub ordered: bool,
    #[serde(default)]
    pub familiarity: Familiarity,
    pub actions: Vec<ActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub completed: Vec<String>,
    pub wrong_action_count: u32,
    pub start_tick: u64,
    pub end_tick: Option<u64>,
    pub tick_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrongReason {
    OutOfOrder,
    WrongObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskEvent {
    ActionCompleted {
        action_id: String,
    },
    WrongAction {
        reason: WrongReason,
        object_id: String,
    },
    TaskComplete {
        elapsed_seconds: f64,
        wrong_action_count: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("task does not fit scenario: {0}")]
    SceneMismatch(String),
}

impl TaskError {
    pub fn code(&self) -> &'static str {
        "TASK_SCENE_MISMATCH"
    }
}

/// Parses a task document and checks its scene-independent invariants.
pub fn load_task(text: &str) -> Result<TaskSpec, DocumentError> {
    let task: TaskSpec = parse_toml(text)?;
    task.check_shape()?;
    Ok(task)
}

impl TaskSpec {
    fn check_shape(&self) -> Result<(), DocumentError> {
        let invalid = |m: String| Err(DocumentError::Validation(m));
        if self.id.trim().is_empty() {
            return invalid("task id must be nonempty".into());
        }
        if self.goal_text.trim().is_empty() {
            return invalid(format!("task `{}`: goal_text must be nonempty", self.id));
        }
        if self.actions.is_empty() {
            return invalid(format!("task `{}`: at least one action is required", self.id));
        }
        let mut ids = HashSet::new();
        let mut pairs = HashSet::new();
        for a in &self.actions {
            if !ids.insert(a.id.as_str()) {
                return invalid(format!("task `{}`: duplicate action id `{}`", self.id, a.id));
            }
            if !pairs.insert((a.object_id.as_str(), a.target_id.as_str())) {
                return invalid(format!(
                    "task `{}`: action `{}` repeats an object/target pair",
                    self.id, a.id
                ));
            }
            if a.phrase.trim().is_empty() {
                return invalid(format!("task `{}`: action `{}` has no phrase", self.id, a.id));
            }
        }
        Ok(())
    }

    /// Checks every action against the scene it will run in.
    pub fn validate_against(&self, scene: &SceneState) -> Result<(), TaskError> {
        let mismatch = |m: String| Err(TaskError::SceneMismatch(m));
        if self.environment != scene.name {
            return mismatch(format!(
                "task `{}` targets environment `{}`, scene is `{}`",
                self.id, self.environment, scene.name
            ));
        }
        if self.check_shape().is_err() {
            return mismatch(format!("task `{}` is malformed", self.id));
        }
        for a in &self.actions {
            let Some(obj) = scene.object(&a.object_id) else {
                return mismatch(format!("action `{}`: no object `{}`", a.id, a.object_id));
            };
            if !obj.grabbable {
                return mismatch(format!("action `{}`: `{}` is not grabbable", a.id, a.object_id));
            }
            let Some(target) = scene.object(&a.target_id) else {
                return mismatch(format!("action `{}`: no target `{}`", a.id, a.target_id));
            };
            if !target.is_target {
                return mismatch(format!("action `{}`: `{}` is not a target", a.id, a.target_id));
            }
            let phrase = normalize(&a.phrase);
            if find_phrase(&phrase, &normalize(&obj.name)).is_none()
                || find_phrase(&phrase, &normalize(&target.name)).is_none()
            {
                return mismatch(format!(
                    "action `{}`: phrase must name both `{}` and `{}`",
                    a.id, obj.name, target.name
                ));
            }
        }
        Ok(())
    }

    pub fn action(&self, id: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.id == id)
    }

    pub fn uses_object(&self, object_id: &str) -> bool {
        self.actions.iter().any(|a| a.object_id == object_id)
    }

    /// Distinct action objects in action order.
    pub fn action_objects(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.actions
            .iter()
            .map(|a| a.object_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    pub fn start_task(&self, scene: &SceneState) -> Result<TaskProgress, TaskError> {
        self.validate_against(scene)?;
        Ok(TaskProgress {
            completed: Vec::new(),
            wrong_action_count: 0,
            start_tick: scene.tick,
            end_tick: None,
            tick_dt: scene.tick_dt,
        })
    }

    /// Actions that may be completed next, in task order. Ordered tasks
    /// allow only the first pending action.
    pub fn valid_next_actions(&self, progress: &TaskProgress) -> Vec<&ActionSpec> {
        let mut pending = self
            .actions
            .iter()
            .filter(|a| !progress.completed.contains(&a.id));
        if self.ordered {
            pending.next().into_iter().collect()
        } else {
            pending.collect()
        }
    }

    pub fn valid_next_action_ids(&self, progress: &TaskProgress) -> BTreeSet<String> {
        self.valid_next_actions(progress)
            .into_iter()
            .map(|a| a.id.clone())
            .collect()
    }

    pub fn is_complete(&self, progress: &TaskProgress) -> bool {
        self.actions.iter().all(|a| progress.completed.contains(&a.id))
    }

    fn action_for_contact(&self, contact: &Contact) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| {
            (a.object_id == contact.object && a.target_id == contact.other)
                || (a.object_id == contact.other && a.target_id == contact.object)
        })
    }

    /// Applies release contacts observed at `tick`.
    pub fn on_contacts(
        &self,
        progress: &TaskProgress,
        contacts: &[Contact],
        tick: u64,
    ) -> (TaskProgress, Vec<TaskEvent>) {
        let mut next = progress.clone();
        let mut events = Vec::new();
        if next.end_tick.is_some() {
            return (next, events);
        }
        for contact in contacts {
            let Some(action) = self.action_for_contact(contact) else {
                continue;
            };
            if next.completed.contains(&action.id) {
                continue;
            }
            let valid = self
                .valid_next_actions(&next)
                .iter()
                .any(|a| a.id == action.id);
            if valid {
                next.completed.push(action.id.clone());
                events.push(TaskEvent::ActionCompleted {
                    action_id: action.id.clone(),
                });
            } else {
                next.wrong_action_count += 1;
                events.push(TaskEvent::WrongAction {
                    reason: WrongReason::OutOfOrder,
                    object_id: action.object_id.clone(),
                });
            }
        }
        if self.is_complete(&next) {
            let end = tick.max(next.start_tick);
            next.end_tick = Some(end);
            events.push(TaskEvent::TaskComplete {
                elapsed_seconds: (end - next.start_tick) as f64 * next.tick_dt,
                wrong_action_count: next.wrong_action_count,
            });
        }
        (next, events)
    }

    /// Called after a successful grab. Grabbing an object that no action
    /// uses counts as a wrong action.
    pub fn on_grab_attempt(
        &self,
        progress: &TaskProgress,
        object_id: &str,
    ) -> (TaskProgress, Option<TaskEvent>) {
        let mut next = progress.clone();
        if next.end_tick.is_some() || self.uses_object(object_id) {
            return (next, None);
        }
        next.wrong_action_count += 1;
        (
            next,
            Some(TaskEvent::WrongAction {
                reason: WrongReason::WrongObject,
                object_id: object_id.to_string(),
            }),
        )
    }
}

impl TaskProgress {
    pub fn elapsed_seconds(&self) -> Option<f64> {
        self.end_tick
            .map(|end| (end - self.start_tick) as f64 * self.tick_dt)
    }
}
