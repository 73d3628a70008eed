//! Instructing-ability evaluation: every non-final state of a task is put to
//! a backend as a NEXT_ACTION request and the reply is checked against the
//! valid next actions.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use taskpilot_core::assistant::{AssistantReply, AssistantRequest, Vocabulary, NEXT_STEP_QUESTION};
use taskpilot_core::dataset::{enumerate_states, DatasetError, ProgressState};
use taskpilot_core::gateway::{
    match_response, parse_reply, send, AssistantBackend, Exchange, GatewayError, PromptGroup,
};
use taskpilot_core::snapshot::{project_to_viewpoint, world_snapshot};
use taskpilot_core::task::Familiarity;
use taskpilot_core::{Scenario, TaskSpec, ViewpointName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step_index: usize,
    pub matched: bool,
    pub reply_text: String,
    /// Phrases of the actions that were valid at this step.
    pub valid: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub backend: String,
    pub task: String,
    pub environment: String,
    pub familiarity: Familiarity,
    pub steps: Vec<StepOutcome>,
}

impl TaskEvaluation {
    pub fn matched(&self) -> usize {
        self.steps.iter().filter(|s| s.matched).count()
    }

    pub fn success_rate(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.matched() as f64 / self.steps.len() as f64
    }
}

/// Success rate for one (environment, familiarity) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub environment: String,
    pub familiarity: Familiarity,
    pub matched: usize,
    pub total: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructReport {
    pub backend: String,
    pub tasks: Vec<TaskEvaluation>,
    pub rates: Vec<RateRow>,
}

impl InstructReport {
    pub fn new(backend: impl Into<String>, tasks: Vec<TaskEvaluation>) -> Self {
        let rates = success_rates(&tasks);
        InstructReport {
            backend: backend.into(),
            tasks,
            rates,
        }
    }
}

pub fn success_rates(tasks: &[TaskEvaluation]) -> Vec<RateRow> {
    let mut cells: BTreeMap<(String, Familiarity), (usize, usize)> = BTreeMap::new();
    for t in tasks {
        let cell = cells.entry((t.environment.clone(), t.familiarity)).or_default();
        cell.0 += t.matched();
        cell.1 += t.steps.len();
    }
    cells
        .into_iter()
        .map(|((environment, familiarity), (matched, total))| RateRow {
            environment,
            familiarity,
            matched,
            total,
            success_rate: if total == 0 { 0.0 } else { matched as f64 / total as f64 },
        })
        .collect()
}

pub fn instructing_eval(
    backend: &dyn AssistantBackend,
    scenario: &Scenario,
    task: &TaskSpec,
) -> Result<TaskEvaluation, DatasetError> {
    let states = enumerate_states(scenario, task)?;
    Ok(evaluate_states(backend, scenario, task, &states))
}

/// Like [`instructing_eval`] over states already enumerated.
pub fn evaluate_states(
    backend: &dyn AssistantBackend,
    scenario: &Scenario,
    task: &TaskSpec,
    states: &[ProgressState],
) -> TaskEvaluation {
    let steps = states
        .iter()
        .filter(|s| !task.is_complete(&s.progress))
        .map(|state| {
            let snapshot = match scenario.viewpoint(ViewpointName::Center) {
                Some(vp) => project_to_viewpoint(&state.scene, vp),
                None => world_snapshot(&state.scene),
            };
            let request = AssistantRequest {
                snapshot,
                goal_text: task.goal_text.clone(),
                history: None,
                user_text: NEXT_STEP_QUESTION.to_string(),
            };
            let exchange = Exchange {
                group: PromptGroup::NextAction,
                request: &request,
                task,
                progress: &state.progress,
                scene: &state.scene,
            };
            let valid = task.valid_next_actions(&state.progress);
            let valid_phrases = valid.iter().map(|a| a.phrase.clone()).collect();
            match send(backend, &exchange) {
                Ok(reply) => {
                    let parsed = parse_reply(&reply.text, &Vocabulary::from_scene(&state.scene));
                    StepOutcome {
                        step_index: state.step_index,
                        matched: match_response(&parsed, &valid, &state.scene),
                        reply_text: reply.text,
                        valid: valid_phrases,
                        error: None,
                    }
                }
                Err(e) => StepOutcome {
                    step_index: state.step_index,
                    matched: false,
                    reply_text: String::new(),
                    valid: valid_phrases,
                    error: Some(format!("{}: {e}", e.code())),
                },
            }
        })
        .collect();
    TaskEvaluation {
        backend: backend.name().to_string(),
        task: task.id.clone(),
        environment: task.environment.clone(),
        familiarity: task.familiarity,
        steps,
    }
}

/// Suggests the phrase of a uniformly drawn task action, done or not.
pub struct RandomBackend {
    rng: Mutex<ChaCha8Rng>,
}

impl RandomBackend {
    pub fn new(seed: u64) -> Self {
        RandomBackend {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl AssistantBackend for RandomBackend {
    fn name(&self) -> &str {
        "random"
    }

    fn respond(&self, ex: &Exchange<'_>) -> Result<AssistantReply, GatewayError> {
        let mut rng = self.rng.lock().expect("rng lock");
        let action = ex
            .task
            .actions
            .choose(&mut *rng)
            .ok_or_else(|| GatewayError::BackendUnavailable("task has no actions".into()))?;
        Ok(parse_reply(&action.phrase, &Vocabulary::from_scene(ex.scene)))
    }
}
