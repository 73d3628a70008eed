//! Rule-based ground-truth assistant. It reads the full task and scene state,
//! so its suggestions are always members of the valid next-action set.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::scene::SceneState;
use crate::snapshot::SceneSnapshot;
use crate::task::{TaskProgress, TaskSpec};
use crate::text::{find_phrase, normalize};

pub const DONE_TEXT: &str = "All actions are done. The task is complete.";
pub const NEXT_STEP_QUESTION: &str = "What is the next step?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantRequest {
    pub snapshot: SceneSnapshot,
    pub goal_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<String>>,
    pub user_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    ActionSuggestion,
    Localization,
    TaskDone,
    Other,
}

/// A suggested pick-and-place, by display name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SuggestedAction {
    pub object: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantReply {
    pub text: String,
    pub kind: ReplyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<SuggestedAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec3>,
}

impl AssistantReply {
    pub fn other(text: impl Into<String>) -> Self {
        AssistantReply {
            text: text.into(),
            kind: ReplyKind::Other,
            action: None,
            coordinates: None,
        }
    }
}

/// Closed set of names a scene makes available to text matching.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    /// Normalized names of grabbable objects.
    pub objects: Vec<String>,
    /// Normalized names of target (place) objects.
    pub targets: Vec<String>,
}

impl Vocabulary {
    pub fn from_scene(scene: &SceneState) -> Self {
        Self::build(scene.objects.iter().map(|o| (o.name.as_str(), o.grabbable, o.is_target)))
    }

    pub fn from_snapshot(snapshot: &SceneSnapshot) -> Self {
        // snapshots carry no grabbable flag; every non-target counts as an object
        Self::build(
            snapshot
                .entries
                .iter()
                .map(|e| (e.name.as_str(), !e.is_target, e.is_target)),
        )
    }

    fn build<'a>(items: impl Iterator<Item = (&'a str, bool, bool)>) -> Self {
        let mut v = Vocabulary::default();
        for (name, grabbable, target) in items {
            let n = normalize(name);
            let list = if target {
                &mut v.targets
            } else if grabbable {
                &mut v.objects
            } else {
                continue;
            };
            if !list.contains(&n) {
                list.push(n);
            }
        }
        v
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.objects.iter().chain(self.targets.iter())
    }
}

/// Earliest whole-word occurrence of any candidate in normalized `text`;
/// ties prefer the longer name.
pub(crate) fn earliest_name<'a>(
    text: &str,
    candidates: impl Iterator<Item = &'a String>,
) -> Option<&'a String> {
    candidates
        .filter_map(|c| find_phrase(text, c).map(|at| (at, c)))
        .min_by(|(a, ca), (b, cb)| a.cmp(b).then(cb.len().cmp(&ca.len())))
        .map(|(_, c)| c)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Intent {
    NextStep,
    Locate(String),
    Other,
}

/// Keyword classification of a user utterance.
pub fn classify_utterance(user_text: &str, vocabulary: &Vocabulary) -> Intent {
    let text = normalize(user_text);
    let has = |w: &str| find_phrase(&text, w).is_some();
    if has("next") || has("step") || has("do now") {
        return Intent::NextStep;
    }
    if has("where") || has("find") || has("locate") {
        if let Some(name) = earliest_name(&text, vocabulary.all()) {
            return Intent::Locate(name.clone());
        }
    }
    Intent::Other
}

pub fn suggest_next(task: &TaskSpec, progress: &TaskProgress, scene: &SceneState) -> AssistantReply {
    let Some(action) = task.valid_next_actions(progress).into_iter().next() else {
        return AssistantReply {
            text: DONE_TEXT.to_string(),
            kind: ReplyKind::TaskDone,
            action: None,
            coordinates: None,
        };
    };
    let name_of = |id: &str| {
        scene
            .object(id)
            .map(|o| o.name.clone())
            .unwrap_or_else(|| id.to_string())
    };
    AssistantReply {
        text: action.phrase.clone(),
        kind: ReplyKind::ActionSuggestion,
        action: Some(SuggestedAction {
            object: name_of(&action.object_id),
            target: name_of(&action.target_id),
        }),
        coordinates: None,
    }
}

fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

pub fn format_coordinates(p: Vec3) -> String {
    format!("({}, {}, {})", fmt2(p.x), fmt2(p.y), fmt2(p.z))
}

/// World-frame localization of the named object nearest the avatar.
pub fn locate(scene: &SceneState, name: &str) -> AssistantReply {
    match scene.objects_named(name).first() {
        Some(obj) => AssistantReply {
            text: format!("the {} is at {}", obj.name, format_coordinates(obj.position)),
            kind: ReplyKind::Localization,
            action: None,
            coordinates: Some(obj.position),
        },
        None => AssistantReply::other(format!("I cannot find a {name} here.")),
    }
}

pub fn fallback_text(goal_text: &str) -> String {
    format!("I can tell you the next step or where an object is. {goal_text}")
}

pub fn answer(
    request: &AssistantRequest,
    task: &TaskSpec,
    progress: &TaskProgress,
    scene: &SceneState,
) -> AssistantReply {
    match classify_utterance(&request.user_text, &Vocabulary::from_scene(scene)) {
        Intent::NextStep => suggest_next(task, progress, scene),
        Intent::Locate(name) => locate(scene, &name),
        Intent::Other => AssistantReply::other(fallback_text(&request.goal_text)),
    }
}
