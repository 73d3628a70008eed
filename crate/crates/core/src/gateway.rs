//! Prompt construction, pluggable assistant backends, free-text reply
//! parsing and matching replies against valid next actions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assistant::{
    self, earliest_name, AssistantReply, AssistantRequest, ReplyKind, SuggestedAction, Vocabulary,
};
use crate::geometry::Vec3;
use crate::http::{PostError, Poster};
use crate::scene::SceneState;
use crate::snapshot::{SceneSnapshot, SnapshotEntry};
use crate::task::{ActionSpec, TaskProgress, TaskSpec};
use crate::text::normalize;

pub const WIRE_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT_SECS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptGroup {
    NextAction,
    Locate,
    WithHistory,
}

impl PromptGroup {
    pub const ALL: [PromptGroup; 3] = [
        PromptGroup::NextAction,
        PromptGroup::Locate,
        PromptGroup::WithHistory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptGroup::NextAction => "NEXT_ACTION",
            PromptGroup::Locate => "LOCATE",
            PromptGroup::WithHistory => "WITH_HISTORY",
        }
    }

    fn instruction(self) -> &'static str {
        match self {
            PromptGroup::NextAction => "Answer with the next action to take.",
            PromptGroup::Locate => "Answer with the object's name and coordinates.",
            PromptGroup::WithHistory => {
                "Answer with the next action to take, continuing from the previous actions."
            }
        }
    }
}

impl fmt::Display for PromptGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("WITH_HISTORY prompts need a history")]
    MissingHistory,
    #[error("no backend registered as `{0}`")]
    UnknownBackend(String),
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Timeout => "TIMEOUT",
            GatewayError::BackendUnavailable(_) => "BACKEND_UNAVAILABLE",
            GatewayError::MalformedResponse(_) => "MALFORMED_RESPONSE",
            GatewayError::MissingHistory => "MISSING_HISTORY",
            GatewayError::UnknownBackend(_) => "UNKNOWN_BACKEND",
            GatewayError::InvalidDescriptor(_) => "INVALID_DESCRIPTOR",
        }
    }
}

impl From<PostError> for GatewayError {
    fn from(e: PostError) -> Self {
        match e {
            PostError::Timeout => GatewayError::Timeout,
            PostError::Unavailable(m) => GatewayError::BackendUnavailable(m),
        }
    }
}

fn scene_line(e: &SnapshotEntry) -> String {
    format!(
        "{} {} {}",
        e.name,
        e.category,
        assistant::format_coordinates(e.position)
    )
}

/// Renders one prompt. Layout: goal line, `Scene:` block, optional
/// `Previous actions:` block, group instruction, then the user's question.
pub fn build_prompt(
    group: PromptGroup,
    goal_text: &str,
    snapshot: &SceneSnapshot,
    history: Option<&[String]>,
    user_text: &str,
) -> Result<String, GatewayError> {
    let mut lines = vec![goal_text.to_string(), "Scene:".to_string()];
    lines.extend(snapshot.entries.iter().map(scene_line));
    if group == PromptGroup::WithHistory {
        let history = history.ok_or(GatewayError::MissingHistory)?;
        lines.push("Previous actions:".to_string());
        lines.extend(history.iter().cloned());
    }
    lines.push(group.instruction().to_string());
    lines.push(user_text.to_string());
    Ok(lines.join("\n"))
}

const ONE_SHOT_EXAMPLE: &str = "Example:\n\
The task: collect all fruits in the wooden bowl\n\
Scene:\n\
apple fruit (0.40, 0.90, 0.20)\n\
wooden bowl container (0.00, 0.90, 1.00)\n\
Answer with the next action to take.\n\
What is the next step?\n\
Answer: place the apple in the wooden bowl\n\n";

/// Prepends one worked example, for backends that were not tuned on the
/// prompt format.
pub fn with_one_shot(prompt: &str) -> String {
    format!("{ONE_SHOT_EXAMPLE}{prompt}")
}

fn coordinate_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\(\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)")
            .expect("coordinate regex")
    })
}

/// Structures free text by matching it against the scene's closed name set.
pub fn parse_reply(text: &str, vocabulary: &Vocabulary) -> AssistantReply {
    let norm = normalize(text);
    let object = earliest_name(&norm, vocabulary.objects.iter());
    let target = earliest_name(&norm, vocabulary.targets.iter());
    if let (Some(object), Some(target)) = (object, target) {
        return AssistantReply {
            text: text.to_string(),
            kind: ReplyKind::ActionSuggestion,
            action: Some(SuggestedAction {
                object: object.clone(),
                target: target.clone(),
            }),
            coordinates: None,
        };
    }
    if let Some(caps) = coordinate_pattern().captures(text) {
        if earliest_name(&norm, vocabulary.all()).is_some() {
            let n = |i: usize| caps[i].parse::<f64>().unwrap_or(f64::NAN);
            let p = Vec3::new(n(1), n(2), n(3));
            if p.is_finite() {
                return AssistantReply {
                    text: text.to_string(),
                    kind: ReplyKind::Localization,
                    action: None,
                    coordinates: Some(p),
                };
            }
        }
    }
    let done = norm.contains("task is complete");
    AssistantReply {
        text: text.to_string(),
        kind: if done { ReplyKind::TaskDone } else { ReplyKind::Other },
        action: None,
        coordinates: None,
    }
}

/// True iff the reply suggests one of the `valid` actions, comparing
/// normalized object and target names.
pub fn match_response(reply: &AssistantReply, valid: &[&ActionSpec], scene: &SceneState) -> bool {
    if reply.kind != ReplyKind::ActionSuggestion {
        return false;
    }
    let Some(action) = &reply.action else {
        return false;
    };
    let (object, target) = (normalize(&action.object), normalize(&action.target));
    let name_of = |id: &str| normalize(scene.object(id).map_or(id, |o| o.name.as_str()));
    valid
        .iter()
        .any(|a| name_of(&a.object_id) == object && name_of(&a.target_id) == target)
}

/// Everything a backend may consult for one request. Remote backends only
/// see the rendered prompt and the request; the oracle reads full state.
pub struct Exchange<'a> {
    pub group: PromptGroup,
    pub request: &'a AssistantRequest,
    pub task: &'a TaskSpec,
    pub progress: &'a TaskProgress,
    pub scene: &'a SceneState,
}

impl Exchange<'_> {
    pub fn prompt(&self) -> Result<String, GatewayError> {
        build_prompt(
            self.group,
            &self.request.goal_text,
            &self.request.snapshot,
            self.request.history.as_deref(),
            &self.request.user_text,
        )
    }
}

pub trait AssistantBackend: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, exchange: &Exchange<'_>) -> Result<AssistantReply, GatewayError>;
}

pub fn send(
    backend: &dyn AssistantBackend,
    exchange: &Exchange<'_>,
) -> Result<AssistantReply, GatewayError> {
    let reply = backend.respond(exchange);
    if let Err(e) = &reply {
        tracing::warn!(backend = backend.name(), error = %e, "assistant request failed");
    }
    reply
}

pub struct OracleBackend;

impl AssistantBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn respond(&self, ex: &Exchange<'_>) -> Result<AssistantReply, GatewayError> {
        Ok(assistant::answer(ex.request, ex.task, ex.progress, ex.scene))
    }
}

/// Replays canned reply texts in order, wrapping around.
pub struct ScriptedBackend {
    name: String,
    replies: Vec<String>,
    cursor: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, replies: Vec<String>) -> Self {
        ScriptedBackend {
            name: name.into(),
            replies,
            cursor: AtomicUsize::new(0),
        }
    }

    /// One reply per nonempty line.
    pub fn from_fixture(name: impl Into<String>, text: &str) -> Self {
        Self::new(
            name,
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }
}

impl AssistantBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, ex: &Exchange<'_>) -> Result<AssistantReply, GatewayError> {
        if self.replies.is_empty() {
            return Err(GatewayError::BackendUnavailable(
                "scripted backend has no replies".into(),
            ));
        }
        let i = self.cursor.fetch_add(1, Ordering::Relaxed) % self.replies.len();
        Ok(parse_reply(&self.replies[i], &Vocabulary::from_scene(ex.scene)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub version: u32,
    pub goal_text: String,
    pub prompt: String,
    pub snapshot: Vec<SnapshotEntry>,
    pub history: Vec<String>,
    pub user_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub version: u32,
    pub text: String,
}

/// A VLM server reached by a single JSON POST per request.
pub struct RemoteBackend {
    name: String,
    endpoint: String,
    one_shot: bool,
    poster: Poster,
}

impl RemoteBackend {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, timeout: Duration, one_shot: bool) -> Self {
        RemoteBackend {
            name: name.into(),
            endpoint: endpoint.into(),
            one_shot,
            poster: Poster::new(timeout),
        }
    }

    pub fn request_document(&self, ex: &Exchange<'_>) -> Result<RemoteRequest, GatewayError> {
        let prompt = ex.prompt()?;
        Ok(RemoteRequest {
            version: WIRE_VERSION,
            goal_text: ex.request.goal_text.clone(),
            prompt: if self.one_shot { with_one_shot(&prompt) } else { prompt },
            snapshot: ex.request.snapshot.entries.clone(),
            history: ex.request.history.clone().unwrap_or_default(),
            user_text: ex.request.user_text.clone(),
        })
    }
}

impl AssistantBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn respond(&self, ex: &Exchange<'_>) -> Result<AssistantReply, GatewayError> {
        let doc = self.request_document(ex)?;
        let body = serde_json::to_vec(&doc).expect("request document serializes");
        let bytes = self.poster.post(&self.endpoint, "application/json", &body)?;
        let resp: RemoteResponse = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        if resp.version != WIRE_VERSION {
            return Err(GatewayError::MalformedResponse(format!(
                "unsupported version {}",
                resp.version
            )));
        }
        if resp.text.trim().is_empty() {
            return Err(GatewayError::MalformedResponse("empty text".into()));
        }
        Ok(parse_reply(&resp.text, &Vocabulary::from_scene(ex.scene)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Prepend a worked example to remote prompts.
    #[serde(default)]
    pub one_shot: bool,
    /// Canned replies for scripted backends.
    #[serde(default)]
    pub replies: Vec<String>,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

impl BackendDescriptor {
    pub fn oracle() -> Self {
        BackendDescriptor {
            name: "oracle".into(),
            kind: BackendKind::Oracle,
            endpoint: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            one_shot: false,
            replies: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(GatewayError::InvalidDescriptor("timeout must be > 0".into()));
        }
        if self.kind == BackendKind::Remote && self.endpoint.is_none() {
            return Err(GatewayError::InvalidDescriptor(
                "remote backends need an endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn AssistantBackend>, GatewayError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Oracle => Arc::new(OracleBackend),
            BackendKind::Scripted => Arc::new(ScriptedBackend::new(&self.name, self.replies.clone())),
            BackendKind::Remote => Arc::new(RemoteBackend::new(
                &self.name,
                self.endpoint.clone().unwrap_or_default(),
                Duration::from_secs_f64(self.timeout_secs),
                self.one_shot,
            )),
        })
    }
}

/// Shorthand accepted on the command line: `oracle`, `remote:<url>`.
impl FromStr for BackendDescriptor {
    type Err = GatewayError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "oracle" {
            return Ok(BackendDescriptor::oracle());
        }
        if let Some(url) = s.strip_prefix("remote:") {
            return Ok(BackendDescriptor {
                name: "remote".into(),
                kind: BackendKind::Remote,
                endpoint: Some(url.to_string()),
                ..BackendDescriptor::oracle()
            });
        }
        Err(GatewayError::UnknownBackend(s.to_string()))
    }
}

/// Named backends available to sessions and evaluations.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: HashMap<String, Arc<dyn AssistantBackend>>,
}

impl BackendRegistry {
    pub fn with_oracle() -> Self {
        let mut r = BackendRegistry::default();
        r.register(Arc::new(OracleBackend));
        r
    }

    pub fn register(&mut self, backend: Arc<dyn AssistantBackend>) {
        self.backends.insert(backend.name().to_string(), backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn AssistantBackend>, GatewayError> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.backends.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}
