//! Wire messages. Every message is one JSON object per line:
//! `{"v":1,"seq":N,"type":"...", ...fields}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use taskpilot_core::snapshot::SceneSnapshot;
use taskpilot_core::task::WrongReason;
use taskpilot_core::Vec3;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionMode {
    BaselineText,
    AssistantDialogue,
}

impl SessionMode {
    pub const ALL: [SessionMode; 2] = [SessionMode::BaselineText, SessionMode::AssistantDialogue];

    pub fn as_str(self) -> &'static str {
        match self {
            SessionMode::BaselineText => "BASELINE_TEXT",
            SessionMode::AssistantDialogue => "ASSISTANT_DIALOGUE",
        }
    }
}

impl fmt::Display for SessionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SessionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SessionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

/// Scripted agents advance time only through MOVE; human clients also get
/// a wall-clock cadence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    #[default]
    Agent,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        client: ClientKind,
        scenario: String,
        task: String,
        /// Kept as text so an unknown mode maps to BAD_MODE rather than a
        /// parse failure.
        mode: String,
    },
    Move {
        direction: Vec3,
        ticks: u64,
    },
    Turn {
        heading: f64,
    },
    Grab {
        object_id: String,
    },
    Release,
    UtterText {
        text: String,
    },
    UtterAudio {
        /// Base64 WAV file.
        wav: String,
    },
    ToggleInstructions,
    Quit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvatarView {
    pub position: Vec3,
    pub heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held: Option<String>,
}

/// Task events as clients see them. Completion carries no elapsed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WireEvent {
    ActionCompleted { action_id: String, phrase: String },
    WrongAction { reason: WrongReason, object_id: String },
    TaskComplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionItem {
    pub phrase: String,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoundCue {
    ActionComplete,
    Wrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub task: String,
    pub mode: SessionMode,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
    pub wrong_action_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServerMessage {
    Welcome {
        session_id: String,
        mode: SessionMode,
        scenario: String,
        task: String,
        avatar: AvatarView,
        snapshot: SceneSnapshot,
    },
    State {
        avatar: AvatarView,
        snapshot: SceneSnapshot,
    },
    Event {
        event: WireEvent,
    },
    AssistantText {
        text: String,
        reply_to: u64,
    },
    AssistantAudio {
        wav: String,
        reply_to: u64,
    },
    Instructions {
        goal_text: String,
        items: Vec<InstructionItem>,
        visible: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Sound {
        cue: SoundCue,
    },
    Error {
        code: String,
        detail: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reply_to: Option<u64>,
    },
    Bye {
        summary: Summary,
    },
}

impl ServerMessage {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.to_string(),
            detail: detail.into(),
            reply_to: None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ServerMessage::Welcome { .. } => "WELCOME",
            ServerMessage::State { .. } => "STATE",
            ServerMessage::Event { .. } => "EVENT",
            ServerMessage::AssistantText { .. } => "ASSISTANT_TEXT",
            ServerMessage::AssistantAudio { .. } => "ASSISTANT_AUDIO",
            ServerMessage::Instructions { .. } => "INSTRUCTIONS",
            ServerMessage::Sound { .. } => "SOUND",
            ServerMessage::Error { .. } => "ERROR",
            ServerMessage::Bye { .. } => "BYE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<T> {
    pub v: u32,
    pub seq: u64,
    pub body: T,
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    v: u32,
    seq: u64,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireError {
    pub code: &'static str,
    pub detail: String,
    /// Sequence number, when the line got far enough to have one.
    pub seq: Option<u64>,
}

/// Serializes one message as a single line without the trailing newline.
pub fn encode<T: Serialize>(seq: u64, body: &T) -> String {
    serde_json::to_string(&EnvelopeRef {
        v: PROTOCOL_VERSION,
        seq,
        body,
    })
    .expect("protocol messages serialize")
}

pub fn decode<T: for<'de> Deserialize<'de>>(line: &str) -> Result<Envelope<T>, WireError> {
    let bad = |detail: String, seq| WireError {
        code: "BAD_MESSAGE",
        detail,
        seq,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string(), None))?;
    let Value::Object(mut map) = value else {
        return Err(bad("message must be a JSON object".into(), None));
    };
    let seq = map
        .remove("seq")
        .and_then(|s| s.as_u64())
        .ok_or_else(|| bad("missing or invalid `seq`".into(), None))?;
    match map.remove("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        other => {
            return Err(WireError {
                code: "BAD_VERSION",
                detail: format!("expected v={PROTOCOL_VERSION}, got {other:?}"),
                seq: Some(seq),
            })
        }
    }
    let body = serde_json::from_value(Value::Object(map)).map_err(|e| bad(e.to_string(), Some(seq)))?;
    Ok(Envelope {
        v: PROTOCOL_VERSION,
        seq,
        body,
    })
}
