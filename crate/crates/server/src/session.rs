//! One client's session: a synchronous state machine fed one line at a time.
//! Assistant work is split off as a [`PendingAssist`] so callers decide
//! where it runs; its result comes back through [`Session::complete_assist`].

use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use taskpilot_core::assistant::{classify_utterance, AssistantRequest, Intent, Vocabulary};
use taskpilot_core::gateway::{send, AssistantBackend, Exchange, PromptGroup};
use taskpilot_core::snapshot::{project_to_viewpoint, world_snapshot};
use taskpilot_core::speech::{
    decode_wav, encode_wav, resample_to_16k, AudioBuffer, Synthesizer, Transcriber,
};
use taskpilot_core::task::WrongReason;
use taskpilot_core::{Catalog, Scenario, SceneState, TaskEvent, TaskProgress, TaskSpec, ViewpointName};

use crate::protocol::{
    decode, encode, AvatarView, ClientKind, ClientMessage, InstructionItem, ServerMessage,
    SessionMode, SoundCue, Summary, WireEvent,
};

/// Largest tick count a single MOVE may request.
pub const MAX_MOVE_TICKS: u64 = 10_000;

/// Shared, read-only dependencies of every session.
pub struct Services {
    pub catalog: Catalog,
    pub backend: Arc<dyn AssistantBackend>,
    pub transcriber: Arc<dyn Transcriber>,
    pub synthesizer: Arc<dyn Synthesizer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Client to server.
    Client,
    /// Server to client.
    Server,
    /// Wall-clock tick advance applied before the next client line.
    Clock,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::Client => "C",
            Direction::Server => "S",
            Direction::Clock => "K",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "C" => Some(Direction::Client),
            "S" => Some(Direction::Server),
            "K" => Some(Direction::Clock),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub line: String,
}

struct Active {
    scenario: Scenario,
    task: TaskSpec,
    mode: SessionMode,
    client: ClientKind,
    scene: SceneState,
    progress: TaskProgress,
    instructions_visible: bool,
    note: Option<String>,
}

enum Phase {
    AwaitingHello,
    Open(Box<Active>),
    Closed { summary: Option<Summary> },
}

enum AssistInput {
    Text(String),
    Audio(AudioBuffer),
}

/// Everything an assistant reply needs, captured when the utterance arrived.
pub struct PendingAssist {
    reply_to: u64,
    input: AssistInput,
    goal_text: String,
    task: TaskSpec,
    progress: TaskProgress,
    scene: SceneState,
    scenario: Scenario,
}

pub struct AssistOutcome {
    reply_to: u64,
    result: Result<(String, Vec<u8>), (&'static str, String)>,
}

impl PendingAssist {
    pub fn reply_to(&self) -> u64 {
        self.reply_to
    }

    /// Runs transcription (for audio), the assistant backend and speech
    /// synthesis. May block on network backends.
    pub fn run(self, services: &Services) -> AssistOutcome {
        let reply_to = self.reply_to;
        AssistOutcome {
            reply_to,
            result: self.answer(services),
        }
    }

    fn answer(self, services: &Services) -> Result<(String, Vec<u8>), (&'static str, String)> {
        let speech_err = |e: taskpilot_core::speech::SpeechError| ("SPEECH_FAILED", format!("{}: {e}", e.code()));
        let user_text = match self.input {
            AssistInput::Text(t) => t,
            AssistInput::Audio(buffer) => {
                taskpilot_core::speech::transcribe(services.transcriber.as_ref(), &buffer).map_err(speech_err)?
            }
        };
        let vocabulary = Vocabulary::from_scene(&self.scene);
        let group = match classify_utterance(&user_text, &vocabulary) {
            Intent::Locate(_) => PromptGroup::Locate,
            _ if self.task.ordered => PromptGroup::WithHistory,
            _ => PromptGroup::NextAction,
        };
        let history = (group == PromptGroup::WithHistory).then(|| {
            self.progress
                .completed
                .iter()
                .filter_map(|id| self.task.action(id).map(|a| a.phrase.clone()))
                .collect()
        });
        let snapshot = match self.scenario.viewpoint(ViewpointName::Center) {
            Some(vp) => project_to_viewpoint(&self.scene, vp),
            None => world_snapshot(&self.scene),
        };
        let request = AssistantRequest {
            snapshot,
            goal_text: self.goal_text.clone(),
            history,
            user_text,
        };
        let exchange = Exchange {
            group,
            request: &request,
            task: &self.task,
            progress: &self.progress,
            scene: &self.scene,
        };
        let reply = send(services.backend.as_ref(), &exchange)
            .map_err(|e| ("ASSISTANT_FAILED", format!("{}: {e}", e.code())))?;
        let audio = taskpilot_core::speech::synthesize(services.synthesizer.as_ref(), &reply.text)
            .map_err(speech_err)?;
        Ok((reply.text, encode_wav(&audio)))
    }
}

/// Result of handling one client line.
#[derive(Default)]
pub struct Output {
    pub messages: Vec<ServerMessage>,
    /// Encoded lines for `messages`, sequence numbers already assigned.
    pub lines: Vec<String>,
    pub pending: Option<PendingAssist>,
    /// The session has ended; the transport should close after sending.
    pub close: bool,
}

pub struct Session {
    services: Arc<Services>,
    id: String,
    phase: Phase,
    next_seq: u64,
    last_client_seq: Option<u64>,
    transcript: Vec<TranscriptEntry>,
    unread: usize,
}

impl Session {
    pub fn new(services: Arc<Services>, id: impl Into<String>) -> Self {
        Session {
            services,
            id: id.into(),
            phase: Phase::AwaitingHello,
            next_seq: 1,
            last_client_seq: None,
            transcript: Vec::new(),
            unread: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.phase, Phase::Closed { .. })
    }

    /// Present once BYE has been sent.
    pub fn summary(&self) -> Option<&Summary> {
        match &self.phase {
            Phase::Closed { summary } => summary.as_ref(),
            _ => None,
        }
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// Transcript entries added since the previous call.
    pub fn drain_new_entries(&mut self) -> &[TranscriptEntry] {
        let start = self.unread;
        self.unread = self.transcript.len();
        &self.transcript[start..]
    }

    /// Tick duration and current tick for sessions that follow wall time.
    pub fn wall_clock(&self) -> Option<(f64, u64)> {
        match &self.phase {
            Phase::Open(a) if a.client == ClientKind::Human => Some((a.scene.tick_dt, a.scene.tick)),
            _ => None,
        }
    }

    /// Moves the clock forward (never back). Recorded so replays match.
    pub fn advance_clock(&mut self, tick: u64) {
        let Phase::Open(a) = &mut self.phase else { return };
        if tick <= a.scene.tick {
            return;
        }
        a.scene.advance_to(tick);
        self.transcript.push(TranscriptEntry {
            direction: Direction::Clock,
            line: format!("{{\"tick\":{tick}}}"),
        });
    }

    fn emit(&mut self, out: &mut Output, msg: ServerMessage) {
        let line = encode(self.next_seq, &msg);
        self.next_seq += 1;
        self.transcript.push(TranscriptEntry {
            direction: Direction::Server,
            line: line.clone(),
        });
        out.lines.push(line);
        out.messages.push(msg);
    }

    fn close(&mut self, out: &mut Output, summary: Option<Summary>) {
        if let Some(s) = &summary {
            self.emit(out, ServerMessage::Bye { summary: s.clone() });
        }
        self.phase = Phase::Closed { summary };
        out.close = true;
    }

    pub fn handle_line(&mut self, line: &str) -> Output {
        let line = line.trim_end_matches(['\r', '\n']);
        self.transcript.push(TranscriptEntry {
            direction: Direction::Client,
            line: line.to_string(),
        });
        let mut out = Output::default();
        if self.is_closed() {
            out.close = true;
            return out;
        }
        let env = match decode::<ClientMessage>(line) {
            Ok(env) => env,
            Err(e) => {
                let msg = ServerMessage::Error {
                    code: e.code.to_string(),
                    detail: e.detail,
                    reply_to: e.seq,
                };
                self.emit(&mut out, msg);
                return out;
            }
        };
        if self.last_client_seq.is_some_and(|last| env.seq <= last) {
            let msg = ServerMessage::Error {
                code: "BAD_SEQUENCE".into(),
                detail: format!("seq {} is not above {}", env.seq, self.last_client_seq.unwrap()),
                reply_to: Some(env.seq),
            };
            self.emit(&mut out, msg);
            return out;
        }
        self.last_client_seq = Some(env.seq);
        self.dispatch(env.seq, env.body, &mut out);
        out
    }

    fn dispatch(&mut self, seq: u64, msg: ClientMessage, out: &mut Output) {
        if let ClientMessage::Hello { client, scenario, task, mode } = msg {
            if !matches!(self.phase, Phase::AwaitingHello) {
                self.emit(out, ServerMessage::error("OUT_OF_ORDER", "session already open"));
                return;
            }
            self.open(client, &scenario, &task, &mode, out);
            return;
        }
        if matches!(self.phase, Phase::AwaitingHello) {
            self.emit(out, ServerMessage::error("OUT_OF_ORDER", "first message must be HELLO"));
            return;
        }
        if matches!(msg, ClientMessage::Quit) {
            let summary = self.summary_now();
            self.close(out, summary);
            return;
        }
        let Phase::Open(active) = &mut self.phase else { return };
        let mode = active.mode;
        let forbid = |what: &str| ServerMessage::error("MODE_FORBIDS", format!("{what} is not available in {mode}"));
        let mut msgs = Vec::new();
        let mut task_done = false;
        match msg {
            ClientMessage::Move { direction, ticks } => {
                let r = if ticks > MAX_MOVE_TICKS {
                    Err(ServerMessage::error("BAD_ARGUMENT", format!("ticks must be <= {MAX_MOVE_TICKS}")))
                } else {
                    active.scene.step_avatar(direction, ticks).map_err(scene_error)
                };
                msgs.push(r.map(|_| state_message(&active.scene)).unwrap_or_else(|e| e));
            }
            ClientMessage::Turn { heading } => {
                let r = active.scene.turn(heading).map_err(scene_error);
                msgs.push(r.map(|_| state_message(&active.scene)).unwrap_or_else(|e| e));
            }
            ClientMessage::Grab { object_id } => match active.scene.grab(&object_id) {
                Ok(()) => {
                    msgs.push(state_message(&active.scene));
                    let (next, event) = active.task.on_grab_attempt(&active.progress, &object_id);
                    active.progress = next;
                    if let Some(event) = event {
                        task_done |= feedback(active, &[event], &mut msgs);
                    }
                }
                Err(e) => msgs.push(scene_error(e)),
            },
            ClientMessage::Release => match active.scene.release() {
                Ok(contacts) => {
                    msgs.push(state_message(&active.scene));
                    let (next, events) = active.task.on_contacts(&active.progress, &contacts, active.scene.tick);
                    active.progress = next;
                    task_done |= feedback(active, &events, &mut msgs);
                }
                Err(e) => msgs.push(scene_error(e)),
            },
            ClientMessage::UtterText { text } => {
                if mode != SessionMode::AssistantDialogue {
                    msgs.push(forbid("UTTER_TEXT"));
                } else if text.trim().is_empty() {
                    msgs.push(ServerMessage::error("BAD_ARGUMENT", "text must be nonempty"));
                } else {
                    out.pending = Some(pending(active, seq, AssistInput::Text(text)));
                }
            }
            ClientMessage::UtterAudio { wav } => {
                if mode != SessionMode::AssistantDialogue {
                    msgs.push(forbid("UTTER_AUDIO"));
                } else {
                    match decode_audio(&wav) {
                        Ok(buffer) => out.pending = Some(pending(active, seq, AssistInput::Audio(buffer))),
                        Err((code, detail)) => msgs.push(ServerMessage::Error {
                            code: code.into(),
                            detail,
                            reply_to: Some(seq),
                        }),
                    }
                }
            }
            ClientMessage::ToggleInstructions => {
                if mode != SessionMode::BaselineText {
                    msgs.push(forbid("TOGGLE_INSTRUCTIONS"));
                } else {
                    active.instructions_visible = !active.instructions_visible;
                    msgs.push(instructions(active));
                }
            }
            ClientMessage::Hello { .. } | ClientMessage::Quit => unreachable!("handled above"),
        }
        for m in msgs {
            self.emit(out, m);
        }
        if task_done {
            let summary = self.summary_now();
            self.close(out, summary);
        }
    }

    fn open(&mut self, client: ClientKind, scenario: &str, task: &str, mode: &str, out: &mut Output) {
        let services = self.services.clone();
        let fail = |code: &str, detail: String| ServerMessage::error(code, detail);
        let Some(scenario) = services.catalog.scenario(scenario) else {
            self.emit(out, fail("UNKNOWN_SCENARIO", format!("no scenario `{scenario}`")));
            return self.close(out, None);
        };
        let Some(task) = services.catalog.task(task) else {
            self.emit(out, fail("UNKNOWN_TASK", format!("no task `{task}`")));
            return self.close(out, None);
        };
        let Ok(mode) = mode.parse::<SessionMode>() else {
            self.emit(out, fail("BAD_MODE", format!("unknown mode `{mode}`")));
            return self.close(out, None);
        };
        let scene = scenario.scene.clone();
        let progress = match task.start_task(&scene) {
            Ok(p) => p,
            Err(e) => {
                self.emit(out, fail(e.code(), e.to_string()));
                return self.close(out, None);
            }
        };
        let active = Active {
            scenario: scenario.clone(),
            task: task.clone(),
            mode,
            client,
            scene,
            progress,
            instructions_visible: false,
            note: None,
        };
        let welcome = ServerMessage::Welcome {
            session_id: self.id.clone(),
            mode,
            scenario: active.scenario.name().to_string(),
            task: active.task.id.clone(),
            avatar: avatar_view(&active.scene),
            snapshot: world_snapshot(&active.scene),
        };
        let first_instructions = (mode == SessionMode::BaselineText).then(|| instructions(&active));
        self.phase = Phase::Open(Box::new(active));
        self.emit(out, welcome);
        if let Some(m) = first_instructions {
            self.emit(out, m);
        }
    }

    fn summary_now(&self) -> Option<Summary> {
        let Phase::Open(a) = &self.phase else { return None };
        Some(Summary {
            scenario: a.scenario.name().to_string(),
            task: a.task.id.clone(),
            mode: a.mode,
            completed: a.task.is_complete(&a.progress),
            elapsed_seconds: a.progress.elapsed_seconds(),
            wrong_action_count: a.progress.wrong_action_count,
        })
    }

    /// Appends the assistant's reply (or an error naming the utterance).
    /// Outcomes arriving after the session ended are dropped.
    pub fn complete_assist(&mut self, outcome: AssistOutcome) -> Output {
        let mut out = Output::default();
        if !matches!(self.phase, Phase::Open(_)) {
            return out;
        }
        match outcome.result {
            Ok((text, wav)) => {
                self.emit(&mut out, ServerMessage::AssistantText { text, reply_to: outcome.reply_to });
                self.emit(
                    &mut out,
                    ServerMessage::AssistantAudio {
                        wav: BASE64.encode(wav),
                        reply_to: outcome.reply_to,
                    },
                );
            }
            Err((code, detail)) => self.emit(
                &mut out,
                ServerMessage::Error {
                    code: code.to_string(),
                    detail,
                    reply_to: Some(outcome.reply_to),
                },
            ),
        }
        out
    }
}

fn pending(active: &Active, seq: u64, input: AssistInput) -> PendingAssist {
    PendingAssist {
        reply_to: seq,
        input,
        goal_text: active.task.goal_text.clone(),
        task: active.task.clone(),
        progress: active.progress.clone(),
        scene: active.scene.clone(),
        scenario: active.scenario.clone(),
    }
}

fn decode_audio(b64: &str) -> Result<AudioBuffer, (&'static str, String)> {
    let bytes = BASE64
        .decode(b64.trim())
        .map_err(|e| ("BAD_AUDIO", format!("invalid base64: {e}")))?;
    let buffer = decode_wav(&bytes).map_err(|e| (e.code(), e.to_string()))?;
    resample_to_16k(&buffer).map_err(|e| (e.code(), e.to_string()))
}

fn scene_error(e: taskpilot_core::SceneError) -> ServerMessage {
    ServerMessage::error(e.code(), e.to_string())
}

fn avatar_view(scene: &SceneState) -> AvatarView {
    AvatarView {
        position: scene.avatar.position,
        heading: scene.avatar.heading,
        held: scene.avatar.held.clone(),
    }
}

fn state_message(scene: &SceneState) -> ServerMessage {
    ServerMessage::State {
        avatar: avatar_view(scene),
        snapshot: world_snapshot(scene),
    }
}

fn instructions(a: &Active) -> ServerMessage {
    ServerMessage::Instructions {
        goal_text: a.task.goal_text.clone(),
        items: a
            .task
            .actions
            .iter()
            .map(|x| InstructionItem {
                phrase: x.phrase.clone(),
                done: a.progress.completed.contains(&x.id),
            })
            .collect(),
        visible: a.instructions_visible,
        note: a.note.clone(),
    }
}

fn wrong_note(a: &Active, reason: WrongReason, object_id: &str) -> String {
    let name = a.scene.object(object_id).map_or(object_id, |o| o.name.as_str());
    match reason {
        WrongReason::OutOfOrder => format!("Wrong order: the {name} is not next."),
        WrongReason::WrongObject => format!("Wrong object: the {name} is not part of this task."),
    }
}

/// Emits EVENT messages plus per-mode feedback. Returns true on completion.
fn feedback(a: &mut Active, events: &[TaskEvent], msgs: &mut Vec<ServerMessage>) -> bool {
    let mut done = false;
    for event in events {
        let wire = match event {
            TaskEvent::ActionCompleted { action_id } => {
                let phrase = a.task.action(action_id).map(|x| x.phrase.clone()).unwrap_or_default();
                WireEvent::ActionCompleted {
                    action_id: action_id.clone(),
                    phrase,
                }
            }
            TaskEvent::WrongAction { reason, object_id } => WireEvent::WrongAction {
                reason: *reason,
                object_id: object_id.clone(),
            },
            TaskEvent::TaskComplete { .. } => WireEvent::TaskComplete,
        };
        msgs.push(ServerMessage::Event { event: wire });
        match (event, a.mode) {
            (TaskEvent::ActionCompleted { .. }, SessionMode::BaselineText) => {
                a.note = None;
                msgs.push(instructions(a));
            }
            (TaskEvent::ActionCompleted { .. }, SessionMode::AssistantDialogue) => {
                msgs.push(ServerMessage::Sound { cue: SoundCue::ActionComplete })
            }
            (TaskEvent::WrongAction { reason, object_id }, SessionMode::BaselineText) => {
                a.note = Some(wrong_note(a, *reason, object_id));
                msgs.push(instructions(a));
            }
            (TaskEvent::WrongAction { .. }, SessionMode::AssistantDialogue) => {
                msgs.push(ServerMessage::Sound { cue: SoundCue::Wrong })
            }
            (TaskEvent::TaskComplete { .. }, _) => done = true,
        }
    }
    done
}
