//! Scripted participant that drives a full session over the wire protocol.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskpilot_core::assistant::{ReplyKind, Vocabulary, NEXT_STEP_QUESTION};
use taskpilot_core::gateway::parse_reply;
use taskpilot_core::snapshot::SceneSnapshot;
use taskpilot_core::text::normalize;
use taskpilot_core::{Scenario, TaskSpec, Vec3};
use taskpilot_server::protocol::{decode, encode, AvatarView, InstructionItem, Summary};
use taskpilot_server::{ClientKind, ClientMessage, InlineSession, ServerMessage, Services, SessionMode};
use thiserror::Error;

pub const DEFAULT_STEP_LIMIT: usize = 500;

/// Distance from the avatar at which the hold point sits.
const REACH_AHEAD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Perfect,
    /// Grabs a distractor with this probability before each correct action.
    Noisy(f64),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Perfect => f.write_str("perfect"),
            Policy::Noisy(p) => write!(f, "noisy:{p}"),
        }
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "perfect" {
            return Ok(Policy::Perfect);
        }
        let p = s
            .strip_prefix("noisy:")
            .and_then(|p| p.parse::<f64>().ok())
            .ok_or_else(|| format!("policy must be `perfect` or `noisy:<p>`, got `{s}`"))?;
        if (0.0..=1.0).contains(&p) {
            Ok(Policy::Noisy(p))
        } else {
            Err(format!("noisy probability must lie in [0, 1], got {p}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("step limit of {0} messages exceeded")]
    StepLimitExceeded(usize),
    #[error("server error {code}: {detail}")]
    Server { code: String, detail: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("connection: {0}")]
    Io(String),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::StepLimitExceeded(_) => "STEP_LIMIT_EXCEEDED",
            AgentError::Server { .. } => "SERVER_ERROR",
            AgentError::Protocol(_) => "PROTOCOL_ERROR",
            AgentError::Io(_) => "CONNECTION_ERROR",
        }
    }
}

/// A line transport to a session. `recv` yields `None` once nothing more
/// is coming in response to what was sent.
pub trait Connection {
    fn send(&mut self, line: &str) -> Result<(), AgentError>;
    fn recv(&mut self) -> Result<Option<String>, AgentError>;
}

/// Session in this process; replies are produced synchronously.
pub struct InProcessConnection {
    session: InlineSession,
    queue: VecDeque<String>,
}

impl InProcessConnection {
    pub fn new(services: Arc<Services>, session_id: impl Into<String>) -> Self {
        InProcessConnection {
            session: InlineSession::new(services, session_id),
            queue: VecDeque::new(),
        }
    }

    pub fn session(&self) -> &taskpilot_server::Session {
        self.session.session()
    }
}

impl Connection for InProcessConnection {
    fn send(&mut self, line: &str) -> Result<(), AgentError> {
        self.queue.extend(self.session.send(line));
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<String>, AgentError> {
        Ok(self.queue.pop_front())
    }
}

/// Raw line session over TCP. Silence longer than `quiet` counts as the end
/// of output.
pub struct TcpConnection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpConnection {
    pub fn connect(addr: SocketAddr, quiet: Duration) -> Result<Self, AgentError> {
        let io = |e: std::io::Error| AgentError::Io(e.to_string());
        let stream = TcpStream::connect(addr).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        stream.set_read_timeout(Some(quiet)).map_err(io)?;
        Ok(TcpConnection {
            reader: BufReader::new(stream.try_clone().map_err(io)?),
            writer: stream,
        })
    }
}

impl Connection for TcpConnection {
    fn send(&mut self, line: &str) -> Result<(), AgentError> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.writer.write_all(&buf).map_err(|e| AgentError::Io(e.to_string()))
    }

    fn recv(&mut self) -> Result<Option<String>, AgentError> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Ok(None),
            Ok(_) => Ok(Some(line.trim_end_matches(['\r', '\n']).to_string())),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) if e.kind() == ErrorKind::ConnectionReset => Ok(None),
            Err(e) => Err(AgentError::Io(e.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub scenario: String,
    pub task: String,
    pub mode: SessionMode,
    pub policy: Policy,
    pub seed: u64,
    pub step_limit: usize,
    /// Avatar speed in m/s and the tick length, used to plan MOVE ticks.
    pub speed: f64,
    pub tick_dt: f64,
    /// Objects no action uses; noisy grabs pick among these.
    pub distractors: Vec<String>,
}

impl AgentConfig {
    pub fn new(scenario: &Scenario, task: &TaskSpec, mode: SessionMode, policy: Policy, seed: u64) -> Self {
        let distractors = scenario
            .scene
            .objects
            .iter()
            .filter(|o| o.grabbable && !o.is_target && !task.uses_object(&o.id))
            .map(|o| o.id.clone())
            .collect();
        AgentConfig {
            scenario: scenario.name().to_string(),
            task: task.id.clone(),
            mode,
            policy,
            seed,
            step_limit: DEFAULT_STEP_LIMIT,
            speed: scenario.scene.avatar.speed,
            tick_dt: scenario.scene.tick_dt,
            distractors,
        }
    }
}

enum Waited {
    Got(ServerMessage),
    Bye,
}

struct Agent<'c> {
    conn: &'c mut dyn Connection,
    config: AgentConfig,
    rng: ChaCha8Rng,
    seq: u64,
    sent: usize,
    avatar: Option<AvatarView>,
    snapshot: Option<SceneSnapshot>,
    items: Vec<InstructionItem>,
    summary: Option<Summary>,
}

/// Plays one session to its end. Returns the BYE summary.
pub fn scripted_agent(conn: &mut dyn Connection, config: AgentConfig) -> Result<Summary, AgentError> {
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = Agent {
        conn,
        config,
        rng,
        seq: 0,
        sent: 0,
        avatar: None,
        snapshot: None,
        items: Vec::new(),
        summary: None,
    };
    agent.run()
}

impl Agent<'_> {
    fn run(&mut self) -> Result<Summary, AgentError> {
        let hello = ClientMessage::Hello {
            client: ClientKind::Agent,
            scenario: self.config.scenario.clone(),
            task: self.config.task.clone(),
            mode: self.config.mode.as_str().to_string(),
        };
        self.send(&hello)?;
        match self.wait(|m| matches!(m, ServerMessage::Welcome { .. } | ServerMessage::Error { .. }))? {
            Waited::Got(ServerMessage::Error { code, detail, .. }) => return Err(AgentError::Server { code, detail }),
            Waited::Bye => return self.finished(),
            Waited::Got(_) => {}
        }
        loop {
            if self.summary.is_some() {
                return self.finished();
            }
            let Some((object, target)) = self.next_action()? else {
                return self.finished();
            };
            if let Policy::Noisy(p) = self.config.policy {
                let roll: f64 = self.rng.random();
                if roll < p {
                    if let Some(d) = self.config.distractors.choose(&mut self.rng).cloned() {
                        self.fumble(&d)?;
                    }
                }
            }
            self.pick_and_place(&object, &target)?;
        }
    }

    fn finished(&mut self) -> Result<Summary, AgentError> {
        if self.summary.is_none() {
            self.drain()?;
        }
        self.summary
            .clone()
            .ok_or_else(|| AgentError::Protocol("session ended without BYE".into()))
    }

    fn send(&mut self, msg: &ClientMessage) -> Result<(), AgentError> {
        if !matches!(msg, ClientMessage::Hello { .. } | ClientMessage::Quit) {
            if self.sent >= self.config.step_limit {
                self.seq += 1;
                let _ = self.conn.send(&encode(self.seq, &ClientMessage::Quit));
                let _ = self.drain();
                return Err(AgentError::StepLimitExceeded(self.config.step_limit));
            }
            self.sent += 1;
        }
        self.seq += 1;
        let line = encode(self.seq, msg);
        let _ = self.conn.send(&line);
        Ok(())
    }

    fn drain(&mut self) -> Result<(), AgentError> {
        while self.summary.is_none() {
            let Some(line) = self.conn.recv()? else { break };
            self.observe(&line)?;
        }
        Ok(())
    }

    fn observe(&mut self, line: &str) -> Result<ServerMessage, AgentError> {
        let msg = decode::<ServerMessage>(line)
            .map_err(|e| AgentError::Protocol(format!("{}: {}", e.code, e.detail)))?
            .body;
        match &msg {
            ServerMessage::Welcome { avatar, snapshot, .. } | ServerMessage::State { avatar, snapshot } => {
                self.avatar = Some(avatar.clone());
                self.snapshot = Some(snapshot.clone());
            }
            ServerMessage::Instructions { items, .. } => self.items = items.clone(),
            ServerMessage::Bye { summary } => self.summary = Some(summary.clone()),
            _ => {}
        }
        Ok(msg)
    }

    fn wait(&mut self, want: impl Fn(&ServerMessage) -> bool) -> Result<Waited, AgentError> {
        loop {
            let Some(line) = self.conn.recv()? else {
                return if self.summary.is_some() {
                    Ok(Waited::Bye)
                } else {
                    Err(AgentError::Protocol("server went quiet".into()))
                };
            };
            let msg = self.observe(&line)?;
            if matches!(msg, ServerMessage::Bye { .. }) {
                return Ok(Waited::Bye);
            }
            if want(&msg) {
                return Ok(Waited::Got(msg));
            }
        }
    }

    /// Sends a scene command and waits for its STATE.
    fn command(&mut self, msg: ClientMessage) -> Result<bool, AgentError> {
        self.send(&msg)?;
        match self.wait(|m| matches!(m, ServerMessage::State { .. } | ServerMessage::Error { .. }))? {
            Waited::Bye => Ok(false),
            Waited::Got(ServerMessage::Error { code, detail, .. }) => Err(AgentError::Server { code, detail }),
            Waited::Got(_) => Ok(true),
        }
    }

    /// Object and target ids of the next action per the mode's guidance;
    /// `None` once the session has ended.
    fn next_action(&mut self) -> Result<Option<(String, String)>, AgentError> {
        let (object, target) = match self.config.mode {
            SessionMode::BaselineText => {
                if !self.toggle_instructions(true)? {
                    return Ok(None);
                }
                let phrase = self
                    .items
                    .iter()
                    .find(|i| !i.done)
                    .map(|i| i.phrase.clone())
                    .ok_or_else(|| AgentError::Protocol("every item done but no BYE".into()))?;
                if !self.toggle_instructions(false)? {
                    return Ok(None);
                }
                self.names_in(&phrase)?
            }
            SessionMode::AssistantDialogue => {
                self.send(&ClientMessage::UtterText {
                    text: NEXT_STEP_QUESTION.to_string(),
                })?;
                let asked = self.seq;
                let w = self.wait(|m| match m {
                    ServerMessage::AssistantText { reply_to, .. } => *reply_to == asked,
                    ServerMessage::Error { reply_to, .. } => *reply_to == Some(asked),
                    _ => false,
                })?;
                match w {
                    Waited::Bye => return Ok(None),
                    Waited::Got(ServerMessage::Error { code, detail, .. }) => {
                        return Err(AgentError::Server { code, detail })
                    }
                    Waited::Got(ServerMessage::AssistantText { text, .. }) => {
                        let reply = parse_reply(&text, &self.vocabulary());
                        if reply.kind == ReplyKind::TaskDone {
                            self.drain()?;
                            return Ok(None);
                        }
                        self.names_in(&text)?
                    }
                    Waited::Got(_) => unreachable!("filtered by wait"),
                }
            }
        };
        Ok(Some((self.resolve(&object, false)?, self.resolve(&target, true)?)))
    }

    /// Opens or closes the instruction list and waits for it to show so.
    fn toggle_instructions(&mut self, visible: bool) -> Result<bool, AgentError> {
        self.send(&ClientMessage::ToggleInstructions)?;
        let w = self.wait(|m| matches!(m, ServerMessage::Instructions { visible: v, .. } if *v == visible))?;
        Ok(matches!(w, Waited::Got(_)))
    }

    fn vocabulary(&self) -> Vocabulary {
        self.snapshot.as_ref().map(Vocabulary::from_snapshot).unwrap_or_default()
    }

    fn names_in(&self, text: &str) -> Result<(String, String), AgentError> {
        let reply = parse_reply(text, &self.vocabulary());
        reply
            .action
            .map(|a| (a.object, a.target))
            .ok_or_else(|| AgentError::Protocol(format!("no action in guidance `{text}`")))
    }

    /// Nearest snapshot entry with this (normalized) name.
    fn resolve(&self, name: &str, target: bool) -> Result<String, AgentError> {
        let snapshot = self.snapshot.as_ref().ok_or_else(|| AgentError::Protocol("no snapshot yet".into()))?;
        let here = self.position();
        snapshot
            .entries
            .iter()
            .filter(|e| e.is_target == target && !e.held && normalize(&e.name) == name)
            .min_by(|a, b| a.position.distance(here).total_cmp(&b.position.distance(here)))
            .map(|e| e.id.clone())
            .ok_or_else(|| AgentError::Protocol(format!("nothing named `{name}` in view")))
    }

    fn position(&self) -> Vec3 {
        self.avatar.as_ref().map_or(Vec3::new(0.0, 0.0, 0.0), |a| a.position)
    }

    fn entry_position(&self, id: &str) -> Result<Vec3, AgentError> {
        self.snapshot
            .as_ref()
            .and_then(|s| s.entry(id))
            .map(|e| e.position)
            .ok_or_else(|| AgentError::Protocol(format!("`{id}` missing from snapshot")))
    }

    /// TURN toward `goal`, then MOVE (backwards if too close) until the hold
    /// point is over it. Returns false if the session ended meanwhile.
    fn walk_to(&mut self, goal: Vec3) -> Result<bool, AgentError> {
        let from = self.position();
        let d = Vec3::new(goal.x - from.x, 0.0, goal.z - from.z);
        if !self.command(ClientMessage::Turn { heading: d.x.atan2(d.z) })? {
            return Ok(false);
        }
        let u = d.normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        let gap = d.length() - REACH_AHEAD;
        let ticks = (gap.abs() / (self.config.speed * self.config.tick_dt)).round() as u64;
        if ticks == 0 {
            return Ok(true);
        }
        let direction = if gap < 0.0 { u * -1.0 } else { u };
        self.command(ClientMessage::Move { direction, ticks })
    }

    fn pick_and_place(&mut self, object: &str, target: &str) -> Result<(), AgentError> {
        let at = self.entry_position(object)?;
        let _ = self.walk_to(at)? && self.command(ClientMessage::Grab { object_id: object.to_string() })? && {
            let to = self.entry_position(target)?;
            self.walk_to(to)? && self.command(ClientMessage::Release)?
        };
        Ok(())
    }

    /// Picks up a distractor and puts it straight back down.
    fn fumble(&mut self, object: &str) -> Result<(), AgentError> {
        let at = self.entry_position(object)?;
        let _ = self.walk_to(at)?
            && self.command(ClientMessage::Grab { object_id: object.to_string() })?
            && self.command(ClientMessage::Release)?;
        Ok(())
    }
}

/// Connects over TCP and plays one session.
pub fn run_over_tcp(addr: SocketAddr, config: AgentConfig, quiet: Duration) -> Result<Summary, AgentError> {
    let mut conn = TcpConnection::connect(addr, quiet)?;
    scripted_agent(&mut conn, config)
}
