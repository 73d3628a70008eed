//! Session server: the wire protocol, per-client session state machine,
//! transcript recording/replay and the tokio network transport.

pub mod net;
pub mod protocol;
pub mod session;
pub mod transcript;

use std::sync::Arc;

use taskpilot_core::assistant::NEXT_STEP_QUESTION;
use taskpilot_core::gateway::AssistantBackend;
use taskpilot_core::speech::{StubSynthesizer, StubTranscriber, Synthesizer};
use taskpilot_core::Catalog;

pub use net::{Server, ServerOptions};
pub use protocol::{ClientKind, ClientMessage, ServerMessage, SessionMode};
pub use session::{Output, Services, Session};

/// Questions the stub transcriber recognizes: the next-step question and
/// "Where is the X?" for every object in the catalog, each keyed by the
/// fingerprint of its stub-synthesized audio.
pub fn stub_utterances(catalog: &Catalog) -> Vec<String> {
    let mut texts = vec![NEXT_STEP_QUESTION.to_string()];
    for scenario in catalog.scenarios() {
        for o in &scenario.scene.objects {
            let q = format!("Where is the {}?", o.name);
            if !texts.contains(&q) {
                texts.push(q);
            }
        }
    }
    texts
}

pub fn stub_transcriber(catalog: &Catalog) -> StubTranscriber {
    let mut stt = StubTranscriber::new();
    for text in stub_utterances(catalog) {
        if let Ok(audio) = StubSynthesizer.synthesize(&text) {
            stt = stt.with(&audio, text);
        }
    }
    stt
}

impl Services {
    /// Services with stub speech backends.
    pub fn with_stub_speech(catalog: Catalog, backend: Arc<dyn AssistantBackend>) -> Self {
        let transcriber = Arc::new(stub_transcriber(&catalog));
        Services {
            catalog,
            backend,
            transcriber,
            synthesizer: Arc::new(StubSynthesizer),
        }
    }
}

/// In-process driver: assistant work runs inline right after the utterance,
/// so output order is fully deterministic.
pub struct InlineSession {
    services: Arc<Services>,
    session: Session,
}

impl InlineSession {
    pub fn new(services: Arc<Services>, session_id: impl Into<String>) -> Self {
        let session = Session::new(services.clone(), session_id);
        InlineSession { services, session }
    }

    /// Handles one client line and returns every server line it caused.
    pub fn send(&mut self, line: &str) -> Vec<String> {
        let out = self.session.handle_line(line);
        let mut lines = out.lines;
        if let Some(p) = out.pending {
            lines.extend(self.session.complete_assist(p.run(&self.services)).lines);
        }
        lines
    }

    pub fn session(&self) -> &Session {
        &self.session
    }
}
