//! Transcript files: one entry per line, `DIR<TAB>unix_ms<TAB>payload`,
//! where DIR is `C` (client line), `S` (server line) or `K` (clock advance).

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

use crate::session::{Direction, PendingAssist, Services, Session, TranscriptEntry};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn format_entry(entry: &TranscriptEntry, unix_ms: u128) -> String {
    format!("{}\t{}\t{}", entry.direction.tag(), unix_ms, entry.line)
}

pub fn parse_line(text: &str, line_no: usize) -> Result<(TranscriptEntry, u128), TranscriptError> {
    let bad = |message: &str| TranscriptError::Malformed {
        line: line_no,
        message: message.to_string(),
    };
    let mut parts = text.splitn(3, '\t');
    let direction = parts
        .next()
        .and_then(Direction::from_tag)
        .ok_or_else(|| bad("unknown direction tag"))?;
    let ms = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad timestamp"))?;
    let line = parts.next().ok_or_else(|| bad("missing payload"))?;
    Ok((
        TranscriptEntry {
            direction,
            line: line.to_string(),
        },
        ms,
    ))
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, TranscriptError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        entries.push(parse_line(&line, i + 1)?.0);
    }
    Ok(entries)
}

/// Appends entries to an open transcript file as they happen.
pub struct TranscriptWriter {
    file: File,
}

impl TranscriptWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(TranscriptWriter { file: File::create(path)? })
    }

    pub fn write(&mut self, entries: &[TranscriptEntry], unix_ms: u128) -> std::io::Result<()> {
        for e in entries {
            writeln!(self.file, "{}", format_entry(e, unix_ms))?;
        }
        self.file.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// Zero-based index among server lines.
    pub index: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub session_id: String,
    pub server_lines: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.divergence.is_none()
    }
}

fn recorded_session_id(entries: &[TranscriptEntry]) -> Option<String> {
    entries
        .iter()
        .filter(|e| e.direction == Direction::Server)
        .find_map(|e| {
            let v: Value = serde_json::from_str(&e.line).ok()?;
            (v["type"] == "WELCOME").then(|| v["session_id"].as_str().map(String::from))?
        })
}

/// Feeds the recorded client lines and clock advances into a fresh session
/// and compares every server line. Assistant work is resolved at the point
/// the recording shows its reply.
pub fn replay(services: Arc<Services>, entries: &[TranscriptEntry]) -> ReplayReport {
    let session_id = recorded_session_id(entries).unwrap_or_else(|| "replay".to_string());
    let mut session = Session::new(services.clone(), session_id.clone());
    let mut pending: VecDeque<PendingAssist> = VecDeque::new();
    let mut produced: Vec<String> = Vec::new();
    let mut expected: Vec<String> = Vec::new();
    for e in entries {
        match e.direction {
            Direction::Clock => {
                let tick = serde_json::from_str::<Value>(&e.line)
                    .ok()
                    .and_then(|v| v["tick"].as_u64());
                if let Some(t) = tick {
                    session.advance_clock(t);
                }
            }
            Direction::Client => {
                let out = session.handle_line(&e.line);
                produced.extend(out.lines);
                pending.extend(out.pending);
            }
            Direction::Server => {
                if produced.len() <= expected.len() {
                    if let Some(p) = pending.pop_front() {
                        produced.extend(session.complete_assist(p.run(&services)).lines);
                    }
                }
                expected.push(e.line.clone());
            }
        }
    }
    let divergence = (0..produced.len().max(expected.len()))
        .find(|&i| produced.get(i) != expected.get(i))
        .map(|index| Divergence {
            index,
            expected: expected.get(index).cloned(),
            actual: produced.get(index).cloned(),
        });
    ReplayReport {
        session_id,
        server_lines: expected.len(),
        divergence,
    }
}
