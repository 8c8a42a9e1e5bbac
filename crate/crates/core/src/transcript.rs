//! Structured event log for one pipeline run.
//!
//! Every prompt, completion, sandbox execution, state update and loop break
//! is appended here with a gap-free sequence number. The JSON-lines export
//! uses the field names `seq`, `ts`, `agent`, `event_kind`, `task_index` and
//! `payload`.

use std::io::{self, BufRead, Write};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::AgentRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Planner,
    Coder,
    Debugger,
    Reviewer,
    Orchestrator,
    Sandbox,
}

impl From<AgentRole> for Agent {
    fn from(role: AgentRole) -> Self {
        match role {
            AgentRole::Planner => Agent::Planner,
            AgentRole::Coder => Agent::Coder,
            AgentRole::Debugger => Agent::Debugger,
            AgentRole::Reviewer => Agent::Reviewer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PromptSent,
    CompletionReceived,
    ExecutionRun,
    StateUpdate,
    LoopBreak,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub seq: u64,
    pub ts: String,
    pub agent: Agent,
    pub event_kind: EventKind,
    pub task_index: Option<usize>,
    pub payload: Value,
}

/// Thread-safe append-only transcript. Sequence numbers are assigned under
/// the same lock as the push, so they are strictly increasing and gap-free.
#[derive(Debug, Default)]
pub struct Transcript {
    events: Mutex<Vec<TranscriptEvent>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(
        &self,
        agent: Agent,
        event_kind: EventKind,
        task_index: Option<usize>,
        payload: Value,
    ) -> u64 {
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        let seq = events.len() as u64;
        events.push(TranscriptEvent {
            seq,
            ts: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            agent,
            event_kind,
            task_index,
            payload,
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<TranscriptEvent> {
        self.events
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn into_events(self) -> Vec<TranscriptEvent> {
        self.events.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn write_jsonl<W: Write>(events: &[TranscriptEvent], mut out: W) -> io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TranscriptEvent>> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}
