//! Verification and the bounded verify → fix → verify loop.

use std::collections::BTreeMap;

use serde_json::json;
use thiserror::Error;

use crate::coder::{extract_contribution, CodeContribution};
use crate::gateway::{
    AgentRole, ChatMessage, CompletionParams, CompletionRequest, GatewayError, LlmBackend,
};
use crate::model::TaskStatus;
use crate::prompt::{PromptError, PromptTemplate};
use crate::sandbox::{ExecutionOutcome, ProgramRunner, SandboxError};
use crate::transcript::{Agent, EventKind, Transcript};
use crate::workspace::{VirtualWorkspace, WorkspaceError};

pub const DEFAULT_MAX_FIX_ATTEMPTS: u32 = 3;

pub const TIMEOUT_NOTICE: &str =
    "The program did not finish before the sandbox timeout and was terminated. Look for infinite loops or blocking reads.";

pub const REASON_RETRY_LIMIT: &str = "retry limit";
pub const REASON_IDENTICAL_FIX: &str = "identical fix";

#[derive(Debug, Error)]
pub enum DebugError {
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    /// Replay divergence; the caller aborts the run.
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("changed file {0:?} is not in the workspace")]
    UnknownFile(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub outcome: ExecutionOutcome,
    pub passed: bool,
}

/// Runs `entry_file` against `workspace`. Pass means exit code 0 without a
/// timeout. The workspace itself is untouched; the runner works on a copy.
pub fn verify(
    runner: &dyn ProgramRunner,
    workspace: &VirtualWorkspace,
    changed_files: &[&str],
    entry_file: &str,
) -> Result<Verification, DebugError> {
    if let Some(missing) = changed_files.iter().find(|f| !workspace.contains(f)) {
        return Err(DebugError::UnknownFile(missing.to_string()));
    }
    let outcome = runner.run(workspace, entry_file)?;
    let passed = outcome.passed();
    Ok(Verification { outcome, passed })
}

/// The error text shown to the debugger for a failed run.
pub fn error_text(outcome: &ExecutionOutcome) -> String {
    if outcome.timed_out {
        return TIMEOUT_NOTICE.to_string();
    }
    if !outcome.stderr.trim().is_empty() {
        return outcome.stderr.trim_end().to_string();
    }
    let status = match outcome.exit_code {
        Some(code) => format!("The program exited with status {code}."),
        None => "The program was terminated by a signal.".to_string(),
    };
    if outcome.stdout.trim().is_empty() {
        status
    } else {
        format!("{status}\nOutput:\n{}", outcome.stdout.trim_end())
    }
}

pub fn build_fix_prompt(
    code: &str,
    outcome: &ExecutionOutcome,
    template: &PromptTemplate,
) -> Result<Vec<ChatMessage>, PromptError> {
    let error = error_text(outcome);
    template.render(AgentRole::Debugger, &[("code", code), ("error", &error)])
}

/// Strips trailing whitespace on each line and drops trailing blank lines.
pub fn normalize_code(code: &str) -> String {
    let lines: Vec<&str> = code.lines().map(str::trim_end).collect();
    let end = lines
        .iter()
        .rposition(|l| !l.is_empty())
        .map_or(0, |i| i + 1);
    lines[..end].join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebugResult {
    pub final_files: BTreeMap<String, String>,
    pub status: TaskStatus,
    pub verification_rounds: u32,
    pub fix_attempts: u32,
    pub outcomes: Vec<ExecutionOutcome>,
}

/// Everything the fix loop needs besides the code under test.
pub struct Debugger<'a> {
    pub gateway: &'a dyn LlmBackend,
    pub runner: &'a dyn ProgramRunner,
    pub template: &'a PromptTemplate,
    pub params: CompletionParams,
    pub max_fix_attempts: u32,
    pub transcript: &'a Transcript,
}

impl Debugger<'_> {
    /// Verifies `contribution` on top of `workspace` and drives fixes until
    /// the program passes, the retry limit is hit, or a fix comes back
    /// unchanged.
    ///
    /// At most `max_fix_attempts` gateway calls and `max_fix_attempts + 1`
    /// verifications happen. On `NeedsAttention` the returned files are the
    /// last verified candidate. Only cassette divergence and sandbox
    /// failures surface as errors; other backend errors end the loop with
    /// `NeedsAttention`.
    pub fn debug_task(
        &self,
        workspace: &VirtualWorkspace,
        contribution: &CodeContribution,
        entry_file: &str,
        task_index: Option<usize>,
    ) -> Result<DebugResult, DebugError> {
        let failing_file = contribution.primary_path().to_string();
        let mut candidate = contribution.files().clone();
        let mut fix_attempts = 0u32;
        let mut outcomes = Vec::new();

        let finish = |candidate: BTreeMap<String, String>,
                      status: TaskStatus,
                      fix_attempts: u32,
                      outcomes: Vec<ExecutionOutcome>| {
            self.transcript.emit(
                Agent::Debugger,
                EventKind::StateUpdate,
                task_index,
                json!({
                    "status": status,
                    "fix_attempts": fix_attempts,
                    "verification_rounds": outcomes.len(),
                    "files": candidate.keys().collect::<Vec<_>>(),
                }),
            );
            DebugResult {
                final_files: candidate,
                status,
                verification_rounds: outcomes.len() as u32,
                fix_attempts,
                outcomes,
            }
        };

        loop {
            let scratch = workspace.updated(&candidate)?;
            let changed: Vec<&str> = candidate.keys().map(String::as_str).collect();
            let verification = verify(self.runner, &scratch, &changed, entry_file)?;
            self.transcript.emit(
                Agent::Sandbox,
                EventKind::ExecutionRun,
                task_index,
                execution_payload(entry_file, &verification),
            );
            let outcome = verification.outcome;
            outcomes.push(outcome.clone());

            if verification.passed {
                let status = if fix_attempts == 0 {
                    TaskStatus::CleanPass
                } else {
                    TaskStatus::Fixed { fix_attempts }
                };
                return Ok(finish(candidate, status, fix_attempts, outcomes));
            }
            if fix_attempts >= self.max_fix_attempts {
                self.loop_break(task_index, REASON_RETRY_LIMIT);
                let status = TaskStatus::NeedsAttention {
                    reason: REASON_RETRY_LIMIT.into(),
                };
                return Ok(finish(candidate, status, fix_attempts, outcomes));
            }

            let current = candidate.get(&failing_file).cloned().unwrap_or_default();
            let messages = build_fix_prompt(&current, &outcome, self.template)?;
            let request =
                CompletionRequest::new(AgentRole::Debugger, messages, self.params.clone())?;
            self.transcript.emit(
                Agent::Debugger,
                EventKind::PromptSent,
                task_index,
                json!({"prompt_sha256": request.digest(), "messages": request.messages}),
            );
            let response = match self.gateway.complete(&request) {
                Ok(r) => r,
                Err(e) if e.is_replay_divergence() => return Err(e.into()),
                Err(e) => {
                    let reason = format!("backend error: {e}");
                    self.transcript.emit(
                        Agent::Debugger,
                        EventKind::Error,
                        task_index,
                        json!({"message": reason}),
                    );
                    let status = TaskStatus::NeedsAttention { reason };
                    return Ok(finish(candidate, status, fix_attempts, outcomes));
                }
            };
            fix_attempts += 1;
            self.transcript.emit(
                Agent::Debugger,
                EventKind::CompletionReceived,
                task_index,
                json!({"response": response}),
            );

            let fixed = match extract_contribution(&response, &failing_file) {
                Ok(c) => c.into_files(),
                Err(e) => {
                    let reason = format!("unusable fix: {e}");
                    self.loop_break(task_index, &reason);
                    let status = TaskStatus::NeedsAttention { reason };
                    return Ok(finish(candidate, status, fix_attempts, outcomes));
                }
            };
            let unchanged = fixed.iter().all(|(path, code)| {
                candidate
                    .get(path)
                    .is_some_and(|prev| normalize_code(prev) == normalize_code(code))
            });
            if unchanged {
                self.loop_break(task_index, REASON_IDENTICAL_FIX);
                let status = TaskStatus::NeedsAttention {
                    reason: REASON_IDENTICAL_FIX.into(),
                };
                return Ok(finish(candidate, status, fix_attempts, outcomes));
            }
            candidate.extend(fixed);
        }
    }

    fn loop_break(&self, task_index: Option<usize>, reason: &str) {
        self.transcript.emit(
            Agent::Debugger,
            EventKind::LoopBreak,
            task_index,
            json!({"reason": reason}),
        );
    }
}

pub(crate) fn execution_payload(
    entry_file: &str,
    verification: &Verification,
) -> serde_json::Value {
    let o = &verification.outcome;
    json!({
        "entry_file": entry_file,
        "exit_code": o.exit_code,
        "timed_out": o.timed_out,
        "passed": verification.passed,
        "stdout": o.stdout,
        "stderr": o.stderr,
    })
}
