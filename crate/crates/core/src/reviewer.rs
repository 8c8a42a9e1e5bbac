//! Final review of the assembled codebase.

use serde_json::json;
use thiserror::Error;

use crate::debugger::{error_text, execution_payload, Verification};
use crate::gateway::{
    AgentRole, ChatMessage, CompletionParams, CompletionRequest, GatewayError, LlmBackend,
};
use crate::model::{Plan, ReviewReport, UserRequest, Verdict};
use crate::planner::render_plan;
use crate::prompt::{PromptError, PromptTemplate};
use crate::sandbox::{ExecutionOutcome, ProgramRunner, SandboxError};
use crate::transcript::{Agent, EventKind, Transcript};
use crate::workspace::VirtualWorkspace;

pub const DEFAULT_REVIEW_BUDGET: usize = 96_000;
pub const VERDICT_APPROVED: &str = "VERDICT: APPROVED";
pub const VERDICT_NEEDS_WORK: &str = "VERDICT: NEEDS_WORK";

const INTEGRATION_EXCERPT: usize = 2_000;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("cannot review an empty workspace")]
    EmptyWorkspace,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

/// Last verdict line in the report wins; no verdict line means `Unknown`.
pub fn parse_verdict(report_text: &str) -> Verdict {
    for line in report_text.lines().rev() {
        match line.trim() {
            VERDICT_APPROVED => return Verdict::Approved,
            VERDICT_NEEDS_WORK => return Verdict::NeedsWork,
            _ => {}
        }
    }
    Verdict::Unknown
}

/// Renders the codebase, cutting each file to an equal share of `budget`
/// when the whole thing does not fit.
pub fn render_for_review(workspace: &VirtualWorkspace, budget: usize) -> String {
    let full = workspace.render_codebase();
    if full.len() <= budget || workspace.is_empty() {
        return full;
    }
    let share = budget / workspace.len();
    let mut out = String::new();
    for (path, content) in workspace.files() {
        out.push_str("== FILE: ");
        out.push_str(path);
        out.push_str(" ==\n");
        if content.len() <= share {
            out.push_str(content);
        } else {
            let mut end = share;
            while !content.is_char_boundary(end) {
                end -= 1;
            }
            out.push_str(&content[..end]);
            out.push_str(&format!(
                "\n[... file truncated, {} bytes omitted ...]",
                content.len() - end
            ));
        }
        out.push_str("\n\n");
    }
    out
}

/// One-paragraph description of an integration run for the review prompt.
pub fn integration_summary(entry_file: &str, outcome: &ExecutionOutcome) -> String {
    if outcome.passed() {
        return format!("Integration run of `{entry_file}` passed (exit code 0).\n\n");
    }
    let mut detail = error_text(outcome);
    if detail.len() > INTEGRATION_EXCERPT {
        let mut end = INTEGRATION_EXCERPT;
        while !detail.is_char_boundary(end) {
            end -= 1;
        }
        detail.truncate(end);
        detail.push_str(" [...]");
    }
    let status = match (outcome.timed_out, outcome.exit_code) {
        (true, _) => "timed out".to_string(),
        (false, Some(code)) => format!("exit code {code}"),
        (false, None) => "killed by a signal".to_string(),
    };
    format!("Integration run of `{entry_file}` FAILED ({status}). Error output:\n{detail}\n\n")
}

pub fn build_review_prompt(
    request: &UserRequest,
    plan: &Plan,
    workspace: &VirtualWorkspace,
    template: &PromptTemplate,
) -> Result<Vec<ChatMessage>, ReviewError> {
    build_review_prompt_with(
        request,
        plan,
        workspace,
        template,
        None,
        DEFAULT_REVIEW_BUDGET,
    )
}

pub fn build_review_prompt_with(
    request: &UserRequest,
    plan: &Plan,
    workspace: &VirtualWorkspace,
    template: &PromptTemplate,
    integration: Option<&str>,
    budget: usize,
) -> Result<Vec<ChatMessage>, ReviewError> {
    if workspace.is_empty() {
        return Err(ReviewError::EmptyWorkspace);
    }
    let plan_text = render_plan(plan);
    let codebase = render_for_review(workspace, budget);
    Ok(template.render(
        AgentRole::Reviewer,
        &[
            ("request", request.text()),
            ("plan", &plan_text),
            ("codebase", &codebase),
            ("integration", integration.unwrap_or("")),
        ],
    )?)
}

pub struct Reviewer<'a> {
    pub gateway: &'a dyn LlmBackend,
    pub template: &'a PromptTemplate,
    pub params: CompletionParams,
    pub transcript: &'a Transcript,
    pub budget: usize,
}

impl Reviewer<'_> {
    /// Runs the optional integration program, then asks for the review.
    /// Backend failures yield an `Unknown` report rather than an error, so a
    /// broken review never costs the run its code.
    pub fn review(
        &self,
        request: &UserRequest,
        plan: &Plan,
        workspace: &VirtualWorkspace,
        integration: Option<(&dyn ProgramRunner, &str)>,
    ) -> Result<ReviewReport, ReviewError> {
        if workspace.is_empty() {
            return Err(ReviewError::EmptyWorkspace);
        }
        let mut integration_outcome = None;
        let mut summary = None;
        if let Some((runner, entry)) = integration {
            let outcome = runner.run(workspace, entry)?;
            let verification = Verification {
                passed: outcome.passed(),
                outcome,
            };
            self.transcript.emit(
                Agent::Sandbox,
                EventKind::ExecutionRun,
                None,
                execution_payload(entry, &verification),
            );
            summary = Some(integration_summary(entry, &verification.outcome));
            integration_outcome = Some(verification.outcome);
        }

        let messages = build_review_prompt_with(
            request,
            plan,
            workspace,
            self.template,
            summary.as_deref(),
            self.budget,
        )?;
        let request = CompletionRequest::new(AgentRole::Reviewer, messages, self.params.clone())?;
        self.transcript.emit(
            Agent::Reviewer,
            EventKind::PromptSent,
            None,
            json!({"prompt_sha256": request.digest(), "messages": request.messages}),
        );
        let text = match self.gateway.complete(&request) {
            Ok(text) => {
                self.transcript.emit(
                    Agent::Reviewer,
                    EventKind::CompletionReceived,
                    None,
                    json!({"response": text}),
                );
                text
            }
            Err(e) if e.is_replay_divergence() => return Err(e.into()),
            Err(e) => {
                let message = format!("Review failed: backend error: {e}");
                self.transcript.emit(
                    Agent::Reviewer,
                    EventKind::Error,
                    None,
                    json!({"message": message}),
                );
                return Ok(ReviewReport {
                    text: message,
                    verdict: Verdict::Unknown,
                    integration_outcome,
                });
            }
        };
        Ok(ReviewReport {
            verdict: parse_verdict(&text),
            text,
            integration_outcome,
        })
    }
}
