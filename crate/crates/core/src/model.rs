//! Domain types shared by every stage of the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::ExecutionOutcome;
use crate::transcript::TranscriptEvent;
use crate::workspace::VirtualWorkspace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("user request is empty")]
    EmptyRequest,
    #[error("plan has no tasks")]
    EmptyPlan,
    #[error("task {index} has an empty title")]
    EmptyTitle { index: usize },
    #[error("task indices must run 1..n, found {found} at position {position}")]
    BadIndex { position: usize, found: usize },
}

/// A natural-language software request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRequest(String);

impl UserRequest {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyRequest);
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

/// One numbered entry of a [`Plan`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub index: usize,
    pub title: String,
    pub detail: String,
}

impl Subtask {
    /// The canonical one-line form, `<index>. <title>: <detail>`.
    pub fn line(&self) -> String {
        if self.detail.is_empty() {
            format!("{}. {}", self.index, self.title)
        } else {
            format!("{}. {}: {}", self.index, self.title, self.detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    tasks: Vec<Subtask>,
    source_text: String,
}

impl Plan {
    pub fn new(tasks: Vec<Subtask>, source_text: impl Into<String>) -> Result<Self, ModelError> {
        if tasks.is_empty() {
            return Err(ModelError::EmptyPlan);
        }
        for (position, task) in tasks.iter().enumerate() {
            if task.index != position + 1 {
                return Err(ModelError::BadIndex {
                    position,
                    found: task.index,
                });
            }
            if task.title.trim().is_empty() {
                return Err(ModelError::EmptyTitle { index: task.index });
            }
        }
        Ok(Self {
            tasks,
            source_text: source_text.into(),
        })
    }

    pub fn tasks(&self) -> &[Subtask] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }
}

/// How a subtask ended up after its code/debug cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    CleanPass,
    Fixed { fix_attempts: u32 },
    NeedsAttention { reason: String },
    Skipped { reason: String },
}

impl TaskStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, TaskStatus::CleanPass | TaskStatus::Fixed { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            TaskStatus::CleanPass => "clean_pass",
            TaskStatus::Fixed { .. } => "fixed",
            TaskStatus::NeedsAttention { .. } => "needs_attention",
            TaskStatus::Skipped { .. } => "skipped",
        }
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskStatus::CleanPass => f.write_str("clean pass"),
            TaskStatus::Fixed { fix_attempts } => {
                write!(f, "fixed after {fix_attempts} attempt(s)")
            }
            TaskStatus::NeedsAttention { reason } => write!(f, "needs attention ({reason})"),
            TaskStatus::Skipped { reason } => write!(f, "skipped ({reason})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    NeedsWork,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Approved => "approved",
            Verdict::NeedsWork => "needs_work",
            Verdict::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub text: String,
    pub verdict: Verdict,
    pub integration_outcome: Option<ExecutionOutcome>,
}

/// Per-task record kept in a [`RunReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: Subtask,
    pub status: TaskStatus,
    pub verification_rounds: u32,
    pub fix_attempts: u32,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    EmptyPlan,
    Gateway,
    CassetteMismatch,
    CassetteExhausted,
    Sandbox,
    Prompt,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub kind: AbortKind,
    pub message: String,
}

/// Everything one pipeline run produced.
///
/// `plan` and `review` are absent only when the run aborted before reaching
/// those stages. When a plan exists, `statuses` has one entry per task in
/// plan order; tasks never reached by an aborted run are `Skipped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub request: UserRequest,
    pub plan: Option<Plan>,
    pub statuses: Vec<TaskOutcome>,
    pub review: Option<ReviewReport>,
    pub transcript: Vec<TranscriptEvent>,
    pub final_workspace: VirtualWorkspace,
    pub abort: Option<AbortInfo>,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.abort.is_none()
    }

    pub fn verdict(&self) -> Verdict {
        self.review
            .as_ref()
            .map(|r| r.verdict)
            .unwrap_or(Verdict::Unknown)
    }

    /// Process exit code: 0 when every task passed and the review approved,
    /// 1 when the run completed with open issues, 2 on a fatal abort.
    pub fn exit_code(&self) -> i32 {
        if !self.is_complete() {
            return 2;
        }
        let statuses: Vec<&TaskStatus> = self.statuses.iter().map(|t| &t.status).collect();
        exit_code_for(&statuses, self.verdict())
    }
}

pub fn exit_code_for(statuses: &[&TaskStatus], verdict: Verdict) -> i32 {
    if statuses.iter().all(|s| s.is_success()) && verdict == Verdict::Approved {
        0
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(index: usize, title: &str) -> Subtask {
        Subtask {
            index,
            title: title.into(),
            detail: String::new(),
        }
    }

    #[test]
    fn request_must_have_text() {
        assert_eq!(UserRequest::new("  \n\t"), Err(ModelError::EmptyRequest));
        assert_eq!(UserRequest::new(" x ").unwrap().text(), " x ");
    }

    #[test]
    fn plan_invariants() {
        assert_eq!(Plan::new(vec![], ""), Err(ModelError::EmptyPlan));
        assert!(matches!(
            Plan::new(vec![task(1, "a"), task(3, "b")], ""),
            Err(ModelError::BadIndex {
                position: 1,
                found: 3
            })
        ));
        assert!(matches!(
            Plan::new(vec![task(1, " ")], ""),
            Err(ModelError::EmptyTitle { index: 1 })
        ));
        assert_eq!(Plan::new(vec![task(1, "a")], "1. a").unwrap().len(), 1);
    }

    #[test]
    fn subtask_line_omits_empty_detail() {
        assert_eq!(task(1, "A").line(), "1. A");
        let t = Subtask {
            index: 1,
            title: "A".into(),
            detail: "b".into(),
        };
        assert_eq!(t.line(), "1. A: b");
    }

    #[test]
    fn exit_code_contract() {
        let clean = TaskStatus::CleanPass;
        let fixed = TaskStatus::Fixed { fix_attempts: 2 };
        let skipped = TaskStatus::Skipped {
            reason: "no code produced".into(),
        };
        let stuck = TaskStatus::NeedsAttention {
            reason: "retry limit".into(),
        };
        assert_eq!(exit_code_for(&[&clean, &fixed], Verdict::Approved), 0);
        assert_eq!(exit_code_for(&[&clean, &fixed], Verdict::NeedsWork), 1);
        assert_eq!(exit_code_for(&[&clean], Verdict::Unknown), 1);
        assert_eq!(exit_code_for(&[&clean, &stuck], Verdict::Approved), 1);
        assert_eq!(exit_code_for(&[&skipped], Verdict::Approved), 1);
    }

    #[test]
    fn status_serializes_with_tag() {
        let json = serde_json::to_string(&TaskStatus::Fixed { fix_attempts: 1 }).unwrap();
        assert_eq!(json, r#"{"status":"fixed","fix_attempts":1}"#);
    }
}
