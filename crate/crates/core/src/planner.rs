//! Requirement analysis: the planner prompt and the numbered-list parser.

use thiserror::Error;

use crate::gateway::{AgentRole, ChatMessage};
use crate::model::{ModelError, Plan, Subtask, UserRequest};
use crate::prompt::{PromptError, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanParseError {
    #[error("planner output contains no numbered lines")]
    EmptyPlan,
    #[error("numbered line {line} has no title")]
    EmptyTitle { line: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn build_planner_prompt(
    request: &UserRequest,
    template: &PromptTemplate,
) -> Result<Vec<ChatMessage>, PromptError> {
    template.render(AgentRole::Planner, &[("request", request.text())])
}

/// If `line` starts a numbered item (`<int>.` or `<int>)` followed by
/// whitespace or end of line), returns the text after the marker.
pub(crate) fn numbered_item(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    let digits = trimmed.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &trimmed[digits..];
    let after = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    match after.chars().next() {
        None => Some(after),
        Some(c) if c.is_whitespace() => Some(after),
        Some(_) => None,
    }
}

/// Parses a numbered-list completion into a [`Plan`].
///
/// Each numbered line starts a task; its text up to the first `:` is the
/// title, and everything after the colon plus the following non-numbered
/// lines becomes the detail. Tasks are renumbered 1..n by order of
/// appearance. Lines before the first numbered line are ignored.
pub fn parse_plan(completion: &str) -> Result<Plan, PlanParseError> {
    struct Draft {
        line: usize,
        title: String,
        detail: Vec<String>,
        bare: bool,
    }

    let mut drafts: Vec<Draft> = Vec::new();
    for (n, line) in completion.lines().enumerate() {
        if let Some(item) = numbered_item(line) {
            let (title, detail) = match item.split_once(':') {
                Some((t, d)) => (t, Some(d)),
                None => (item, None),
            };
            let mut draft = Draft {
                line: n + 1,
                title: title.trim().to_string(),
                detail: Vec::new(),
                bare: item.trim().is_empty(),
            };
            if let Some(d) = detail.map(str::trim).filter(|d| !d.is_empty()) {
                draft.detail.push(d.to_string());
            }
            drafts.push(draft);
        } else if let Some(current) = drafts.last_mut() {
            let text = line.trim();
            if !text.is_empty() {
                current.detail.push(text.to_string());
            }
        }
    }
    if drafts.is_empty() {
        return Err(PlanParseError::EmptyPlan);
    }

    let mut tasks = Vec::with_capacity(drafts.len());
    for (i, mut draft) in drafts.into_iter().enumerate() {
        // "1.\n   Design the model" puts the title on the next line.
        if draft.bare && !draft.detail.is_empty() {
            draft.title = draft.detail.remove(0);
        }
        if draft.title.is_empty() {
            return Err(PlanParseError::EmptyTitle { line: draft.line });
        }
        tasks.push(Subtask {
            index: i + 1,
            title: draft.title,
            detail: draft.detail.join("\n"),
        });
    }
    Ok(Plan::new(tasks, completion)?)
}

/// Canonical text form of a plan, one `<index>. <title>: <detail>` entry per
/// task.
pub fn render_plan(plan: &Plan) -> String {
    plan.tasks()
        .iter()
        .map(Subtask::line)
        .collect::<Vec<_>>()
        .join("\n")
}
