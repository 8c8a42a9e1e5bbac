//! Code generation: the coder prompt and extraction of code from completions.
//!
//! Fence grammar: a line starting with three backticks (optionally followed
//! by an info string) opens a block and a line of three backticks closes
//! it. Inside a block, a first non-blank line `# FILE: <path>` or
//! `// FILE: <path>` names the target file and is removed from the code.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AgentRole, ChatMessage};
use crate::model::{Plan, Subtask};
use crate::planner::render_plan;
use crate::prompt::{PromptError, PromptTemplate};
use crate::workspace::{validate_path, VirtualWorkspace, WorkspaceError};

pub const DEFAULT_CONTEXT_BUDGET: usize = 24_000;

#[derive(Debug, Error)]
pub enum CoderError {
    #[error("completion contains no code")]
    EmptyContribution,
    #[error(transparent)]
    InvalidPath(#[from] WorkspaceError),
    #[error("task {0} is not part of the plan")]
    TaskNotInPlan(usize),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Code extracted from one completion, keyed by target file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeContribution {
    files: BTreeMap<String, String>,
    primary: String,
    raw_completion: String,
}

impl CodeContribution {
    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    /// The first file named in the completion, or the default path.
    pub fn primary_path(&self) -> &str {
        &self.primary
    }

    pub fn raw_completion(&self) -> &str {
        &self.raw_completion
    }

    pub fn into_files(self) -> BTreeMap<String, String> {
        self.files
    }
}

fn directive_path(line: &str) -> Option<&str> {
    let line = line.trim();
    let rest = line
        .strip_prefix("# FILE: ")
        .or_else(|| line.strip_prefix("// FILE: "))?;
    Some(rest.trim())
}

fn is_fence_open(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn is_fence_close(line: &str) -> bool {
    line.trim() == "```"
}

/// Splits a completion into fenced block bodies. Returns `None` when the
/// completion has no fences at all.
fn fenced_blocks(completion: &str) -> Option<Vec<Vec<&str>>> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in completion.lines() {
        match current.as_mut() {
            None if is_fence_open(line) => current = Some(Vec::new()),
            None => {}
            Some(_) if is_fence_close(line) => blocks.push(current.take().unwrap_or_default()),
            Some(body) => body.push(line),
        }
    }
    // An unterminated fence runs to the end of the completion.
    if let Some(body) = current {
        blocks.push(body);
    }
    if blocks.is_empty() {
        None
    } else {
        Some(blocks)
    }
}

pub fn extract_contribution(
    completion: &str,
    default_path: &str,
) -> Result<CodeContribution, CoderError> {
    validate_path(default_path)?;
    let mut order: Vec<String> = Vec::new();
    let mut pieces: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut add = |path: &str, code: String| {
        if !pieces.contains_key(path) {
            order.push(path.to_string());
        }
        pieces.entry(path.to_string()).or_default().push(code);
    };

    match fenced_blocks(completion) {
        None => add(default_path, completion.trim().to_string()),
        Some(blocks) => {
            for body in blocks {
                let first = body.iter().position(|l| !l.trim().is_empty());
                let target = first.and_then(|i| directive_path(body[i]).map(|p| (i, p)));
                match target {
                    Some((i, path)) => {
                        validate_path(path)?;
                        add(path, body[i + 1..].join("\n"));
                    }
                    None => add(default_path, body.join("\n")),
                }
            }
        }
    }

    let mut files = BTreeMap::new();
    for (path, parts) in pieces {
        let parts: Vec<String> = parts.into_iter().filter(|p| !p.trim().is_empty()).collect();
        if !parts.is_empty() {
            files.insert(path, parts.join("\n\n"));
        }
    }
    let primary = order
        .into_iter()
        .find(|p| files.contains_key(p))
        .ok_or(CoderError::EmptyContribution)?;
    Ok(CodeContribution {
        files,
        primary,
        raw_completion: completion.to_string(),
    })
}

fn definition_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*(?:(?:pub(?:\([a-z]+\))?|export|public|private|protected|static|async|default)\s+)*(?:def|class|fn|struct|enum|trait|impl|interface|type|function|func|module|mod|const|let|var)\b",
        )
        .expect("static regex")
    })
}

/// Per-file listing of definition lines, used when the full codebase would
/// not fit in the context budget.
pub fn signature_digest(workspace: &VirtualWorkspace) -> String {
    let mut out = String::new();
    for (path, content) in workspace.files() {
        out.push_str("== SIGNATURES: ");
        out.push_str(path);
        out.push_str(" ==\n");
        for line in content.lines().filter(|l| definition_pattern().is_match(l)) {
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

fn workspace_context(workspace: &VirtualWorkspace, context_budget: usize) -> String {
    if workspace.is_empty() {
        return "The codebase is currently empty.\n\n".to_string();
    }
    let full = workspace.render_codebase();
    if full.len() <= context_budget {
        format!("Current codebase:\n{full}")
    } else {
        format!(
            "Current codebase (signatures only, full files omitted):\n{}",
            signature_digest(workspace)
        )
    }
}

pub fn build_coder_prompt(
    task: &Subtask,
    plan: &Plan,
    workspace: &VirtualWorkspace,
    template: &PromptTemplate,
    context_budget: usize,
) -> Result<Vec<ChatMessage>, CoderError> {
    if plan.tasks().get(task.index.wrapping_sub(1)) != Some(task) {
        return Err(CoderError::TaskNotInPlan(task.index));
    }
    let plan_text = render_plan(plan);
    let task_line = task.line();
    let context = workspace_context(workspace, context_budget);
    Ok(template.render(
        AgentRole::Coder,
        &[
            ("plan", &plan_text),
            ("task", &task_line),
            ("context", &context),
        ],
    )?)
}
