//! Role prompt templates.
//!
//! A template file is UTF-8 text with two sections separated by a line that
//! is exactly `---`: the system message first, then the user message. The
//! user section carries `{name}` placeholders that each role fills in.
//! Substitution is single-pass, so braces inside substituted values are
//! never re-expanded.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::gateway::{AgentRole, ChatMessage};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{role} template is missing the {{{placeholder}}} placeholder")]
    MissingPlaceholder {
        role: &'static str,
        placeholder: &'static str,
    },
    #[error("template has no `---` line separating system and user sections")]
    MissingSeparator,
    #[error("template section is empty: {0}")]
    EmptySection(&'static str),
    #[error("prompt contains volatile content ({kind}): {snippet:?}")]
    VolatileContent { kind: &'static str, snippet: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

const SEPARATOR: &str = "---";

impl PromptTemplate {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut seen = false;
        for line in text.lines() {
            if !seen && line.trim_end() == SEPARATOR {
                seen = true;
                continue;
            }
            if seen {
                user.push(line);
            } else {
                system.push(line);
            }
        }
        if !seen {
            return Err(PromptError::MissingSeparator);
        }
        let system = system.join("\n").trim().to_string();
        let user = user.join("\n").trim().to_string();
        if system.is_empty() {
            return Err(PromptError::EmptySection("system"));
        }
        if user.is_empty() {
            return Err(PromptError::EmptySection("user"));
        }
        Ok(Self { system, user })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Default template for `role`.
    pub fn default_for(role: AgentRole) -> Self {
        match role {
            AgentRole::Planner => Self::new(PLANNER_SYSTEM, PLANNER_USER),
            AgentRole::Coder => Self::new(CODER_SYSTEM, CODER_USER),
            AgentRole::Debugger => Self::new(DEBUGGER_SYSTEM, DEBUGGER_USER),
            AgentRole::Reviewer => Self::new(REVIEWER_SYSTEM, REVIEWER_USER),
        }
    }

    /// Checks that the user section has every placeholder `role` fills in.
    pub fn check(&self, role: AgentRole) -> Result<(), PromptError> {
        for placeholder in required_placeholders(role) {
            if !self.user.contains(&format!("{{{placeholder}}}")) {
                return Err(PromptError::MissingPlaceholder {
                    role: role.as_str(),
                    placeholder,
                });
            }
        }
        Ok(())
    }

    /// Fills the user section and returns `[system, user]` messages after
    /// running the volatile-content lint.
    pub fn render(
        &self,
        role: AgentRole,
        values: &[(&str, &str)],
    ) -> Result<Vec<ChatMessage>, PromptError> {
        self.check(role)?;
        let messages = vec![
            ChatMessage::system(self.system.clone()),
            ChatMessage::user(substitute(&self.user, values)),
        ];
        lint_volatile(&messages)?;
        Ok(messages)
    }
}

pub fn required_placeholders(role: AgentRole) -> &'static [&'static str] {
    match role {
        AgentRole::Planner => &["request"],
        AgentRole::Coder => &["plan", "task", "context"],
        AgentRole::Debugger => &["code", "error"],
        AgentRole::Reviewer => &["request", "plan", "codebase", "integration"],
    }
}

fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

struct VolatilePattern {
    kind: &'static str,
    regex: Regex,
}

fn volatile_patterns() -> &'static [VolatilePattern] {
    static PATTERNS: OnceLock<Vec<VolatilePattern>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            (
                "timestamp",
                r"\b\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:?\d{2})",
            ),
            (
                "temporary path",
                r"/tmp/\.tmp[A-Za-z0-9]{6}|\.tmp[A-Za-z0-9]{6}/",
            ),
            (
                "random id",
                r"\b[0-9a-f]{8}-[0-9a-f]{4}-[1-5][0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}\b",
            ),
        ]
        .into_iter()
        .map(|(kind, re)| VolatilePattern {
            kind,
            regex: Regex::new(re).expect("static regex"),
        })
        .collect()
    })
}

/// Rejects prompts carrying wall-clock timestamps, sandbox temp paths or
/// UUIDs. Such content would change the prompt digest between a recorded
/// run and its replay.
pub fn lint_volatile(messages: &[ChatMessage]) -> Result<(), PromptError> {
    for message in messages {
        for pattern in volatile_patterns() {
            if let Some(m) = pattern.regex.find(&message.content) {
                return Err(PromptError::VolatileContent {
                    kind: pattern.kind,
                    snippet: m.as_str().to_string(),
                });
            }
        }
    }
    Ok(())
}

pub const PLANNER_SYSTEM: &str =
    "You are a software planning assistant. Your job is to help plan a project given a description.";

pub const PLANNER_USER: &str = "Project goal: {request}.\nPlease output a numbered list of development tasks, including design, implementation, and testing steps needed to accomplish this goal. Be thorough but concise.";

pub const CODER_SYSTEM: &str = "You are a senior software developer. You implement one task of a larger plan at a time. Use best practices and comment where necessary. Only return code for the task you are given; do not include explanations unless as code comments. Do not solve unrelated tasks or duplicate existing code.";

pub const CODER_USER: &str = "Project plan:\n{plan}\n\nCurrent task:\n{task}\n\n{context}Implement the following component: the current task above. Output only code. Begin each file with a directive comment on its first line naming the target file, `# FILE: <path>` (or `// FILE: <path>`). When you change an existing file, output the complete new content of that file.";

pub const DEBUGGER_SYSTEM: &str = "You are a code debugging assistant. Given code and an error or failing test, you will identify the issue and propose a fix.";

pub const DEBUGGER_USER: &str = "Code:\n{code}\n\nError:\n{error}\n\nIdentify the cause of the error and modify the code to fix it. Provide only the corrected code.";

pub const REVIEWER_SYSTEM: &str = "You are a senior code reviewer performing the final quality assurance of a project. You check correctness, code quality, and whether the original requirements are satisfied.";

pub const REVIEWER_USER: &str = "Original request:\n{request}\n\nPlan:\n{plan}\n\nCodebase:\n{codebase}\n{integration}Summarize any problems or improvements in the following code and confirm if the requirements are satisfied. End your report with exactly one line that reads either `VERDICT: APPROVED` or `VERDICT: NEEDS_WORK`.";
