//! Writes a run's artifacts to an output directory:
//!
//! ```text
//! <out>/src/...          final workspace files
//! <out>/plan.md          rendered plan
//! <out>/review.md        review report
//! <out>/transcript.jsonl event log
//! <out>/report.json      statuses, verdict, counts, exit code
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::model::{RunReport, TaskStatus};
use crate::planner::render_plan;
use crate::transcript::{write_jsonl, Agent, EventKind};

pub const SRC_DIR: &str = "src";
pub const PLAN_FILE: &str = "plan.md";
pub const REVIEW_FILE: &str = "review.md";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const REPORT_FILE: &str = "report.json";

fn with_newline(text: &str) -> String {
    let mut s = text.trim_end().to_string();
    s.push('\n');
    s
}

/// Machine-readable summary of a run.
pub fn report_json(report: &RunReport) -> Value {
    let count =
        |pred: fn(&TaskStatus) -> bool| report.statuses.iter().filter(|t| pred(&t.status)).count();
    let calls = |agent: Agent| {
        report
            .transcript
            .iter()
            .filter(|e| e.agent == agent && e.event_kind == EventKind::PromptSent)
            .count()
    };
    let executions = report
        .transcript
        .iter()
        .filter(|e| e.event_kind == EventKind::ExecutionRun)
        .count();
    let tasks: Vec<Value> = report
        .statuses
        .iter()
        .map(|t| {
            let reason = match &t.status {
                TaskStatus::NeedsAttention { reason } | TaskStatus::Skipped { reason } => {
                    Value::from(reason.as_str())
                }
                _ => Value::Null,
            };
            json!({
                "index": t.task.index,
                "title": t.task.title,
                "status": t.status.label(),
                "reason": reason,
                "fix_attempts": t.fix_attempts,
                "verification_rounds": t.verification_rounds,
                "files": t.files,
            })
        })
        .collect();
    let integration = report
        .review
        .as_ref()
        .and_then(|r| r.integration_outcome.as_ref())
        .map(
            |o| json!({ "exit_code": o.exit_code, "timed_out": o.timed_out, "passed": o.passed() }),
        );
    json!({
        "request": report.request.text(),
        "complete": report.is_complete(),
        "abort": report.abort,
        "exit_code": report.exit_code(),
        "verdict": report.verdict().as_str(),
        "tasks": tasks,
        "counts": {
            "tasks": report.statuses.len(),
            "clean_pass": count(|s| matches!(s, TaskStatus::CleanPass)),
            "fixed": count(|s| matches!(s, TaskStatus::Fixed { .. })),
            "needs_attention": count(|s| matches!(s, TaskStatus::NeedsAttention { .. })),
            "skipped": count(|s| matches!(s, TaskStatus::Skipped { .. })),
            "planner_calls": calls(Agent::Planner),
            "coder_calls": calls(Agent::Coder),
            "debugger_calls": calls(Agent::Debugger),
            "reviewer_calls": calls(Agent::Reviewer),
            "executions": executions,
        },
        "integration": integration,
        "files": report.final_workspace.paths().collect::<Vec<_>>(),
    })
}

/// Writes every artifact under `out_dir`. A previous `src/` tree is removed
/// first so stale files never leak into a new run's output.
pub fn write_outputs(report: &RunReport, out_dir: &Path) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    let src = out_dir.join(SRC_DIR);
    if src.exists() {
        fs::remove_dir_all(&src)?;
    }
    fs::create_dir_all(&src)?;
    for (path, content) in report.final_workspace.files() {
        let target = src.join(path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(target, content)?;
    }
    match &report.plan {
        Some(plan) => fs::write(out_dir.join(PLAN_FILE), with_newline(&render_plan(plan)))?,
        None => remove_if_present(&out_dir.join(PLAN_FILE))?,
    }
    match &report.review {
        Some(review) => fs::write(out_dir.join(REVIEW_FILE), with_newline(&review.text))?,
        None => remove_if_present(&out_dir.join(REVIEW_FILE))?,
    }
    let mut transcript = BufWriter::new(fs::File::create(out_dir.join(TRANSCRIPT_FILE))?);
    write_jsonl(&report.transcript, &mut transcript)?;
    transcript.flush()?;
    let mut json = serde_json::to_string_pretty(&report_json(report))?;
    json.push('\n');
    fs::write(out_dir.join(REPORT_FILE), json)
}

fn remove_if_present(path: &Path) -> io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}
