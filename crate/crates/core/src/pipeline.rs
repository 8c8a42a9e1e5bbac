//! Sequential orchestration: plan, then code and debug each task in order,
//! then review the merged workspace.

use std::collections::BTreeMap;

use serde_json::json;
use thiserror::Error;

use crate::coder::{build_coder_prompt, extract_contribution, CoderError};
use crate::config::{BackendMode, ConfigError, RunConfig};
use crate::debugger::{DebugError, Debugger};
use crate::gateway::{
    AgentRole, CompletionRequest, GatewayError, LiveBackend, LiveConfig, LlmBackend,
    RecordingBackend, ReplayBackend, ReplayMode,
};
use crate::model::{
    AbortInfo, AbortKind, Plan, ReviewReport, RunReport, Subtask, TaskOutcome, TaskStatus,
    UserRequest, Verdict,
};
use crate::planner::{build_planner_prompt, parse_plan, render_plan, PlanParseError};
use crate::prompt::{PromptError, PromptTemplate};
use crate::reviewer::{ReviewError, Reviewer};
use crate::sandbox::{CancelToken, Harness, ProgramRunner, Sandbox, SandboxError};
use crate::transcript::{Agent, EventKind, Transcript};
use crate::workspace::VirtualWorkspace;

pub const PLAN_ARTIFACT: &str = "plan";
pub const REVIEW_ARTIFACT: &str = "review";
const REASON_NO_CODE: &str = "no code produced";
const REASON_ABORTED: &str = "run aborted";
const EMPTY_REVIEW: &str = "No code was produced, so there is nothing to review.";

/// Errors raised while assembling a pipeline, before any model call.
#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

pub fn build_backend(config: &RunConfig) -> Result<Box<dyn LlmBackend>, SetupError> {
    let live = || LiveBackend::new(LiveConfig::from_env(config.base_url.clone()));
    let cassette = || {
        config
            .cassette_path
            .clone()
            .ok_or_else(|| ConfigError::Invalid("no cassette path configured".into()))
    };
    Ok(match config.backend_mode {
        BackendMode::Live => Box::new(live()?),
        BackendMode::Record => {
            Box::new(RecordingBackend::create(live()?, cassette()?).map_err(GatewayError::from)?)
        }
        BackendMode::Replay => {
            let mode = if config.strict_replay {
                ReplayMode::Strict
            } else {
                ReplayMode::Lenient
            };
            Box::new(ReplayBackend::from_path(&cassette()?, mode).map_err(GatewayError::from)?)
        }
    })
}

/// Loads template overrides, falling back to the built-in prompts.
pub fn load_templates(
    config: &RunConfig,
) -> Result<BTreeMap<AgentRole, PromptTemplate>, PromptError> {
    AgentRole::ALL
        .into_iter()
        .map(|role| {
            let template = match config.templates.get(&role) {
                Some(path) => PromptTemplate::load(path)?,
                None => PromptTemplate::default_for(role),
            };
            template.check(role)?;
            Ok((role, template))
        })
        .collect()
}

pub struct Pipeline {
    config: RunConfig,
    backend: Box<dyn LlmBackend>,
    runner: Box<dyn ProgramRunner>,
    harness_entry: Option<String>,
    templates: BTreeMap<AgentRole, PromptTemplate>,
    cancel: CancelToken,
}

/// Why the run stopped early.
struct Abort(AbortInfo);

impl Abort {
    fn new(kind: AbortKind, message: impl Into<String>) -> Self {
        Abort(AbortInfo {
            kind,
            message: message.into(),
        })
    }

    fn gateway(e: &GatewayError) -> Self {
        let kind = match e {
            GatewayError::CassetteMismatch { .. } => AbortKind::CassetteMismatch,
            GatewayError::CassetteExhausted { .. } => AbortKind::CassetteExhausted,
            _ => AbortKind::Gateway,
        };
        Abort::new(kind, e.to_string())
    }

    fn sandbox(e: &SandboxError) -> Self {
        match e {
            SandboxError::Interrupted => Abort::new(AbortKind::Interrupted, e.to_string()),
            _ => Abort::new(AbortKind::Sandbox, e.to_string()),
        }
    }
}

struct RunState {
    transcript: Transcript,
    workspace: VirtualWorkspace,
    plan: Option<Plan>,
    statuses: Vec<TaskOutcome>,
    review: Option<ReviewReport>,
}

impl Pipeline {
    /// Builds the backend and sandbox described by `config`.
    pub fn new(config: RunConfig, cancel: CancelToken) -> Result<Self, SetupError> {
        config.validate()?;
        let backend = build_backend(&config)?;
        Self::with_backend(config, backend, cancel)
    }

    /// Uses the configured sandbox with a caller-supplied backend.
    pub fn with_backend(
        config: RunConfig,
        backend: Box<dyn LlmBackend>,
        cancel: CancelToken,
    ) -> Result<Self, SetupError> {
        config.validate()?;
        let harness = config
            .harness_file
            .as_deref()
            .map(Harness::load)
            .transpose()?;
        let harness_entry = harness.as_ref().map(|h| h.path.clone());
        let sandbox = Sandbox::new(config.sandbox.clone())?
            .with_harness(harness)
            .with_cancel(cancel.clone());
        Self::with_parts(config, backend, Box::new(sandbox), harness_entry, cancel)
    }

    /// Fully injected pipeline; `harness_entry` replaces the changed file as
    /// the verification entry point when set.
    pub fn with_parts(
        config: RunConfig,
        backend: Box<dyn LlmBackend>,
        runner: Box<dyn ProgramRunner>,
        harness_entry: Option<String>,
        cancel: CancelToken,
    ) -> Result<Self, SetupError> {
        config.validate()?;
        let templates = load_templates(&config)?;
        Ok(Self {
            config,
            backend,
            runner,
            harness_entry,
            templates,
            cancel,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn cancel_token(&self) -> CancelToken {
        self.cancel.clone()
    }

    /// Runs every stage. Never panics on model or sandbox trouble: failures
    /// are reported through `RunReport::abort` and task statuses.
    pub fn run(&self, request: &UserRequest) -> RunReport {
        let mut state = RunState {
            transcript: Transcript::new(),
            workspace: VirtualWorkspace::new(),
            plan: None,
            statuses: Vec::new(),
            review: None,
        };
        let abort = self
            .run_stages(request, &mut state)
            .err()
            .map(|Abort(info)| {
                state.transcript.emit(
                    Agent::Orchestrator,
                    EventKind::Error,
                    None,
                    json!({ "abort": info.kind, "message": info.message }),
                );
                info
            });
        if let (Some(_), Some(plan)) = (&abort, &state.plan) {
            for task in plan.tasks().iter().skip(state.statuses.len()) {
                state.statuses.push(TaskOutcome {
                    task: task.clone(),
                    status: TaskStatus::Skipped {
                        reason: REASON_ABORTED.into(),
                    },
                    verification_rounds: 0,
                    fix_attempts: 0,
                    files: Vec::new(),
                });
            }
        }
        RunReport {
            request: request.clone(),
            plan: state.plan,
            statuses: state.statuses,
            review: state.review,
            transcript: state.transcript.into_events(),
            final_workspace: state.workspace,
            abort,
        }
    }

    fn template(&self, role: AgentRole) -> &PromptTemplate {
        &self.templates[&role]
    }

    fn check_cancel(&self) -> Result<(), Abort> {
        if self.cancel.is_cancelled() {
            Err(Abort::new(AbortKind::Interrupted, "interrupted by user"))
        } else {
            Ok(())
        }
    }

    /// One gateway round trip with its two transcript events.
    fn call(
        &self,
        transcript: &Transcript,
        role: AgentRole,
        task_index: Option<usize>,
        messages: Vec<crate::gateway::ChatMessage>,
    ) -> Result<String, Abort> {
        let request = CompletionRequest::new(role, messages, self.config.params_for(role))
            .map_err(|e| Abort::gateway(&e))?;
        transcript.emit(
            role.into(),
            EventKind::PromptSent,
            task_index,
            json!({
                "prompt_sha256": request.digest(),
                "model": request.params.model_name,
                "messages": request.messages,
            }),
        );
        let completion = self.backend.complete(&request).map_err(|e| {
            transcript.emit(
                role.into(),
                EventKind::Error,
                task_index,
                json!({ "error": e.to_string() }),
            );
            Abort::gateway(&e)
        })?;
        transcript.emit(
            role.into(),
            EventKind::CompletionReceived,
            task_index,
            json!({ "completion": completion }),
        );
        Ok(completion)
    }

    fn run_stages(&self, request: &UserRequest, state: &mut RunState) -> Result<(), Abort> {
        let plan = self.plan_stage(request, state)?;
        for task in plan.tasks() {
            self.check_cancel()?;
            let outcome = self.task_stage(task, &plan, state)?;
            state.statuses.push(outcome);
        }
        self.check_cancel()?;
        self.review_stage(request, &plan, state)
    }

    fn plan_stage(&self, request: &UserRequest, state: &mut RunState) -> Result<Plan, Abort> {
        self.check_cancel()?;
        let messages = build_planner_prompt(request, self.template(AgentRole::Planner))
            .map_err(|e| Abort::new(AbortKind::Prompt, e.to_string()))?;
        let completion = self.call(&state.transcript, AgentRole::Planner, None, messages)?;
        let plan = parse_plan(&completion).map_err(|e| match e {
            PlanParseError::EmptyPlan => Abort::new(AbortKind::EmptyPlan, e.to_string()),
            other => Abort::new(AbortKind::EmptyPlan, other.to_string()),
        })?;
        state
            .workspace
            .set_artifact(PLAN_ARTIFACT, render_plan(&plan));
        state.transcript.emit(
            Agent::Orchestrator,
            EventKind::StateUpdate,
            None,
            json!({
                "artifact": PLAN_ARTIFACT,
                "task_count": plan.len(),
                "tasks": plan.tasks().iter().map(|t| &t.title).collect::<Vec<_>>(),
            }),
        );
        state.plan = Some(plan.clone());
        Ok(plan)
    }

    fn task_stage(
        &self,
        task: &Subtask,
        plan: &Plan,
        state: &mut RunState,
    ) -> Result<TaskOutcome, Abort> {
        let index = Some(task.index);
        let messages = build_coder_prompt(
            task,
            plan,
            &state.workspace,
            self.template(AgentRole::Coder),
            self.config.context_budget,
        )
        .map_err(|e| Abort::new(AbortKind::Prompt, e.to_string()))?;
        let completion = self.call(&state.transcript, AgentRole::Coder, index, messages)?;

        let flagged = |status: TaskStatus| TaskOutcome {
            task: task.clone(),
            status,
            verification_rounds: 0,
            fix_attempts: 0,
            files: Vec::new(),
        };
        let contribution = match extract_contribution(&completion, &self.config.main_file) {
            Ok(c) => c,
            Err(e) => {
                let status = match e {
                    CoderError::EmptyContribution => TaskStatus::Skipped {
                        reason: REASON_NO_CODE.into(),
                    },
                    other => TaskStatus::NeedsAttention {
                        reason: other.to_string(),
                    },
                };
                state.transcript.emit(
                    Agent::Orchestrator,
                    EventKind::StateUpdate,
                    index,
                    json!({ "status": status, "files": [] }),
                );
                return Ok(flagged(status));
            }
        };

        let entry = self
            .harness_entry
            .as_deref()
            .unwrap_or(contribution.primary_path())
            .to_string();
        let debugger = Debugger {
            gateway: self.backend.as_ref(),
            runner: self.runner.as_ref(),
            template: self.template(AgentRole::Debugger),
            params: self.config.params_for(AgentRole::Debugger),
            max_fix_attempts: self.config.max_fix_attempts,
            transcript: &state.transcript,
        };
        let result = debugger
            .debug_task(&state.workspace, &contribution, &entry, index)
            .map_err(|e| match e {
                DebugError::Gateway(g) => Abort::gateway(&g),
                DebugError::Sandbox(s) => Abort::sandbox(&s),
                DebugError::Prompt(p) => Abort::new(AbortKind::Prompt, p.to_string()),
                other => Abort::new(AbortKind::Sandbox, other.to_string()),
            })?;

        let files: Vec<String> = result.final_files.keys().cloned().collect();
        state
            .workspace
            .apply_update(result.final_files.iter())
            .map_err(|e| Abort::new(AbortKind::Sandbox, e.to_string()))?;
        state.transcript.emit(
            Agent::Orchestrator,
            EventKind::StateUpdate,
            index,
            json!({ "status": result.status, "files": files }),
        );
        Ok(TaskOutcome {
            task: task.clone(),
            status: result.status,
            verification_rounds: result.verification_rounds,
            fix_attempts: result.fix_attempts,
            files,
        })
    }

    fn review_stage(
        &self,
        request: &UserRequest,
        plan: &Plan,
        state: &mut RunState,
    ) -> Result<(), Abort> {
        let report = if state.workspace.is_empty() {
            ReviewReport {
                text: EMPTY_REVIEW.into(),
                verdict: Verdict::Unknown,
                integration_outcome: None,
            }
        } else {
            let reviewer = Reviewer {
                gateway: self.backend.as_ref(),
                template: self.template(AgentRole::Reviewer),
                params: self.config.params_for(AgentRole::Reviewer),
                transcript: &state.transcript,
                budget: self.config.review_budget,
            };
            let integration = self
                .config
                .integration_entry
                .as_deref()
                .map(|entry| (self.runner.as_ref(), entry));
            reviewer
                .review(request, plan, &state.workspace, integration)
                .map_err(|e| match e {
                    ReviewError::Gateway(g) => Abort::gateway(&g),
                    ReviewError::Sandbox(s) => Abort::sandbox(&s),
                    other => Abort::new(AbortKind::Prompt, other.to_string()),
                })?
        };
        state
            .workspace
            .set_artifact(REVIEW_ARTIFACT, report.text.clone());
        state.transcript.emit(
            Agent::Orchestrator,
            EventKind::StateUpdate,
            None,
            json!({ "artifact": REVIEW_ARTIFACT, "verdict": report.verdict.as_str() }),
        );
        state.review = Some(report);
        Ok(())
    }
}

/// Convenience wrapper: build from config and run once.
pub fn run_pipeline(request: &UserRequest, config: RunConfig) -> Result<RunReport, SetupError> {
    Ok(Pipeline::new(config, CancelToken::new())?.run(request))
}
