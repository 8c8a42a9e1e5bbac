//! Materializes a workspace into a temporary directory and runs a program in
//! it under a wall-clock timeout.
//!
//! The child runs in its own process group with a scrubbed environment
//! (only `PATH`, `HOME` and locale variables survive). On timeout or
//! interrupt the whole group is killed. Captured streams are truncated to
//! the configured limit and any occurrence of the temporary directory path
//! is removed so outputs are stable across runs.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tempfile::TempDir;
use thiserror::Error;

use crate::workspace::{validate_path, VirtualWorkspace, WorkspaceError};

pub const FILE_PLACEHOLDER: &str = "{file}";
pub const TRUNCATION_MARKER: &str = "…[truncated]";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_CAPTURE_LIMIT: usize = 64 * 1024;

const ENV_ALLOWLIST: &[&str] = &["PATH", "HOME", "LANG", "LC_ALL", "LC_CTYPE", "LANGUAGE"];
const POLL_INTERVAL: Duration = Duration::from_millis(5);
const READER_GRACE: Duration = Duration::from_millis(500);

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("invalid sandbox config: {0}")]
    InvalidConfig(String),
    #[error("cannot spawn {program:?}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("entry file {0:?} does not exist in the sandbox")]
    MissingEntry(String),
    #[error(transparent)]
    InvalidPath(#[from] WorkspaceError),
    #[error("sandbox I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("execution interrupted")]
    Interrupted,
}

/// Shared flag used to stop a running execution from another thread.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub runtime_command: Vec<String>,
    pub timeout: Duration,
    pub capture_limit: usize,
    pub stdin_script: Option<Vec<String>>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            runtime_command: vec!["python3".into(), FILE_PLACEHOLDER.into()],
            timeout: DEFAULT_TIMEOUT,
            capture_limit: DEFAULT_CAPTURE_LIMIT,
            stdin_script: None,
        }
    }
}

impl SandboxConfig {
    pub fn with_command<S: Into<String>>(command: impl IntoIterator<Item = S>) -> Self {
        Self {
            runtime_command: command.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let invalid = |m: &str| Err(SandboxError::InvalidConfig(m.to_string()));
        if self.runtime_command.is_empty() {
            return invalid("runtime command is empty");
        }
        let placeholders: usize = self
            .runtime_command
            .iter()
            .map(|a| a.matches(FILE_PLACEHOLDER).count())
            .sum();
        if placeholders != 1 {
            return invalid("runtime command must contain exactly one {file} placeholder");
        }
        if self.timeout.is_zero() {
            return invalid("timeout must be positive");
        }
        if self.capture_limit <= TRUNCATION_MARKER.len() {
            return invalid("capture limit is too small");
        }
        Ok(())
    }

    fn argv(&self, entry_file: &str) -> Vec<String> {
        self.runtime_command
            .iter()
            .map(|a| a.replace(FILE_PLACEHOLDER, entry_file))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    /// Absent when the process was killed by a signal.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    /// Wall-clock seconds.
    pub duration: f64,
    pub timed_out: bool,
}

impl ExecutionOutcome {
    pub fn passed(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }
}

/// A temporary directory holding a materialized workspace. Removed on drop.
#[derive(Debug)]
pub struct MaterializedDir {
    dir: TempDir,
}

impl MaterializedDir {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

pub fn materialize(workspace: &VirtualWorkspace) -> Result<MaterializedDir, SandboxError> {
    materialize_with(workspace, &[])
}

/// Like [`materialize`] but also writes `extra` files (e.g. a harness),
/// which take precedence over workspace files with the same path.
pub fn materialize_with(
    workspace: &VirtualWorkspace,
    extra: &[(&str, &str)],
) -> Result<MaterializedDir, SandboxError> {
    let dir = tempfile::Builder::new().prefix(".tmp").tempdir()?;
    let files = workspace
        .files()
        .iter()
        .map(|(p, c)| (p.as_str(), c.as_str()))
        .chain(extra.iter().copied());
    for (path, content) in files {
        validate_path(path)?;
        let target = dir.path().join(path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&target, content)?;
    }
    Ok(MaterializedDir { dir })
}

pub fn execute(
    dir: &MaterializedDir,
    entry_file: &str,
    config: &SandboxConfig,
) -> Result<ExecutionOutcome, SandboxError> {
    execute_cancellable(dir, entry_file, config, &CancelToken::new())
}

pub fn execute_cancellable(
    dir: &MaterializedDir,
    entry_file: &str,
    config: &SandboxConfig,
    cancel: &CancelToken,
) -> Result<ExecutionOutcome, SandboxError> {
    config.validate()?;
    validate_path(entry_file)?;
    if !dir.path().join(entry_file).is_file() {
        return Err(SandboxError::MissingEntry(entry_file.to_string()));
    }
    let argv = config.argv(entry_file);
    let mut command = Command::new(&argv[0]);
    command
        .args(&argv[1..])
        .current_dir(dir.path())
        .env_clear()
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .stdin(if config.stdin_script.is_some() {
            Stdio::piped()
        } else {
            Stdio::null()
        })
        .process_group(0);
    for key in ENV_ALLOWLIST {
        if let Some(value) = std::env::var_os(key) {
            command.env(key, value);
        }
    }

    let started = Instant::now();
    let mut child = command.spawn().map_err(|source| SandboxError::Spawn {
        program: argv[0].clone(),
        source,
    })?;
    let pid = child.id() as libc::pid_t;

    if let (Some(lines), Some(mut stdin)) = (config.stdin_script.clone(), child.stdin.take()) {
        thread::spawn(move || {
            for line in lines {
                if writeln!(stdin, "{line}").is_err() {
                    break;
                }
            }
        });
    }
    let limit = config.capture_limit;
    let stdout_rx = spawn_reader(child.stdout.take(), limit);
    let stderr_rx = spawn_reader(child.stderr.take(), limit);

    let (status, timed_out) = match wait_with_deadline(&mut child, pid, config.timeout, cancel) {
        Ok(r) => r,
        Err(e) => {
            kill_group(pid);
            let _ = child.wait();
            return Err(e);
        }
    };
    let duration = started.elapsed().as_secs_f64();
    // Stragglers left behind by the program would otherwise hold the pipes open.
    kill_group(pid);

    let roots = scrub_roots(dir.path());
    let stdout = finish_stream(stdout_rx, &roots, limit);
    let stderr = finish_stream(stderr_rx, &roots, limit);
    Ok(ExecutionOutcome {
        exit_code: if timed_out { None } else { status.code() },
        stdout,
        stderr,
        duration,
        timed_out,
    })
}

fn wait_with_deadline(
    child: &mut Child,
    pid: libc::pid_t,
    timeout: Duration,
    cancel: &CancelToken,
) -> Result<(std::process::ExitStatus, bool), SandboxError> {
    let started = Instant::now();
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status, false));
        }
        if cancel.is_cancelled() {
            return Err(SandboxError::Interrupted);
        }
        if started.elapsed() >= timeout {
            kill_group(pid);
            let status = child.wait()?;
            return Ok((status, true));
        }
        thread::sleep(POLL_INTERVAL);
    }
}

fn kill_group(pid: libc::pid_t) {
    // SAFETY: kill(2) with a negative pid signals the process group we
    // created for the child; it has no memory-safety preconditions.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

fn spawn_reader<R: Read + Send + 'static>(
    source: Option<R>,
    limit: usize,
) -> mpsc::Receiver<(Vec<u8>, bool)> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut overflow = false;
        if let Some(mut source) = source {
            // Keep some slack past the limit so path scrubbing happens before
            // truncation.
            let keep = limit.saturating_add(4096);
            let mut buf = [0u8; 8192];
            loop {
                match source.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let room = keep.saturating_sub(kept.len());
                        kept.extend_from_slice(&buf[..n.min(room)]);
                        if n > room {
                            overflow = true;
                        }
                    }
                }
            }
        }
        let _ = tx.send((kept, overflow));
    });
    rx
}

fn finish_stream(rx: mpsc::Receiver<(Vec<u8>, bool)>, roots: &[String], limit: usize) -> String {
    let (bytes, overflow) = rx
        .recv_timeout(READER_GRACE)
        .unwrap_or_else(|_| (Vec::new(), false));
    let mut text = String::from_utf8_lossy(&bytes).into_owned();
    for root in roots {
        text = text
            .replace(&format!("{root}/"), "")
            .replace(root.as_str(), ".");
    }
    truncate_capture(text, overflow, limit)
}

fn scrub_roots(dir: &Path) -> Vec<String> {
    let mut roots: Vec<PathBuf> = vec![dir.to_path_buf()];
    if let Ok(canonical) = dir.canonicalize() {
        if canonical != dir {
            roots.push(canonical);
        }
    }
    // Longest first so a canonical path that extends the plain one is
    // handled before its prefix.
    roots.sort_by_key(|p| std::cmp::Reverse(p.as_os_str().len()));
    roots
        .into_iter()
        .map(|p| p.to_string_lossy().into_owned())
        .collect()
}

/// Cuts `text` so the result, marker included, fits in `limit` bytes.
pub fn truncate_capture(text: String, overflow: bool, limit: usize) -> String {
    if !overflow && text.len() <= limit {
        return text;
    }
    let mut end = limit
        .saturating_sub(TRUNCATION_MARKER.len())
        .min(text.len());
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    let mut out = text[..end].to_string();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Runs programs against a workspace snapshot.
pub trait ProgramRunner: Send + Sync {
    /// Materializes `workspace` and executes `entry_file` inside it.
    fn run(
        &self,
        workspace: &VirtualWorkspace,
        entry_file: &str,
    ) -> Result<ExecutionOutcome, SandboxError>;
}

/// A script written next to the workspace files for every run and used as
/// the entry point instead of the changed file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Harness {
    pub path: String,
    pub content: String,
}

impl Harness {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Result<Self, SandboxError> {
        let path = path.into();
        validate_path(&path)?;
        Ok(Self {
            path,
            content: content.into(),
        })
    }

    pub fn load(file: &Path) -> Result<Self, SandboxError> {
        let name = file
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| SandboxError::InvalidConfig(format!("bad harness path {file:?}")))?;
        Self::new(name, std::fs::read_to_string(file)?)
    }
}

/// The production [`ProgramRunner`].
#[derive(Debug, Clone)]
pub struct Sandbox {
    pub config: SandboxConfig,
    pub harness: Option<Harness>,
    pub cancel: CancelToken,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Result<Self, SandboxError> {
        config.validate()?;
        Ok(Self {
            config,
            harness: None,
            cancel: CancelToken::new(),
        })
    }

    pub fn with_harness(mut self, harness: Option<Harness>) -> Self {
        self.harness = harness;
        self
    }

    pub fn with_cancel(mut self, cancel: CancelToken) -> Self {
        self.cancel = cancel;
        self
    }

    /// The file to execute when verifying a change to `changed_file`.
    pub fn entry_for<'a>(&'a self, changed_file: &'a str) -> &'a str {
        self.harness
            .as_ref()
            .map_or(changed_file, |h| h.path.as_str())
    }
}

impl ProgramRunner for Sandbox {
    fn run(
        &self,
        workspace: &VirtualWorkspace,
        entry_file: &str,
    ) -> Result<ExecutionOutcome, SandboxError> {
        let extra: Vec<(&str, &str)> = self
            .harness
            .iter()
            .map(|h| (h.path.as_str(), h.content.as_str()))
            .collect();
        let dir = materialize_with(workspace, &extra)?;
        execute_cancellable(&dir, entry_file, &self.config, &self.cancel)
    }
}
