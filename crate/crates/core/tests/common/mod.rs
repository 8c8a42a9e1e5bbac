//! Helpers shared by the integration tests: a scripted HTTP server, a
//! role-keyed fake backend, a transcript auditor and output-tree diffing.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use agentmesh::gateway::{AgentRole, CompletionRequest, GatewayError, LlmBackend};
use agentmesh::transcript::{Agent, EventKind, TranscriptEvent};
use serde_json::Value;

pub fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_agentmesh"))
}

// ---------------------------------------------------------------------------
// Mock chat-completions server

#[derive(Debug, Clone)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl MockRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Content of the message with the given role, if any.
    pub fn message(&self, role: &str) -> Option<&str> {
        self.body["messages"]
            .as_array()?
            .iter()
            .find(|m| m["role"] == role)?["content"]
            .as_str()
    }
}

pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn ok(content: &str) -> Self {
        Self {
            status: 200,
            body: chat_body(content),
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Self {
            status,
            body: body.to_string(),
        }
    }
}

pub fn chat_body(content: &str) -> String {
    serde_json::json!({
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }],
    })
    .to_string()
}

type Responder = Box<dyn Fn(usize, &MockRequest) -> MockResponse + Send + Sync>;

/// One-request-per-connection HTTP server answering from a closure that
/// receives the request number (0-based) and the parsed request.
pub struct MockServer {
    pub url: String,
    requests: Arc<Mutex<Vec<MockRequest>>>,
    connections: Arc<Mutex<usize>>,
    stop: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(
        responder: impl Fn(usize, &MockRequest) -> MockResponse + Send + Sync + 'static,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let connections = Arc::new(Mutex::new(0usize));
        let stop = Arc::new(AtomicBool::new(false));
        let responder: Responder = Box::new(responder);
        let handle = {
            let requests = requests.clone();
            let connections = connections.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    *connections.lock().unwrap() += 1;
                    serve(stream, &requests, &responder);
                }
            })
        };
        Self {
            url: format!("http://{addr}/v1"),
            requests,
            connections,
            stop,
            addr,
            handle: Some(handle),
        }
    }

    /// Answers the given responses in order, then 500s.
    pub fn scripted(responses: Vec<MockResponse>) -> Self {
        let queue = Mutex::new(VecDeque::from(responses));
        Self::start(move |_, _| {
            queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| MockResponse::status(500, "script exhausted"))
        })
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn connection_count(&self) -> usize {
        *self.connections.lock().unwrap()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, requests: &Mutex<Vec<MockRequest>>, responder: &Responder) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let length = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0usize);
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let request = MockRequest {
        method,
        path,
        headers,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    let index = {
        let mut all = requests.lock().unwrap();
        all.push(request.clone());
        all.len() - 1
    };
    let response = responder(index, &request);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    );
    let _ = stream.flush();
}

// ---------------------------------------------------------------------------
// Role-keyed fake backend

/// Answers each role from its own queue. Running out of responses for a role
/// is reported as cassette exhaustion, so over-calling is visible.
pub struct RoleScript {
    queues: Mutex<BTreeMap<AgentRole, VecDeque<String>>>,
    calls: Mutex<Vec<AgentRole>>,
}

impl RoleScript {
    pub fn new(entries: impl IntoIterator<Item = (AgentRole, String)>) -> Self {
        let mut queues: BTreeMap<AgentRole, VecDeque<String>> = BTreeMap::new();
        for (role, text) in entries {
            queues.entry(role).or_default().push_back(text);
        }
        Self {
            queues: Mutex::new(queues),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<AgentRole> {
        self.calls.lock().unwrap().clone()
    }
}

impl LlmBackend for RoleScript {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut calls = self.calls.lock().unwrap();
        calls.push(request.agent_role);
        self.queues
            .lock()
            .unwrap()
            .get_mut(&request.agent_role)
            .and_then(VecDeque::pop_front)
            .ok_or(GatewayError::CassetteExhausted {
                seq: calls.len() as u64 - 1,
                role: request.agent_role,
            })
    }
}

// ---------------------------------------------------------------------------
// Transcript auditing

pub fn prompt_count(events: &[TranscriptEvent], agent: Agent, task: Option<usize>) -> usize {
    events
        .iter()
        .filter(|e| e.agent == agent && e.event_kind == EventKind::PromptSent)
        .filter(|e| task.is_none() || e.task_index == task)
        .count()
}

pub fn execution_count(events: &[TranscriptEvent], task: Option<usize>) -> usize {
    events
        .iter()
        .filter(|e| e.event_kind == EventKind::ExecutionRun)
        .filter(|e| task.is_none() || e.task_index == task)
        .count()
}

/// Checks the call accounting and ordering rules of a completed run:
/// one planner call, one coder call per planned task, at most
/// `max_fix_attempts` debugger calls per task, at most one reviewer call
/// (exactly one when `expect_review`), and strictly task-ordered events.
pub fn audit(
    events: &[TranscriptEvent],
    max_fix_attempts: u32,
    expect_review: bool,
) -> Result<(), String> {
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(format!("event {i} has seq {}", e.seq));
        }
    }
    let planner = prompt_count(events, Agent::Planner, None);
    if planner != 1 {
        return Err(format!("{planner} planner calls"));
    }
    let task_count = events
        .iter()
        .find(|e| e.agent == Agent::Orchestrator && e.payload.get("task_count").is_some())
        .and_then(|e| e.payload["task_count"].as_u64())
        .ok_or("no plan state update")? as usize;
    let coder = prompt_count(events, Agent::Coder, None);
    if coder != task_count {
        return Err(format!("{coder} coder calls for {task_count} tasks"));
    }
    for task in 1..=task_count {
        let coder = prompt_count(events, Agent::Coder, Some(task));
        if coder != 1 {
            return Err(format!("task {task}: {coder} coder calls"));
        }
        let debugger = prompt_count(events, Agent::Debugger, Some(task));
        if debugger > max_fix_attempts as usize {
            return Err(format!(
                "task {task}: {debugger} debugger calls > {max_fix_attempts}"
            ));
        }
        let runs = execution_count(events, Some(task));
        if runs > max_fix_attempts as usize + 1 {
            return Err(format!("task {task}: {runs} executions"));
        }
    }
    let reviewer = prompt_count(events, Agent::Reviewer, None);
    if reviewer != usize::from(expect_review) {
        return Err(format!("{reviewer} reviewer calls"));
    }

    // Ordering: planner, then tasks 1..n as contiguous non-decreasing
    // blocks, then the reviewer.
    let mut phase = 0usize; // 0 = planning, k = task k, n+1 = review
    let mut seen_debugger_final = BTreeMap::new();
    for e in events {
        let event_phase = match (e.agent, e.task_index) {
            (Agent::Planner, _) => 0,
            (Agent::Reviewer, _) => task_count + 1,
            (_, Some(t)) => t,
            // Orchestrator bookkeeping and the integration run carry no index.
            (_, None) => phase,
        };
        if event_phase < phase {
            return Err(format!(
                "event {} ({:?} {:?}) for phase {event_phase} after phase {phase}",
                e.seq, e.agent, e.event_kind
            ));
        }
        if event_phase > phase && phase >= 1 && phase <= task_count {
            // Leaving task `phase`: its debugger must have reported.
            if !seen_debugger_final.contains_key(&phase) && task_produced_code(events, phase) {
                return Err(format!(
                    "task {phase} closed without a final debugger update"
                ));
            }
        }
        if e.agent == Agent::Debugger && e.event_kind == EventKind::StateUpdate {
            if let Some(t) = e.task_index {
                seen_debugger_final.insert(t, e.seq);
            }
        }
        phase = event_phase;
    }
    Ok(())
}

fn task_produced_code(events: &[TranscriptEvent], task: usize) -> bool {
    events
        .iter()
        .any(|e| e.event_kind == EventKind::ExecutionRun && e.task_index == Some(task))
}

// ---------------------------------------------------------------------------
// Output trees

/// Every file under `dir` keyed by relative path. Transcript `ts` values are
/// blanked so trees from different runs can be compared.
pub fn normalized_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    collect(dir, dir, &mut out);
    out
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect(root, &path, out);
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .unwrap()
            .to_string_lossy()
            .into_owned();
        let mut bytes = std::fs::read(&path).unwrap();
        if rel.ends_with(".jsonl") && rel.contains("transcript") {
            bytes = strip_ts(&String::from_utf8(bytes).unwrap()).into_bytes();
        }
        out.insert(rel, bytes);
    }
}

pub fn strip_ts(jsonl: &str) -> String {
    jsonl
        .lines()
        .map(|line| {
            let mut v: Value = serde_json::from_str(line).unwrap();
            v["ts"] = Value::Null;
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn events_without_ts(events: &[TranscriptEvent]) -> Vec<TranscriptEvent> {
    events
        .iter()
        .cloned()
        .map(|mut e| {
            e.ts.clear();
            e
        })
        .collect()
}

pub fn read_transcript(out_dir: &Path) -> Vec<TranscriptEvent> {
    let file = std::fs::File::open(out_dir.join("transcript.jsonl")).unwrap();
    agentmesh::transcript::read_jsonl(BufReader::new(file)).unwrap()
}

pub fn read_report(out_dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap()
}
