//! Cassette files: one JSON record per line with fields `seq`,
//! `agent_role`, `prompt_sha256` and `response`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AgentRole, CompletionRequest, GatewayError, LlmBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub seq: u64,
    pub agent_role: AgentRole,
    pub prompt_sha256: String,
    pub response: String,
}

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

fn is_hex_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn parse_cassette(text: &str, origin: &str) -> Result<Vec<CassetteRecord>, CassetteError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CassetteError::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let record: CassetteRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if record.seq != records.len() as u64 {
            return Err(err(format!(
                "expected seq {}, found {}",
                records.len(),
                record.seq
            )));
        }
        if !is_hex_digest(&record.prompt_sha256) {
            return Err(err("prompt_sha256 must be 64 lowercase hex chars".into()));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteRecord>, CassetteError> {
    let io_err = |source| CassetteError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    parse_cassette(&text, &path.display().to_string())
}

pub fn write_cassette(path: &Path, records: &[CassetteRecord]) -> Result<(), CassetteError> {
    let io_err = |source| CassetteError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in records {
        write_record(&mut out, record).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn write_record<W: Write>(out: &mut W, record: &CassetteRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

/// How strictly a replay checks each request against its record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMode {
    /// Role and prompt digest must both match.
    Strict,
    /// Only the role must match; for hand-authored fixtures.
    Lenient,
}

/// Serves responses from a cassette in order. Never touches the network.
#[derive(Debug)]
pub struct ReplayBackend {
    records: Vec<CassetteRecord>,
    mode: ReplayMode,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(records: Vec<CassetteRecord>, mode: ReplayMode) -> Self {
        Self {
            records,
            mode,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_path(path: &Path, mode: ReplayMode) -> Result<Self, CassetteError> {
        Ok(Self::new(read_cassette(path)?, mode))
    }

    pub fn remaining(&self) -> usize {
        let cursor = *self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        self.records.len() - cursor
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let seq = *cursor as u64;
        let record = self
            .records
            .get(*cursor)
            .ok_or(GatewayError::CassetteExhausted {
                seq,
                role: request.agent_role,
            })?;
        if record.agent_role != request.agent_role {
            return Err(GatewayError::CassetteMismatch {
                seq,
                detail: format!(
                    "recorded role {} but request is from {}",
                    record.agent_role, request.agent_role
                ),
            });
        }
        if self.mode == ReplayMode::Strict {
            let digest = request.digest();
            if record.prompt_sha256 != digest {
                return Err(GatewayError::CassetteMismatch {
                    seq,
                    detail: format!(
                        "prompt digest {digest} differs from recorded {}",
                        record.prompt_sha256
                    ),
                });
            }
        }
        *cursor += 1;
        Ok(record.response.clone())
    }
}

/// Forwards to an inner backend and appends every successful exchange to a
/// cassette file. Calls are serialized so records land in call order.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    state: Mutex<RecorderState>,
}

struct RecorderState {
    next_seq: u64,
    out: BufWriter<File>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    /// Truncates (or creates) the cassette at `path`.
    pub fn create(inner: B, path: impl Into<PathBuf>) -> Result<Self, CassetteError> {
        let path = path.into();
        let file = File::create(&path).map_err(|source| CassetteError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            inner,
            path,
            state: Mutex::new(RecorderState {
                next_seq: 0,
                out: BufWriter::new(file),
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let response = self.inner.complete(request)?;
        let record = CassetteRecord {
            seq: state.next_seq,
            agent_role: request.agent_role,
            prompt_sha256: request.digest(),
            response: response.clone(),
        };
        let io_err = |source| CassetteError::Io {
            path: self.path.display().to_string(),
            source,
        };
        write_record(&mut state.out, &record).map_err(io_err)?;
        state.out.flush().map_err(io_err)?;
        state.next_seq += 1;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{prompt_digest, ChatMessage, CompletionParams};

    fn request(role: AgentRole, text: &str) -> CompletionRequest {
        CompletionRequest::new(
            role,
            vec![ChatMessage::system("sys"), ChatMessage::user(text)],
            CompletionParams::default(),
        )
        .unwrap()
    }

    fn record(seq: u64, role: AgentRole, digest: String, response: &str) -> CassetteRecord {
        CassetteRecord {
            seq,
            agent_role: role,
            prompt_sha256: digest,
            response: response.into(),
        }
    }

    #[test]
    fn replay_matching_request() {
        let req = request(AgentRole::Planner, "goal");
        let backend = ReplayBackend::new(
            vec![record(0, AgentRole::Planner, req.digest(), "1. A")],
            ReplayMode::Strict,
        );
        assert_eq!(backend.complete(&req).unwrap(), "1. A");
        assert!(matches!(
            backend.complete(&req),
            Err(GatewayError::CassetteExhausted { seq: 1, .. })
        ));
    }

    #[test]
    fn strict_digest_mismatch() {
        let req = request(AgentRole::Planner, "goal");
        let other = request(AgentRole::Planner, "other goal");
        let backend = ReplayBackend::new(
            vec![record(0, AgentRole::Planner, req.digest(), "1. A")],
            ReplayMode::Strict,
        );
        let err = backend.complete(&other).unwrap_err();
        assert!(matches!(err, GatewayError::CassetteMismatch { seq: 0, .. }));
        assert!(err.is_replay_divergence());
        // A failed lookup does not consume the record.
        assert_eq!(backend.remaining(), 1);
    }

    #[test]
    fn lenient_checks_role_only() {
        let backend = ReplayBackend::new(
            vec![
                record(0, AgentRole::Planner, "0".repeat(64), "1. A"),
                record(1, AgentRole::Coder, "0".repeat(64), "code"),
            ],
            ReplayMode::Lenient,
        );
        assert_eq!(
            backend
                .complete(&request(AgentRole::Planner, "anything"))
                .unwrap(),
            "1. A"
        );
        assert!(matches!(
            backend.complete(&request(AgentRole::Reviewer, "x")),
            Err(GatewayError::CassetteMismatch { seq: 1, .. })
        ));
    }

    #[test]
    fn cassette_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let digest = prompt_digest(&[ChatMessage::system("s")]);
        let records = vec![
            record(0, AgentRole::Planner, digest.clone(), "1. A\n2. B"),
            record(1, AgentRole::Reviewer, digest, "ok\nVERDICT: APPROVED"),
        ];
        write_cassette(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["agent_role", "prompt_sha256", "response", "seq"]);
        assert!(text.lines().next().unwrap().contains(r"1. A\n2. B"));
        assert_eq!(read_cassette(&path).unwrap(), records);
    }

    #[test]
    fn parse_rejects_bad_records() {
        let good = format!(
            r#"{{"seq":0,"agent_role":"planner","prompt_sha256":"{}","response":"x"}}"#,
            "a".repeat(64)
        );
        assert_eq!(parse_cassette(&good, "t").unwrap().len(), 1);
        let gap = good.replace(r#""seq":0"#, r#""seq":1"#);
        assert!(parse_cassette(&gap, "t").is_err());
        let short = good.replace(&"a".repeat(64), "abc");
        assert!(parse_cassette(&short, "t").is_err());
        assert!(parse_cassette("{not json", "t").is_err());
    }

    struct Echo;
    impl LlmBackend for Echo {
        fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
            Ok(format!("echo {}", request.messages[1].content))
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let reqs = [
            request(AgentRole::Planner, "a"),
            request(AgentRole::Coder, "b"),
            request(AgentRole::Reviewer, "c"),
        ];
        let recorder = RecordingBackend::create(Echo, &path).unwrap();
        let live: Vec<String> = reqs.iter().map(|r| recorder.complete(r).unwrap()).collect();
        drop(recorder);

        let replay = ReplayBackend::from_path(&path, ReplayMode::Strict).unwrap();
        let replayed: Vec<String> = reqs.iter().map(|r| replay.complete(r).unwrap()).collect();
        assert_eq!(live, replayed);

        let again = ReplayBackend::from_path(&path, ReplayMode::Strict).unwrap();
        let twice: Vec<String> = reqs.iter().map(|r| again.complete(r).unwrap()).collect();
        assert_eq!(replayed, twice);
    }
}
