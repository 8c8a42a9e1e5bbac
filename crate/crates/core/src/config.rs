//! Run configuration.
//!
//! The config file is TOML with flat keys. Values are layered: defaults,
//! then the file, then command-line flags. Relative paths in a file are
//! resolved against the file's directory.
//!
//! | key | type |
//! |-----|------|
//! | `backend` | `"live"`, `"record"` or `"replay"` |
//! | `cassette` | path |
//! | `strict_replay` | bool |
//! | `base_url` | string |
//! | `model`, `model_planner`, `model_coder`, `model_debugger`, `model_reviewer` | string |
//! | `temperature` | float in [0, 1] |
//! | `max_output_tokens` | integer |
//! | `max_fix_attempts` | integer |
//! | `sandbox_timeout` | seconds (float) |
//! | `runtime_cmd` | array of strings, or one shell-quoted string |
//! | `capture_limit` | bytes |
//! | `stdin_script` | array of strings |
//! | `main_file` | relative path |
//! | `harness_file` | path |
//! | `integration_entry` | relative path |
//! | `out` | path |
//! | `template_planner`, `template_coder`, `template_debugger`, `template_reviewer` | path |
//! | `context_budget`, `review_budget` | bytes |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::coder::DEFAULT_CONTEXT_BUDGET;
use crate::debugger::DEFAULT_MAX_FIX_ATTEMPTS;
use crate::gateway::{AgentRole, CompletionParams, DEFAULT_MODEL};
use crate::reviewer::DEFAULT_REVIEW_BUDGET;
use crate::sandbox::SandboxConfig;
use crate::workspace::validate_path;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MAIN_FILE: &str = "main.py";
pub const DEFAULT_OUT_DIR: &str = "agentmesh-out";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendMode {
    Live,
    Record,
    Replay,
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendMode::Live),
            "record" => Ok(BackendMode::Record),
            "replay" => Ok(BackendMode::Replay),
            other => Err(format!("expected live, record or replay, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend_mode: BackendMode,
    pub cassette_path: Option<PathBuf>,
    pub strict_replay: bool,
    pub base_url: String,
    pub models: BTreeMap<AgentRole, String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_fix_attempts: u32,
    pub sandbox: SandboxConfig,
    pub main_file: String,
    pub harness_file: Option<PathBuf>,
    pub integration_entry: Option<String>,
    pub out_dir: PathBuf,
    pub templates: BTreeMap<AgentRole, PathBuf>,
    pub context_budget: usize,
    pub review_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend_mode: BackendMode::Live,
            cassette_path: None,
            strict_replay: true,
            base_url: DEFAULT_BASE_URL.to_string(),
            models: AgentRole::ALL
                .iter()
                .map(|r| (*r, DEFAULT_MODEL.to_string()))
                .collect(),
            temperature: 0.0,
            max_output_tokens: 2048,
            max_fix_attempts: DEFAULT_MAX_FIX_ATTEMPTS,
            sandbox: SandboxConfig::default(),
            main_file: DEFAULT_MAIN_FILE.to_string(),
            harness_file: None,
            integration_entry: None,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            templates: BTreeMap::new(),
            context_budget: DEFAULT_CONTEXT_BUDGET,
            review_budget: DEFAULT_REVIEW_BUDGET,
        }
    }
}

fn role_suffix(key: &str, prefix: &str) -> Option<AgentRole> {
    let suffix = key.strip_prefix(prefix)?;
    AgentRole::ALL.into_iter().find(|r| r.as_str() == suffix)
}

impl RunConfig {
    pub fn params_for(&self, role: AgentRole) -> CompletionParams {
        CompletionParams {
            model_name: self
                .models
                .get(&role)
                .cloned()
                .unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.merge_file(path)?;
        Ok(config)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        self.merge_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Applies every key of a TOML document. Relative paths resolve against
    /// `base_dir`.
    pub fn merge_toml(&mut self, text: &str, base_dir: &Path) -> Result<(), ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse {
                path: "<config>".into(),
                message: e.to_string(),
            })?;
        for (key, value) in table {
            self.apply_toml(&key, value, base_dir)?;
        }
        Ok(())
    }

    fn apply_toml(
        &mut self,
        key: &str,
        value: toml::Value,
        base_dir: &Path,
    ) -> Result<(), ConfigError> {
        let bad = |message: &str| ConfigError::InvalidValue {
            key: key.to_string(),
            message: message.to_string(),
        };
        match key {
            "runtime_cmd" | "stdin_script" => {
                if let toml::Value::Array(items) = value {
                    let items = items
                        .into_iter()
                        .map(|v| match v {
                            toml::Value::String(s) => Ok(s),
                            _ => Err(bad("array items must be strings")),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    if key == "runtime_cmd" {
                        self.sandbox.runtime_command = items;
                    } else {
                        self.sandbox.stdin_script = Some(items);
                    }
                    return Ok(());
                }
                if key == "stdin_script" {
                    return Err(bad("expected an array of strings"));
                }
            }
            "cassette" | "harness_file" | "out" => {
                let toml::Value::String(s) = value else {
                    return Err(bad("expected a path string"));
                };
                return self.set(key, &base_dir.join(s).to_string_lossy());
            }
            _ if key.starts_with("template_") => {
                let toml::Value::String(s) = value else {
                    return Err(bad("expected a path string"));
                };
                return self.set(key, &base_dir.join(s).to_string_lossy());
            }
            _ => {}
        }
        let text = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            _ => return Err(bad("unsupported value type")),
        };
        self.set(key, &text)
    }

    /// Sets one flat key from its string form. Used by the CLI, the config
    /// file loader and the C API.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .trim()
                .parse()
                .map_err(|e: T::Err| ConfigError::InvalidValue {
                    key: key.to_string(),
                    message: e.to_string(),
                })
        }
        let bad = |message: String| ConfigError::InvalidValue {
            key: key.to_string(),
            message,
        };
        match key {
            "backend" => self.backend_mode = parse(key, value)?,
            "cassette" => self.cassette_path = Some(PathBuf::from(value)),
            "strict_replay" => self.strict_replay = parse(key, value)?,
            "base_url" => self.base_url = value.to_string(),
            "model" => {
                for role in AgentRole::ALL {
                    self.models.insert(role, value.to_string());
                }
            }
            "temperature" => self.temperature = parse(key, value)?,
            "max_output_tokens" => self.max_output_tokens = parse(key, value)?,
            "max_fix_attempts" => self.max_fix_attempts = parse(key, value)?,
            "sandbox_timeout" => {
                let secs: f64 = parse(key, value)?;
                self.sandbox.timeout =
                    Duration::try_from_secs_f64(secs).map_err(|e| bad(e.to_string()))?;
            }
            "runtime_cmd" => {
                self.sandbox.runtime_command = shlex::split(value)
                    .ok_or_else(|| bad("unbalanced quotes in command".to_string()))?;
            }
            "capture_limit" => self.sandbox.capture_limit = parse(key, value)?,
            "stdin_script" => {
                self.sandbox.stdin_script = Some(value.lines().map(str::to_string).collect());
            }
            "main_file" => self.main_file = value.to_string(),
            "harness_file" => self.harness_file = Some(PathBuf::from(value)),
            "integration_entry" => self.integration_entry = Some(value.to_string()),
            "out" => self.out_dir = PathBuf::from(value),
            "context_budget" => self.context_budget = parse(key, value)?,
            "review_budget" => self.review_budget = parse(key, value)?,
            _ => {
                if let Some(role) = role_suffix(key, "model_") {
                    self.models.insert(role, value.to_string());
                } else if let Some(role) = role_suffix(key, "template_") {
                    self.templates.insert(role, PathBuf::from(value));
                } else {
                    return Err(ConfigError::UnknownKey(key.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if matches!(self.backend_mode, BackendMode::Record | BackendMode::Replay)
            && self.cassette_path.is_none()
        {
            return invalid("record and replay backends need a cassette path".into());
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return invalid("temperature must lie in [0, 1]".into());
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive".into());
        }
        if let Err(e) = self.sandbox.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = validate_path(&self.main_file) {
            return invalid(format!("main_file: {e}"));
        }
        if let Some(entry) = &self.integration_entry {
            if let Err(e) = validate_path(entry) {
                return invalid(format!("integration_entry: {e}"));
            }
        }
        if self.models.values().any(String::is_empty) {
            return invalid("model names must not be empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.max_fix_attempts, 3);
        assert_eq!(c.context_budget, 24_000);
        assert_eq!(c.sandbox.timeout, Duration::from_secs(10));
        assert_eq!(c.sandbox.capture_limit, 64 * 1024);
        assert_eq!(c.params_for(AgentRole::Coder), CompletionParams::default());
        assert!(c.strict_replay);
        c.validate().unwrap();
    }

    #[test]
    fn toml_file_layering() {
        let mut c = RunConfig::default();
        c.merge_toml(
            r#"
backend = "replay"
cassette = "fixtures/c.jsonl"
strict_replay = false
runtime_cmd = ["python3", "-u", "{file}"]
stdin_script = ["add a", "quit"]
sandbox_timeout = 2.5
max_fix_attempts = 5
model = "m1"
model_reviewer = "m2"
template_planner = "tpl/planner.txt"
"#,
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(c.backend_mode, BackendMode::Replay);
        assert_eq!(
            c.cassette_path,
            Some(PathBuf::from("/cfg/fixtures/c.jsonl"))
        );
        assert!(!c.strict_replay);
        assert_eq!(c.sandbox.runtime_command, ["python3", "-u", "{file}"]);
        assert_eq!(
            c.sandbox.stdin_script,
            Some(vec!["add a".into(), "quit".into()])
        );
        assert_eq!(c.sandbox.timeout, Duration::from_millis(2500));
        assert_eq!(c.max_fix_attempts, 5);
        assert_eq!(c.models[&AgentRole::Coder], "m1");
        assert_eq!(c.models[&AgentRole::Reviewer], "m2");
        assert_eq!(
            c.templates[&AgentRole::Planner],
            PathBuf::from("/cfg/tpl/planner.txt")
        );
        c.validate().unwrap();

        // Flags override file values.
        c.set("max_fix_attempts", "1").unwrap();
        c.set("runtime_cmd", "node 'my script.js' {file}").unwrap();
        assert_eq!(c.max_fix_attempts, 1);
        assert_eq!(
            c.sandbox.runtime_command,
            ["node", "my script.js", "{file}"]
        );
    }

    #[test]
    fn errors() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.set("nope", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            c.set("max_fix_attempts", "-1"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(c.set("backend", "cloud").is_err());
        assert!(c.merge_toml("backend = [", Path::new(".")).is_err());

        c.set("backend", "replay").unwrap();
        assert!(c.validate().is_err());
        c.set("cassette", "x.jsonl").unwrap();
        c.validate().unwrap();
        c.set("main_file", "../main.py").unwrap();
        assert!(c.validate().is_err());
    }
}
