//! The shared project state agents communicate through.
//!
//! Code lives in `files`, keyed by relative path. Non-code artifacts such as
//! the rendered plan live in `artifacts` so they are never materialized into
//! the sandbox.

use std::collections::BTreeMap;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkspaceError {
    #[error("invalid workspace path {path:?}: {reason}")]
    InvalidPath { path: String, reason: &'static str },
}

/// Checks that `path` is a non-empty relative path without `..` segments.
pub fn validate_path(path: &str) -> Result<(), WorkspaceError> {
    let invalid = |reason| {
        Err(WorkspaceError::InvalidPath {
            path: path.to_string(),
            reason,
        })
    };
    if path.trim().is_empty() {
        return invalid("empty path");
    }
    if path.starts_with('/') || path.starts_with('\\') {
        return invalid("absolute path");
    }
    if path.contains('\0') {
        return invalid("NUL byte in path");
    }
    // Windows drive prefixes like `C:` are rejected as absolute too.
    if path.len() >= 2 && path.as_bytes()[1] == b':' && path.as_bytes()[0].is_ascii_alphabetic() {
        return invalid("absolute path");
    }
    if path.split(['/', '\\']).any(|seg| seg == "..") {
        return invalid("parent-directory segment");
    }
    for component in Path::new(path).components() {
        match component {
            Component::Normal(_) | Component::CurDir => {}
            _ => return invalid("non-relative component"),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualWorkspace {
    files: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

impl VirtualWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a workspace from `(path, content)` pairs, validating every path.
    pub fn from_files<I, P, C>(files: I) -> Result<Self, WorkspaceError>
    where
        I: IntoIterator<Item = (P, C)>,
        P: Into<String>,
        C: Into<String>,
    {
        let mut ws = Self::new();
        for (path, content) in files {
            ws.insert(path, content)?;
        }
        Ok(ws)
    }

    pub fn insert(
        &mut self,
        path: impl Into<String>,
        content: impl Into<String>,
    ) -> Result<(), WorkspaceError> {
        let path = path.into();
        validate_path(&path)?;
        self.files.insert(path, content.into());
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn set_artifact(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.artifacts.insert(name.into(), text.into());
    }

    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts.get(name).map(String::as_str)
    }

    pub fn artifacts(&self) -> &BTreeMap<String, String> {
        &self.artifacts
    }

    /// Merges `update` into the workspace with last-writer-wins semantics at
    /// file granularity. Nothing is applied if any path is invalid.
    pub fn apply_update<'a, I>(&mut self, update: I) -> Result<(), WorkspaceError>
    where
        I: IntoIterator<Item = (&'a String, &'a String)>,
        I::IntoIter: Clone,
    {
        let update = update.into_iter();
        for (path, _) in update.clone() {
            validate_path(path)?;
        }
        for (path, content) in update {
            self.files.insert(path.clone(), content.clone());
        }
        Ok(())
    }

    /// Returns a copy of `self` with `update` merged in.
    pub fn updated(&self, update: &BTreeMap<String, String>) -> Result<Self, WorkspaceError> {
        let mut next = self.clone();
        next.apply_update(update)?;
        Ok(next)
    }

    /// Deterministic text form of all files, in lexicographic path order.
    pub fn render_codebase(&self) -> String {
        let mut out = String::new();
        for (path, content) in &self.files {
            out.push_str("== FILE: ");
            out.push_str(path);
            out.push_str(" ==\n");
            out.push_str(content);
            out.push_str("\n\n");
        }
        out
    }
}

/// Free-function form of [`VirtualWorkspace::apply_update`] that consumes and
/// returns the workspace.
pub fn apply_update(
    mut workspace: VirtualWorkspace,
    update: &BTreeMap<String, String>,
) -> Result<VirtualWorkspace, WorkspaceError> {
    workspace.apply_update(update)?;
    Ok(workspace)
}
