//! Static bearer tokens.
//!
//! The token file has one `token annotator_id role` entry per line, with
//! `role` one of `base` or `senior_expert`. Blank lines and `#` comments
//! are skipped.

use std::collections::HashMap;
use std::path::Path;

use axum::http::HeaderMap;
use misattrib_core::workflow::{Role, WorkflowState};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub annotator: String,
    pub role: Role,
}

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    sessions: HashMap<String, Session>,
}

pub fn parse_role(s: &str) -> Option<Role> {
    match s {
        "base" => Some(Role::Base),
        "senior_expert" | "expert" => Some(Role::SeniorExpert),
        _ => None,
    }
}

impl TokenTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: impl Into<String>, annotator: impl Into<String>, role: Role) {
        self.sessions.insert(token.into(), Session { annotator: annotator.into(), role });
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table = TokenTable::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [token, annotator, role] = fields[..] else {
                return Err(format!("line {}: expected `token annotator_id role`", n + 1));
            };
            let role = parse_role(role).ok_or_else(|| format!("line {}: unknown role {role:?}", n + 1))?;
            table.insert(token, annotator, role);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn authenticate(&self, headers: &HeaderMap) -> Result<Session, ApiError> {
        let value = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        let token = value.strip_prefix("Bearer ").ok_or_else(|| ApiError::unauthorized("expected a bearer token"))?;
        self.sessions.get(token.trim()).cloned().ok_or_else(|| ApiError::unauthorized("unknown token"))
    }
}

/// The token's role claim must match the annotator's registered profile.
pub fn verify_profile(workflow: &WorkflowState, session: &Session) -> Result<(), ApiError> {
    let profile = workflow.annotator(&session.annotator).map_err(ApiError::from)?;
    if profile.role != session.role {
        return Err(ApiError::forbidden(
            "RoleMismatch",
            format!("token claims {:?} but {} is registered as {:?}", session.role, session.annotator, profile.role),
        ));
    }
    Ok(())
}
