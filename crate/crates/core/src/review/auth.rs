//! Static bearer tokens, one or more per reviewer id.
//!
//! The table is read from an environment variable holding
//! `reviewer:token` pairs separated by commas or newlines.

use std::collections::HashMap;

use super::ReviewError;

/// An authenticated reviewer. Only [`TokenTable::authenticate`] makes one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Reviewer(String);

impl Reviewer {
    pub fn id(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    by_token: HashMap<String, String>,
}

impl TokenTable {
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut by_token = HashMap::new();
        for pair in spec
            .split([',', '\n'])
            .map(str::trim)
            .filter(|p| !p.is_empty())
        {
            let (id, token) = pair
                .split_once(':')
                .ok_or_else(|| format!("token entry `{}` is not reviewer:token", redact(pair)))?;
            let (id, token) = (id.trim(), token.trim());
            if id.is_empty() || token.is_empty() {
                return Err("token entries need a reviewer id and a token".into());
            }
            if by_token.insert(token.to_string(), id.to_string()).is_some() {
                return Err(format!("token for `{id}` is shared with another entry"));
            }
        }
        if by_token.is_empty() {
            return Err("no reviewer tokens configured".into());
        }
        Ok(TokenTable { by_token })
    }

    pub fn from_env(var: &str) -> Result<Self, String> {
        let value =
            std::env::var(var).map_err(|_| format!("environment variable `{var}` is not set"))?;
        Self::parse(&value)
    }

    pub fn reviewers(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.by_token.values().map(String::as_str).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Accepts a raw bearer token or a full `Bearer <token>` header value.
    pub fn authenticate(&self, bearer: Option<&str>) -> Result<Reviewer, ReviewError> {
        let raw = bearer.ok_or(ReviewError::Unauthorized)?.trim();
        let token = raw.strip_prefix("Bearer ").map(str::trim).unwrap_or(raw);
        // Compare against every entry so timing does not reveal prefixes.
        let mut found = None;
        for (candidate, id) in &self.by_token {
            if constant_time_eq(candidate.as_bytes(), token.as_bytes()) {
                found = Some(id);
            }
        }
        found
            .map(|id| Reviewer(id.clone()))
            .ok_or(ReviewError::Unauthorized)
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn redact(pair: &str) -> String {
    pair.chars().take(3).chain("…".chars()).collect()
}
