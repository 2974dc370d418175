use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenerationError;

const DEFAULT_GENERATE: &str = include_str!("../../templates/generate.txt");
const DEFAULT_REWRITE: &str = include_str!("../../templates/rewrite.txt");
const DEFAULT_JUDGE: &str = include_str!("../../templates/judge.txt");

/// Line separating the system message from the user body in a template file.
pub const SYSTEM_SEPARATOR: &str = "---";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Generate,
    Rewrite,
    Judge,
}

impl Purpose {
    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Purpose::Generate => &["{answer}"],
            Purpose::Rewrite => &["{answer}", "{feedback}", "{prior_rationale}"],
            Purpose::Judge => &["{answer}", "{prior_rationale}"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub system: String,
    pub body: String,
    pub purpose: Purpose,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PromptVars<'a> {
    pub answer: &'a str,
    pub feedback: &'a str,
    pub prior_rationale: &'a str,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        system: impl Into<String>,
        body: impl Into<String>,
        purpose: Purpose,
    ) -> Result<Self, GenerationError> {
        let t = PromptTemplate {
            name: name.into(),
            system: system.into(),
            body: body.into(),
            purpose,
        };
        let missing: Vec<_> = purpose
            .required_placeholders()
            .iter()
            .filter(|p| !t.body.contains(*p))
            .copied()
            .collect();
        if !missing.is_empty() {
            return Err(GenerationError::Template(format!(
                "template `{}` ({:?}) is missing {}",
                t.name,
                purpose,
                missing.join(", ")
            )));
        }
        Ok(t)
    }

    /// Parses template text; everything above a `---` line is the system
    /// message.
    pub fn parse(name: &str, text: &str, purpose: Purpose) -> Result<Self, GenerationError> {
        let mut system = String::new();
        let mut body = text;
        if let Some(idx) = text.lines().position(|l| l.trim_end() == SYSTEM_SEPARATOR) {
            let mut lines = text.split_inclusive('\n');
            let head: String = lines.by_ref().take(idx).collect();
            let _sep = lines.next();
            system = head.trim().to_string();
            let consumed: usize = text.split_inclusive('\n').take(idx + 1).map(str::len).sum();
            body = &text[consumed..];
        }
        Self::new(name, system, body.trim(), purpose)
    }

    pub fn load(path: &Path, purpose: Purpose) -> Result<Self, GenerationError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GenerationError::Template(format!("cannot read template {}: {e}", path.display()))
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".to_string());
        Self::parse(&name, &text, purpose)
    }

    pub fn default_generate() -> Self {
        Self::parse("generate", DEFAULT_GENERATE, Purpose::Generate).expect("bundled template")
    }

    pub fn default_rewrite() -> Self {
        Self::parse("rewrite", DEFAULT_REWRITE, Purpose::Rewrite).expect("bundled template")
    }

    pub fn default_judge() -> Self {
        Self::parse("judge", DEFAULT_JUDGE, Purpose::Judge).expect("bundled template")
    }

    /// Substitutes placeholders in a single pass, so text inserted for one
    /// placeholder is never re-expanded.
    pub fn render(&self, vars: &PromptVars<'_>) -> String {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let tail = &rest[start..];
            let (value, len) = [
                ("{answer}", vars.answer),
                ("{feedback}", vars.feedback),
                ("{prior_rationale}", vars.prior_rationale),
            ]
            .iter()
            .find(|(k, _)| tail.starts_with(k))
            .map(|(k, v)| (*v, k.len()))
            .unwrap_or(("{", 1));
            out.push_str(value);
            rest = &tail[len..];
        }
        out.push_str(rest);
        out
    }
}
