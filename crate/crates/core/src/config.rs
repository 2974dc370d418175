//! The `cot-curate.toml` configuration file.
//!
//! `${VAR}` anywhere in the file is replaced by the environment variable's
//! value before parsing; an unset variable is an error. Secrets never live
//! in the file itself: the provider key and reviewer tokens are named by
//! environment variable (`api_key_env`, `review.tokens_env`). Relative
//! paths are resolved against the directory holding the file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, EvalConfigFile};
use crate::generation::{PromptTemplate, ProviderConfig, Purpose};
use crate::pipeline::{PipelineConfig, Templates, DEFAULT_MAX_REWRITES};

pub const DEFAULT_TOKENS_ENV: &str = "COT_CURATE_REVIEW_TOKENS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub run_id: Option<String>,
    pub store: Option<PathBuf>,
    pub workers: Option<usize>,
    pub max_rewrites: Option<u32>,
    pub provider: Option<ProviderConfig>,
    /// Separate evaluator config file; mutually exclusive with `[eval]`.
    pub eval_file: Option<PathBuf>,
    pub eval: Option<EvalConfigFile>,
    #[serde(default)]
    pub templates: TemplatePaths,
    #[serde(default)]
    pub review: ReviewSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub generate: Option<PathBuf>,
    pub rewrite: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewSettings {
    pub bind: Option<SocketAddr>,
    pub lease_secs: Option<u64>,
    pub tokens_env: Option<String>,
    pub ui_dir: Option<PathBuf>,
}

static ENV_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"));

/// Replaces every `${VAR}` using `lookup`.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let mut missing = None;
    let out = ENV_REF.replace_all(text, |caps: &regex::Captures<'_>| {
        lookup(&caps[1]).unwrap_or_else(|| {
            missing.get_or_insert_with(|| caps[1].to_string());
            String::new()
        })
    });
    match missing {
        Some(var) => Err(Error::Config(format!(
            "environment variable `{var}` is not set"
        ))),
        None => Ok(out.into_owned()),
    }
}

impl AppConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let text = interpolate(text, |v| std::env::var(v).ok())?;
        let mut cfg: AppConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        if cfg.eval.is_some() && cfg.eval_file.is_some() {
            return Err(Error::Config(
                "set either `eval_file` or `[eval]`, not both".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        };
        fix(&mut self.store);
        fix(&mut self.eval_file);
        fix(&mut self.templates.generate);
        fix(&mut self.templates.rewrite);
        fix(&mut self.review.ui_dir);
        if let Some(provider) = &mut self.provider {
            resolve_mock_path(provider, base);
        }
        if let Some(judge) = self.eval.as_mut().and_then(|e| e.judge.as_mut()) {
            resolve_mock_path(judge, base);
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let cfg = match (&self.eval_file, &self.eval) {
            (Some(path), _) => EvalConfig::load(path)?,
            (None, Some(file)) => file.clone().into_config()?,
            (None, None) => EvalConfig::default(),
        };
        Ok(cfg)
    }

    pub fn templates(&self) -> Result<Templates> {
        let generate = match &self.templates.generate {
            Some(p) => PromptTemplate::load(p, Purpose::Generate)?,
            None => PromptTemplate::default_generate(),
        };
        let rewrite = match &self.templates.rewrite {
            Some(p) => PromptTemplate::load(p, Purpose::Rewrite)?,
            None => PromptTemplate::default_rewrite(),
        };
        Ok(Templates { generate, rewrite })
    }

    /// Pipeline settings from the file; `store` and `run_id` must be set
    /// here or by the caller afterwards.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            eval: self.eval_config()?,
            provider: self.provider.clone().unwrap_or_else(ProviderConfig::mock),
            templates: self.templates()?,
            max_rewrites: self.max_rewrites.unwrap_or(DEFAULT_MAX_REWRITES),
            workers: self.workers.unwrap_or(8),
            store_path: self.store.clone().unwrap_or_else(|| PathBuf::from("store")),
            run_id: self.run_id.clone().unwrap_or_else(|| "default".to_string()),
        };
        Ok(cfg)
    }

    pub fn lease(&self) -> Duration {
        self.review
            .lease_secs
            .map(Duration::from_secs)
            .unwrap_or(crate::review::DEFAULT_LEASE)
    }

    pub fn tokens_env(&self) -> &str {
        self.review
            .tokens_env
            .as_deref()
            .unwrap_or(DEFAULT_TOKENS_ENV)
    }
}

fn resolve_mock_path(provider: &mut ProviderConfig, base: &Path) {
    if provider.endpoint.scheme() != "mock" {
        return;
    }
    let path = provider.endpoint.path();
    if path.is_empty() || Path::new(path).is_absolute() {
        return;
    }
    let abs = base.join(path);
    if let Ok(url) = url::Url::parse(&format!("mock:{}", abs.display())) {
        provider.endpoint = url;
    }
}
