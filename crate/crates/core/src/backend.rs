//! Text generators: a chat-completions HTTP client, fixture replay for
//! offline runs, and a scripted generator for tests and planted-rule runs.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{config_err, Error, Result};
use crate::protocol::Prompt;

/// Messages in, text out.
pub trait TextGenerator: Send {
    fn generate(&mut self, prompt: &Prompt, temperature: f64) -> Result<String>;
}

pub const URL_VAR: &str = "MCTR_LLM_URL";
pub const TOKEN_VAR: &str = "MCTR_LLM_TOKEN";

/// OpenAI-compatible `POST {base}/chat/completions` client.
pub struct HttpChatBackend {
    base_url: String,
    token: Option<String>,
    model: String,
    retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(
        base_url: impl Into<String>,
        token: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
        retries: u32,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            model: model.into(),
            retries,
            backoff: Duration::from_millis(200),
            agent,
        }
    }

    /// Reads the base URL and token from the environment.
    pub fn from_env(model: impl Into<String>, timeout: Duration, retries: u32) -> Result<Self> {
        let url = std::env::var(URL_VAR)
            .map_err(|_| config_err(format!("remote backend needs {URL_VAR} to be set")))?;
        let token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
        Ok(Self::new(url, token, model, timeout, retries))
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, String> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(format!("HTTP {status}"));
        }
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

impl TextGenerator for HttpChatBackend {
    fn generate(&mut self, prompt: &Prompt, temperature: f64) -> Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": temperature.max(0.0),
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("chat request attempt {} failed: {e}", attempt + 1);
                    last = e;
                    if attempt < self.retries {
                        thread::sleep(self.backoff * 2u32.pow(attempt.min(6)));
                    }
                }
            }
        }
        Err(Error::Backend(format!(
            "{} attempts failed, last error: {last}",
            self.retries + 1
        )))
    }
}

/// Replays recorded responses (`*.txt`, sorted by file name), cycling.
pub struct FixtureBackend {
    responses: Vec<String>,
    cursor: usize,
}

impl FixtureBackend {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(config_err(format!(
                "fixture directory {} has no .txt responses",
                dir.display()
            )));
        }
        let responses = paths
            .iter()
            .map(fs::read_to_string)
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(FixtureBackend {
            responses,
            cursor: 0,
        })
    }
}

impl TextGenerator for FixtureBackend {
    fn generate(&mut self, _prompt: &Prompt, _temperature: f64) -> Result<String> {
        let text = self.responses[self.cursor % self.responses.len()].clone();
        self.cursor += 1;
        Ok(text)
    }
}

/// Returns `script` entries in order, then `fallback` forever.
pub struct ScriptedBackend {
    script: Vec<String>,
    cursor: usize,
    fallback: String,
}

pub const KEEP_RESPONSE: &str =
    "<meta>No new evidence; the current rules still hold.</meta><keep/>";

impl ScriptedBackend {
    pub fn new(script: Vec<String>) -> Self {
        ScriptedBackend {
            script,
            cursor: 0,
            fallback: KEEP_RESPONSE.to_string(),
        }
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = fallback.into();
        self
    }

    pub fn calls(&self) -> usize {
        self.cursor
    }
}

impl TextGenerator for ScriptedBackend {
    fn generate(&mut self, _prompt: &Prompt, _temperature: f64) -> Result<String> {
        let text = self
            .script
            .get(self.cursor)
            .cloned()
            .unwrap_or_else(|| self.fallback.clone());
        self.cursor += 1;
        Ok(text)
    }
}

/// Always fails; exercises degraded paths.
pub struct FailingBackend;

impl TextGenerator for FailingBackend {
    fn generate(&mut self, _prompt: &Prompt, _temperature: f64) -> Result<String> {
        Err(Error::Backend("backend unavailable".into()))
    }
}
