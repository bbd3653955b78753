use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    parse_answer_output, parse_classification, render_classify_prompt, render_interpret_prompt, render_question_prompt,
    resolve_name, Classification, Dialogue, EnvironmentContext, ObjectRow, QuestionRecord,
};
use crate::error::{Error, Result};
use crate::model::AnswerLabel;

/// Environment variable holding the bearer token.
pub const TOKEN_ENV: &str = "ACTOWL_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4-0613".into(),
            temperature: 0.0,
            timeout_secs: 60,
        }
    }
}

/// Chat-completion backend. Each capability renders its prompt, sends it as
/// a single user message and parses the first choice.
#[derive(Debug, Clone)]
pub struct LlmDialogue {
    config: LlmConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl LlmDialogue {
    pub fn new(config: LlmConfig, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, token, agent }
    }

    /// Reads the token from [`TOKEN_ENV`].
    pub fn from_env(config: LlmConfig) -> Self {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(config, token)
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.config.temperature,
        })
    }

    /// Sends one prompt and returns the first message content.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(self.request_body(prompt))
            .map_err(|e| Error::Backend {
                message: e.to_string(),
                raw: None,
            })?;
        let status = resp.status();
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Backend {
                message: format!("reading response body: {e}"),
                raw: None,
            })?;
        if !status.is_success() {
            return Err(Error::Backend {
                message: format!("endpoint returned HTTP {status}"),
                raw: Some(raw),
            });
        }
        let body: Value = serde_json::from_str(&raw).map_err(|e| Error::Backend {
            message: format!("response is not JSON: {e}"),
            raw: Some(raw.clone()),
        })?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Backend {
                message: "response has no choices[0].message.content".into(),
                raw: Some(raw),
            })
    }

    /// Completes and parses, asking once more when the first output does not
    /// parse.
    fn complete_parsed<T>(&self, prompt: &str, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        match parse(&self.complete(prompt)?) {
            Err(Error::Parse { .. }) => parse(&self.complete(prompt)?),
            other => other,
        }
    }
}

impl Dialogue for LlmDialogue {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn classify_shared_owned(&self, classes: &[String], context: EnvironmentContext) -> Result<Classification> {
        if classes.is_empty() {
            return Ok(Classification::default());
        }
        let prompt = render_classify_prompt(classes, context);
        self.complete_parsed(&prompt, |raw| parse_classification(raw, classes))
    }

    fn generate_question(&self, target: &ObjectRow, others: &[ObjectRow], object_labels: &[String]) -> Result<QuestionRecord> {
        let prompt = render_question_prompt(target, others, object_labels);
        let text = self.complete(&prompt)?.trim().to_string();
        if text.is_empty() {
            return Err(Error::Generation);
        }
        Ok(QuestionRecord {
            target_object_id: target.object_id,
            question_text: text,
            context_objects: others.to_vec(),
        })
    }

    fn interpret_answer(&self, question: &QuestionRecord, answer_text: &str, responding_user: &str, users: &[String]) -> Result<AnswerLabel> {
        let prompt = render_interpret_prompt(&question.question_text, answer_text, users, responding_user);
        let name = self.complete_parsed(&prompt, parse_answer_output)?;
        resolve_name(&name, users).map_err(|reason| Error::Interpretation {
            raw: answer_text.to_string(),
            reason,
        })
    }

    fn predict_owners(&self, _objects: &[ObjectRow], _users: &[String]) -> Result<Vec<AnswerLabel>> {
        Err(Error::Unsupported {
            backend: "llm",
            what: "owner prediction without the model",
        })
    }
}
